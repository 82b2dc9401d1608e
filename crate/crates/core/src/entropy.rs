//! Entropy estimators and decomposition diagnostics.
//!
//! Orbit itineraries over a partition become symbol words; plug-in block
//! entropies H_t and their increments estimate the dynamical entropy, the
//! one-step conditional entropy H(g^{-1}P | P) bounds it from above, and
//! the decomposition report splits that conditional entropy into the
//! level-transition term I and the cell-transition terms II_{1,1},
//! II_{1,2}, II_2, each compared against its counting bound.
//!
//! All estimators are plug-in with explicit undersampling flags; biases
//! are documented, not corrected.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{BoxElement, Point};
use crate::linalg::Mat;
use crate::measure::InvariantMeasure;
use crate::par;
use crate::partition::{AdaptivePartition, CellKey, LocateOutcome};
use crate::rng::SeedTree;
use crate::system::SmoothSystem;

/// One itinerary symbol. The truncation and off-net tokens are legal
/// symbols; their mass is reported separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Cell(CellKey),
    Label(u32),
    OffNet(u32),
    Truncated,
}

impl From<LocateOutcome> for Symbol {
    fn from(o: LocateOutcome) -> Symbol {
        match o {
            LocateOutcome::Cell(k) => Symbol::Cell(k),
            LocateOutcome::Truncated => Symbol::Truncated,
            LocateOutcome::OffNet { level } => Symbol::OffNet(level),
        }
    }
}

/// Anything that turns points into symbols: adaptive partitions and the
/// benchmark label partitions.
pub trait Classifier: Sync {
    fn classify(&self, x: &Point) -> Result<Symbol>;
    /// iterate count of the map the partition is adapted to (g = f^m)
    fn step_m(&self) -> usize;
    fn label(&self) -> String;
}

impl Classifier for AdaptivePartition {
    fn classify(&self, x: &Point) -> Result<Symbol> {
        Ok(self.locate(x)?.into())
    }
    fn step_m(&self) -> usize {
        self.params.m as usize
    }
    fn label(&self) -> String {
        format!(
            "adaptive(n={},l1={},l={},m={})",
            self.params.n, self.params.l1, self.params.l, self.params.m
        )
    }
}

/// Coarse fixed partitions with closed-form cells (binary cuts, dyadic
/// intervals, continued-fraction digits, integer parts, quadrants).
#[derive(Debug, Clone)]
pub struct LabelPartition {
    pub name: String,
    pub kind: LabelKind,
}

#[derive(Debug, Clone, Copy)]
pub enum LabelKind {
    BinaryCut { cut: f64 },
    Dyadic { k: u32 },
    /// cell = reciprocal digit floor(1/x), capped
    GaussDigit { cap: u32 },
    /// cell = floor(y), capped
    IntegerPart { cap: u32 },
    Quadrant,
}

impl LabelPartition {
    pub fn alphabet_size(&self) -> usize {
        match self.kind {
            LabelKind::BinaryCut { .. } => 2,
            LabelKind::Dyadic { k } => 1 << k,
            LabelKind::GaussDigit { cap } | LabelKind::IntegerPart { cap } => cap as usize,
            LabelKind::Quadrant => 4,
        }
    }
}

impl Classifier for LabelPartition {
    fn classify(&self, x: &Point) -> Result<Symbol> {
        let sym = match self.kind {
            LabelKind::BinaryCut { cut } => u32::from(x.coords[0] >= cut),
            LabelKind::Dyadic { k } => {
                let cells = (1u32 << k) as f64;
                (x.coords[0] * cells).floor().clamp(0.0, cells - 1.0) as u32
            }
            LabelKind::GaussDigit { cap } => {
                let v = x.coords[0];
                if v <= 0.0 {
                    return Err(Error::OutsideDomain);
                }
                ((1.0 / v).floor() as u32).clamp(1, cap) - 1
            }
            LabelKind::IntegerPart { cap } => {
                (x.coords[0].floor() as u32).clamp(1, cap) - 1
            }
            LabelKind::Quadrant => {
                2 * u32::from(x.coords[0] >= 0.5) + u32::from(x.coords[1] >= 0.5)
            }
        };
        Ok(Symbol::Label(sym))
    }
    fn step_m(&self) -> usize {
        1
    }
    fn label(&self) -> String {
        self.name.clone()
    }
}

/// -sum p ln p over counts (sorted iteration order for determinism).
fn entropy_from_counts<'a, I: Iterator<Item = &'a u64>>(counts: I, total: u64) -> f64 {
    let n = total as f64;
    let terms: Vec<f64> = counts
        .map(|&c| {
            let p = c as f64 / n;
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .collect();
    par::pairwise_sum(&terms)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BlockEntropyRow {
    pub t: usize,
    pub h_t: f64,
    pub h_t_over_t: f64,
    pub increment: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct BlockEntropy {
    pub partition: String,
    pub rows: Vec<BlockEntropyRow>,
    /// last increment H_{t} - H_{t-1} (nats per application of g)
    pub slope: f64,
    pub slope_stderr: f64,
    /// slope divided by the iterate count m (nats per application of f)
    pub per_f_slope: f64,
    pub undersampled: bool,
    pub orbits: usize,
    pub escaped_orbits: usize,
    pub truncated_symbol_fraction: f64,
    pub off_net_symbol_fraction: f64,
}

/// Plug-in block entropies of t-length symbol words over mu-sampled
/// orbits of g = f^m. The reported estimate is the last increment
/// H_t - H_{t-1} (standard plug-in; biased low when undersampled).
pub fn block_entropy(
    sys: &SmoothSystem,
    mu: &InvariantMeasure,
    cls: &dyn Classifier,
    t_max: usize,
    n_orbits: usize,
    tree: &SeedTree,
) -> Result<BlockEntropy> {
    if t_max < 2 {
        return Err(Error::InvalidArgument("t_max must be >= 2".into()));
    }
    let m = cls.step_m();
    let starts = mu.sample(n_orbits, tree.child("block-entropy").root());
    let itineraries: Vec<Vec<Symbol>> = par::map_slice(&starts, |x0| {
        let mut syms = Vec::with_capacity(t_max);
        let mut x = x0.clone();
        for t in 0..t_max {
            match cls.classify(&x) {
                Ok(s) => syms.push(s),
                Err(_) => break,
            }
            if t + 1 < t_max {
                match sys.iterate(&x, m) {
                    Ok(y) => x = y,
                    Err(_) => break,
                }
            }
        }
        syms
    });

    // intern symbols in deterministic (itinerary order) sequence
    let mut intern: BTreeMap<Symbol, u32> = BTreeMap::new();
    for it in &itineraries {
        for s in it {
            let next = intern.len() as u32;
            intern.entry(*s).or_insert(next);
        }
    }
    let coded: Vec<Vec<u32>> = itineraries
        .iter()
        .map(|it| it.iter().map(|s| intern[s]).collect())
        .collect();

    let escaped_orbits = coded.iter().filter(|it| it.len() < t_max).count();
    let mut trunc_syms = 0usize;
    let mut off_syms = 0usize;
    let mut total_syms = 0usize;
    for it in &itineraries {
        for s in it {
            total_syms += 1;
            match s {
                Symbol::Truncated => trunc_syms += 1,
                Symbol::OffNet(_) => off_syms += 1,
                _ => {}
            }
        }
    }

    let h_at = |t: usize, orbit_filter: &dyn Fn(usize) -> bool| -> (f64, u64, usize) {
        let mut counts: HashMap<&[u32], u64> = HashMap::new();
        let mut total = 0u64;
        for (i, it) in coded.iter().enumerate() {
            if it.len() >= t && orbit_filter(i) {
                *counts.entry(&it[..t]).or_default() += 1;
                total += 1;
            }
        }
        let mut sorted: Vec<(&[u32], u64)> = counts.into_iter().collect();
        sorted.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let distinct = sorted.len();
        let h = entropy_from_counts(sorted.iter().map(|(_, c)| c), total.max(1));
        (h, total, distinct)
    };

    let mut rows = Vec::with_capacity(t_max);
    let mut prev = 0.0;
    let mut undersampled = false;
    for t in 1..=t_max {
        let (h, total, distinct) = h_at(t, &|_| true);
        if t == t_max && (total as usize) < 10 * distinct {
            undersampled = true;
        }
        rows.push(BlockEntropyRow {
            t,
            h_t: h,
            h_t_over_t: h / t as f64,
            increment: h - prev,
        });
        prev = h;
    }
    let slope = rows.last().unwrap().increment;

    // block stderr over eight orbit groups
    let blocks = 8usize;
    let mut block_slopes = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let filt = |i: usize| i % blocks == b;
        let (h_full, _, _) = h_at(t_max, &filt);
        let (h_prev, _, _) = h_at(t_max - 1, &filt);
        block_slopes.push(h_full - h_prev);
    }
    let (_, slope_stderr) = par::mean_stderr(&block_slopes);

    Ok(BlockEntropy {
        partition: cls.label(),
        rows,
        slope,
        slope_stderr,
        per_f_slope: slope / m as f64,
        undersampled,
        orbits: n_orbits,
        escaped_orbits,
        truncated_symbol_fraction: trunc_syms as f64 / total_syms.max(1) as f64,
        off_net_symbol_fraction: off_syms as f64 / total_syms.max(1) as f64,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConditionalEntropy {
    pub value: f64,
    pub stderr: f64,
    pub per_f_value: f64,
    pub pairs: usize,
    pub escaped: usize,
    /// conditioning cells observed only once (their plug-in contribution
    /// is zero; a crude undersampling gauge)
    pub singleton_conditions: usize,
    pub undersampled: bool,
}

/// Plug-in estimate of H(symbol of g(x) | symbol of x) from paired
/// mu-samples.
pub fn conditional_entropy(
    sys: &SmoothSystem,
    mu: &InvariantMeasure,
    cls: &dyn Classifier,
    n_pairs: usize,
    tree: &SeedTree,
) -> Result<ConditionalEntropy> {
    let m = cls.step_m();
    let starts = mu.sample(n_pairs, tree.child("conditional-entropy").root());
    let pairs: Vec<Option<(Symbol, Symbol)>> = par::map_slice(&starts, |x| {
        let a = cls.classify(x).ok()?;
        let y = sys.iterate(x, m).ok()?;
        let b = cls.classify(&y).ok()?;
        Some((a, b))
    });
    let kept: Vec<(Symbol, Symbol)> = pairs.iter().flatten().copied().collect();
    let escaped = n_pairs - kept.len();
    if kept.is_empty() {
        return Err(Error::EscapeRate { escaped, total: n_pairs });
    }

    let h_of = |items: &[(Symbol, Symbol)]| -> (f64, usize) {
        let mut joint: BTreeMap<(Symbol, Symbol), u64> = BTreeMap::new();
        let mut marginal: BTreeMap<Symbol, u64> = BTreeMap::new();
        for (a, b) in items {
            *joint.entry((*a, *b)).or_default() += 1;
            *marginal.entry(*a).or_default() += 1;
        }
        let n = items.len() as u64;
        let hj = entropy_from_counts(joint.values(), n);
        let hm = entropy_from_counts(marginal.values(), n);
        let singletons = marginal.values().filter(|c| **c == 1).count();
        ((hj - hm).max(0.0), singletons)
    };

    let (value, singleton_conditions) = h_of(&kept);
    let blocks = 8usize;
    let mut block_vals = Vec::with_capacity(blocks);
    for b in 0..blocks {
        let sub: Vec<(Symbol, Symbol)> = kept
            .iter()
            .enumerate()
            .filter(|(i, _)| i % blocks == b)
            .map(|(_, p)| *p)
            .collect();
        if !sub.is_empty() {
            block_vals.push(h_of(&sub).0);
        }
    }
    let (_, stderr) = par::mean_stderr(&block_vals);
    let undersampled = singleton_conditions * 2 > kept.len();

    Ok(ConditionalEntropy {
        value,
        stderr,
        per_f_value: value / m as f64,
        pairs: kept.len(),
        escaped,
        singleton_conditions,
        undersampled,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TermEstimate {
    pub value: f64,
    pub stderr: f64,
    pub bound: f64,
    pub exceeds_bound: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DecompositionReport {
    pub term_i: TermEstimate,
    pub term_ii_11: TermEstimate,
    pub term_ii_12: TermEstimate,
    pub term_ii_2: TermEstimate,
    /// empirical level-jump constant: max over cells of
    /// ceil((max s' - s_B) / m), at least 1
    pub c1_empirical: u32,
    pub c2: f64,
    pub c3: f64,
    pub c_box: f64,
    /// 99.9th percentile of s_B over samples (the tail-cut surrogate)
    pub level_cut: u32,
    /// minimal refinement l the tail cut demands, and whether the built
    /// partition satisfies it
    pub l_required: Option<u32>,
    pub l_admissible: bool,
    /// the base-level tail condition sum_{s>n} mu(E_s) s l1 d ln2 < 1
    pub n_tail_sum: f64,
    pub n_admissible: bool,
    pub exterior_integral: f64,
    pub exterior_integral_stderr: f64,
    pub samples_used: usize,
    pub excluded: usize,
    pub singleton_conditions: usize,
}

struct TransitionRecord {
    f_sym: Symbol,
    f_level: u32,
    image_level: u32,
    image_sym: Symbol,
}

fn decomposition_terms(records: &[&TransitionRecord], n: u32) -> (f64, f64, f64, f64) {
    let total = records.len() as f64;
    if records.is_empty() {
        return (0.0, 0.0, 0.0, 0.0);
    }
    let mut f_counts: BTreeMap<Symbol, u64> = BTreeMap::new();
    let mut fs_counts: BTreeMap<(Symbol, u32), u64> = BTreeMap::new();
    let mut fsb_counts: BTreeMap<(Symbol, u32, Symbol), u64> = BTreeMap::new();
    let mut f_levels: BTreeMap<Symbol, u32> = BTreeMap::new();
    for r in records {
        *f_counts.entry(r.f_sym).or_default() += 1;
        *fs_counts.entry((r.f_sym, r.image_level)).or_default() += 1;
        *fsb_counts.entry((r.f_sym, r.image_level, r.image_sym)).or_default() += 1;
        f_levels.insert(r.f_sym, r.f_level);
    }

    let mut i_terms = Vec::with_capacity(fs_counts.len());
    for ((f, _s), c) in &fs_counts {
        let cf = f_counts[f] as f64;
        let p = *c as f64 / total;
        i_terms.push(-p * (*c as f64 / cf).ln());
    }
    let term_i = par::pairwise_sum(&i_terms);

    let mut ii11 = Vec::new();
    let mut ii12 = Vec::new();
    let mut ii2 = Vec::new();
    for ((f, s, _b), c) in &fsb_counts {
        let cfs = fs_counts[&(*f, *s)] as f64;
        let p = *c as f64 / total;
        let term = -p * (*c as f64 / cfs).ln();
        if *s > n {
            ii2.push(term);
        } else if f_levels[f] == n {
            ii11.push(term);
        } else {
            ii12.push(term);
        }
    }
    (
        term_i,
        par::pairwise_sum(&ii11),
        par::pairwise_sum(&ii12),
        par::pairwise_sum(&ii2),
    )
}

/// Empirical decomposition of H(g^{-1}P | P) into the level-transition
/// term I and the cell-transition terms, each with its counting bound.
pub fn decomposition_report(
    mu: &InvariantMeasure,
    part: &AdaptivePartition,
    n_samples: usize,
    tree: &SeedTree,
) -> Result<DecompositionReport> {
    let sys = part.system.as_ref();
    let params = &part.params;
    let m = params.m as usize;
    let n = params.n;
    let d = part.dim();

    let starts = mu.sample(n_samples, tree.child("decomposition").root());
    let raw: Vec<Option<(TransitionRecord, f64)>> = par::map_slice(&starts, |x| {
        let f_loc = part.locate(x).ok()?;
        let (f_sym, f_level) = match f_loc {
            LocateOutcome::Cell(k) => (Symbol::Cell(k), k.s),
            _ => return None,
        };
        let y = sys.iterate(x, m).ok()?;
        let img = part.locate(&y).ok()?;
        let (image_sym, image_level) = match img {
            LocateOutcome::Cell(k) => (Symbol::Cell(k), k.s),
            LocateOutcome::Truncated => (Symbol::Truncated, params.s_max + 1),
            LocateOutcome::OffNet { level } => (Symbol::OffNet(level), level),
        };
        let ext = sys.exterior_log_norm(x, m).ok()?;
        Some((TransitionRecord { f_sym, f_level, image_level, image_sym }, ext))
    });

    let kept: Vec<&(TransitionRecord, f64)> = raw.iter().flatten().collect();
    let excluded = n_samples - kept.len();
    if kept.is_empty() {
        return Err(Error::EscapeRate { escaped: excluded, total: n_samples });
    }
    let records: Vec<&TransitionRecord> = kept.iter().map(|(r, _)| r).collect();
    let exts: Vec<f64> = kept.iter().map(|(_, e)| *e).collect();
    let (ext_mean, ext_se) = par::mean_stderr(&exts);

    // per-cell image-level statistics: s_B and the level jump
    let mut s_b: BTreeMap<Symbol, u32> = BTreeMap::new();
    let mut s_hi: BTreeMap<Symbol, u32> = BTreeMap::new();
    for r in &records {
        s_b.entry(r.f_sym)
            .and_modify(|v| *v = (*v).min(r.image_level))
            .or_insert(r.image_level);
        s_hi.entry(r.f_sym)
            .and_modify(|v| *v = (*v).max(r.image_level))
            .or_insert(r.image_level);
    }
    let max_jump = s_b
        .iter()
        .map(|(f, lo)| s_hi[f].saturating_sub(*lo))
        .max()
        .unwrap_or(0);
    let c1 = ((max_jump as f64 / m as f64).ceil() as u32).max(1);

    // tail-cut surrogate: 99.9th percentile of per-sample s_B
    let mut sb_samples: Vec<u32> = records.iter().map(|r| s_b[&r.f_sym]).collect();
    sb_samples.sort_unstable();
    let level_cut = sb_samples[((sb_samples.len() - 1) as f64 * 0.999) as usize];

    // refinement demanded by the tail cut, in log2 space
    let l_required = required_refinement(m as u32, level_cut, &params.distortion);
    let l_admissible = l_required.map(|lr| params.l >= lr).unwrap_or(false);

    // base-level tail condition
    let tail_terms: Vec<f64> = part
        .level_distribution()
        .iter()
        .filter(|(s, _)| **s > n)
        .map(|(s, mass)| {
            mass * (*s as f64) * params.l1 as f64 * d as f64 * std::f64::consts::LN_2
        })
        .collect();
    let n_tail_sum = par::pairwise_sum(&tail_terms);
    let n_admissible = n_tail_sum < 1.0;

    let (ti, t11, t12, t2) = decomposition_terms(&records, n);

    // block stderrs
    let blocks = 8usize;
    let mut bi = Vec::new();
    let mut b11 = Vec::new();
    let mut b12 = Vec::new();
    let mut b2 = Vec::new();
    for b in 0..blocks {
        let sub: Vec<&TransitionRecord> = records
            .iter()
            .enumerate()
            .filter(|(i, _)| i % blocks == b)
            .map(|(_, r)| *r)
            .collect();
        if sub.is_empty() {
            continue;
        }
        let (x1, x2, x3, x4) = decomposition_terms(&sub, n);
        bi.push(x1);
        b11.push(x2);
        b12.push(x3);
        b2.push(x4);
    }
    let se = |v: &[f64]| par::mean_stderr(v).1;
    let (si, s11, s12, s2) = (se(&bi), se(&b11), se(&b12), se(&b2));

    let c2 = params.c2(d);
    let c3 = params.c3(d);
    let i_bound = 1.0 + (c1 as f64 * m as f64 + 1.0) * (-1.0f64).exp();
    let ii_bound = c2.ln() + 4.0;
    let ii11_bound = c3.ln() + ext_mean;

    let mk = |value: f64, stderr: f64, bound: f64| TermEstimate {
        value,
        stderr,
        bound,
        exceeds_bound: value > bound + 3.0 * stderr,
    };

    let mut singleton_conditions = 0usize;
    {
        let mut fs_counts: BTreeMap<(Symbol, u32), u64> = BTreeMap::new();
        for r in &records {
            *fs_counts.entry((r.f_sym, r.image_level)).or_default() += 1;
        }
        singleton_conditions = fs_counts.values().filter(|c| **c == 1).count().max(singleton_conditions);
    }

    Ok(DecompositionReport {
        term_i: mk(ti, si, i_bound),
        term_ii_11: mk(t11, s11, ii11_bound),
        term_ii_12: mk(t12, s12, ii_bound),
        term_ii_2: mk(t2, s2, ii_bound),
        c1_empirical: c1,
        c2,
        c3,
        c_box: params.c_box(d),
        level_cut,
        l_required,
        l_admissible,
        n_tail_sum,
        n_admissible,
        exterior_integral: ext_mean,
        exterior_integral_stderr: ext_se,
        samples_used: records.len(),
        excluded,
        singleton_conditions,
    })
}

/// Minimal refinement l satisfying, for the tail cut L:
/// 2^{-(l-2-m(L+1))} < min{1 - 2^{-1/m}, 2^{-1-1/m}} / 2^L and
/// C 2^{-alpha(l-2-m(L+1))} 2^{aL} < 2^{1/m} - 1.
pub fn required_refinement(
    m: u32,
    level_cut: u32,
    dist: &crate::system::DistortionParams,
) -> Option<u32> {
    let mf = m as f64;
    let lf = level_cut as f64;
    let gap1 = (1.0 - (-1.0 / mf).exp2()).min((-1.0 - 1.0 / mf).exp2());
    if !(gap1 > 0.0) {
        return None;
    }
    // t = l - 2 - m(L+1); constraint 1: t > L - log2(gap1)
    let t1 = lf - gap1.log2();
    // constraint 2: t > (log2 C + a L - log2(2^{1/m}-1)) / alpha
    let rhs = ((1.0 / mf).exp2() - 1.0).log2();
    let t2 = (dist.big_c.log2() + dist.a * lf - rhs) / dist.alpha;
    let t = t1.max(t2);
    let l = (2.0 + mf * (lf + 1.0) + t).floor() + 1.0;
    if l.is_finite() && l >= 0.0 && l <= u32::MAX as f64 {
        Some(l as u32)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct BoxCount {
    pub count: u64,
    pub exact: bool,
}

/// Number of grid cells of the beta-mesh intersected by the linear image
/// A(box). Exact (separating-axis test) for d <= 3; a refined sampling
/// lower bound, labelled approximate, beyond that.
pub fn box_intersection_count(a: &Mat, bx: &BoxElement, grid_beta: f64) -> Result<BoxCount> {
    if !(grid_beta > 0.0) {
        return Err(Error::InvalidArgument("grid_beta must be positive".into()));
    }
    let d = bx.dim();
    // image center and half-edge vectors, in units of the grid
    let mut center = vec![0.0; d];
    for i in 0..d {
        let mut w = bx.anchor.coords[i];
        for j in 0..d {
            w += bx.frame[(i, j)] * bx.center_offset[j];
        }
        center[i] = w;
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|i| (0..d).map(|j| a[(i, j)] * v[j]).sum::<f64>() / grid_beta)
            .collect()
    };
    let img_center = apply(&center);
    let mut edges: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let col: Vec<f64> = (0..d).map(|i| bx.frame[(i, j)] * bx.half_widths[j]).collect();
        edges.push(apply(&col));
    }

    if d > 3 {
        return Ok(sampled_box_count(&img_center, &edges, d));
    }

    // bounding box in grid units
    let mut lo = img_center.clone();
    let mut hi = img_center.clone();
    for e in &edges {
        for i in 0..d {
            lo[i] -= e[i].abs();
            hi[i] += e[i].abs();
        }
    }
    let mut q_lo = vec![0i64; d];
    let mut q_hi = vec![0i64; d];
    let mut candidates: f64 = 1.0;
    for i in 0..d {
        q_lo[i] = lo[i].floor() as i64;
        q_hi[i] = hi[i].ceil() as i64;
        candidates *= (q_hi[i] - q_lo[i] + 1) as f64;
    }
    if candidates > 2e7 {
        return Err(Error::InvalidArgument(format!(
            "grid candidate count {candidates:.1e} too large"
        )));
    }

    let mut count = 0u64;
    let mut q = q_lo.clone();
    loop {
        let cell_lo: Vec<f64> = q.iter().map(|v| *v as f64).collect();
        if parallelepiped_cell_overlap(&img_center, &edges, &cell_lo) {
            count += 1;
        }
        let mut i = 0;
        loop {
            if i == d {
                return Ok(BoxCount { count, exact: true });
            }
            q[i] += 1;
            if q[i] <= q_hi[i] {
                break;
            }
            q[i] = q_lo[i];
            i += 1;
        }
    }
}

fn cross3(a: &[f64], b: &[f64]) -> Vec<f64> {
    vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Separating-axis overlap test between the parallelepiped
/// {center + sum t_i e_i : |t_i| <= 1} and the unit cell [lo, lo+1]^d,
/// open-interior semantics (shared faces do not count).
fn parallelepiped_cell_overlap(center: &[f64], edges: &[Vec<f64>], cell_lo: &[f64]) -> bool {
    let d = center.len();
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        axes.push(e);
    }
    match d {
        1 => {}
        2 => {
            for e in edges {
                axes.push(vec![-e[1], e[0]]);
            }
        }
        3 => {
            axes.push(cross3(&edges[1], &edges[2]));
            axes.push(cross3(&edges[2], &edges[0]));
            axes.push(cross3(&edges[0], &edges[1]));
            for e in edges {
                for i in 0..3 {
                    let mut std = vec![0.0; 3];
                    std[i] = 1.0;
                    axes.push(cross3(e, &std));
                }
            }
        }
        _ => unreachable!(),
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for axis in &axes {
        let norm2 = dot(axis, axis);
        if norm2 < 1e-300 {
            continue;
        }
        // parallelepiped projection
        let pc = dot(center, axis);
        let pr: f64 = edges.iter().map(|e| dot(e, axis).abs()).sum();
        // cell projection
        let mut c_lo = 0.0;
        let mut c_hi = 0.0;
        for i in 0..center.len() {
            let a0 = axis[i] * cell_lo[i];
            let a1 = axis[i] * (cell_lo[i] + 1.0);
            c_lo += a0.min(a1);
            c_hi += a0.max(a1);
        }
        let p_lo = pc - pr;
        let p_hi = pc + pr;
        let degenerate = pr == 0.0;
        if degenerate {
            // flat image: closed-overlap on this axis
            if p_hi < c_lo || p_lo > c_hi {
                return false;
            }
        } else if p_hi <= c_lo || p_lo >= c_hi {
            return false;
        }
    }
    true
}

fn sampled_box_count(center: &[f64], edges: &[Vec<f64>], d: usize) -> BoxCount {
    let mut cells: std::collections::HashSet<Vec<i64>> = std::collections::HashSet::new();
    let mut prev = 0usize;
    for k in [3usize, 5, 9, 17] {
        let mut idx = vec![0usize; d];
        loop {
            let mut w = center.to_vec();
            for (j, i) in idx.iter().enumerate() {
                let t = -1.0 + 2.0 * (*i as f64) / ((k - 1) as f64);
                for (wc, ec) in w.iter_mut().zip(&edges[j]) {
                    *wc += t * ec;
                }
            }
            cells.insert(w.iter().map(|c| c.floor() as i64).collect());
            let mut i = 0;
            loop {
                if i == d {
                    break;
                }
                idx[i] += 1;
                if idx[i] < k {
                    break;
                }
                idx[i] = 0;
                i += 1;
            }
            if idx.iter().all(|v| *v == 0) {
                break;
            }
        }
        if cells.len() == prev {
            break;
        }
        prev = cells.len();
    }
    BoxCount { count: cells.len() as u64, exact: false }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReachReport {
    pub cell: CellKey,
    pub probes_kept: usize,
    pub probes_escaped: usize,
    pub distinct_cells: u64,
    pub bound: f64,
    pub exterior_norm_at_center: f64,
    pub violation: bool,
}

/// Probe a cell with uniform points, push them through g, and count the
/// distinct image cells (a lower bound on the true reachable count),
/// compared against C3 ‖(D_x g)^∧‖ at the cell center.
pub fn count_reachable_cells(
    part: &AdaptivePartition,
    cell: CellKey,
    n_probe: usize,
    tree: &SeedTree,
) -> Result<ReachReport> {
    let sys = part.system.as_ref();
    let params = &part.params;
    let d = part.dim();
    let net = part
        .levels
        .get(&cell.s)
        .ok_or_else(|| Error::InvalidArgument(format!("no level {} in partition", cell.s)))?;
    let anchor = net
        .anchors
        .get(cell.anchor as usize)
        .ok_or_else(|| Error::InvalidArgument("anchor out of range".into()))?;
    let l = params.l;
    let sub_half = net.eps / (1u64 << l) as f64;
    let ks = geometry_multi_index(cell.sub, l, d);
    let center = Point::new(
        (0..d)
            .map(|i| anchor.coords[i] + ks[i] as f64 * sub_half)
            .collect(),
    );

    let mut rng = tree.child("reach").stream(&format!("{}-{}", cell.s, cell.anchor), cell.sub as u64);
    let mut kept = 0usize;
    let mut escaped = 0usize;
    let mut hit: std::collections::BTreeSet<Symbol> = std::collections::BTreeSet::new();
    for _ in 0..n_probe {
        let p = Point::new(
            (0..d)
                .map(|i| center.coords[i] + sub_half * rng.gen_range(-1.0..1.0))
                .collect(),
        );
        match part.locate(&p) {
            Ok(LocateOutcome::Cell(k)) if k == cell => {}
            _ => continue,
        }
        match sys.iterate(&p, params.m as usize) {
            Err(_) => {
                escaped += 1;
                continue;
            }
            Ok(y) => match part.locate(&y) {
                Err(_) => {
                    escaped += 1;
                }
                Ok(out) => {
                    kept += 1;
                    hit.insert(out.into());
                }
            },
        }
    }

    let ext = sys
        .exterior_log_norm(&center, params.m as usize)
        .unwrap_or(0.0)
        .exp();
    let bound = params.c3(d) * ext;
    let distinct = hit.len() as u64;
    Ok(ReachReport {
        cell,
        probes_kept: kept,
        probes_escaped: escaped,
        distinct_cells: distinct,
        bound,
        exterior_norm_at_center: ext,
        violation: (distinct as f64) > bound,
    })
}

fn geometry_multi_index(sub: u128, l: u32, d: usize) -> Vec<i64> {
    if l == 0 {
        return vec![0; d];
    }
    crate::geometry::subcell_multi_index(sub, l, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;
    use std::sync::Arc;

    #[test]
    fn block_entropy_doubling_dyadic() {
        let sys = registry::system("doubling").unwrap();
        let mu = registry::measure("uniform01").unwrap();
        let cls = LabelPartition { name: "dyadic2".into(), kind: LabelKind::BinaryCut { cut: 0.5 } };
        let tree = SeedTree::new(100);
        let be = block_entropy(&sys, &mu, &cls, 8, 20_000, &tree).unwrap();
        // exact word counts are uniform over 2^t words: slope = ln 2
        assert!(
            (be.slope - 2f64.ln()).abs() < 0.01 * 2f64.ln(),
            "slope {} expect {}",
            be.slope,
            2f64.ln()
        );
        for row in &be.rows {
            assert!((row.h_t - row.t as f64 * 2f64.ln()).abs() < 0.05);
        }
        assert!(!be.undersampled);
    }

    #[test]
    fn block_entropy_degenerate_cases() {
        let id = registry::identity_system(1);
        let mu = registry::measure("uniform01").unwrap();
        let tree = SeedTree::new(5);
        let cls = LabelPartition { name: "dyadic8".into(), kind: LabelKind::Dyadic { k: 3 } };
        let be = block_entropy(&id, &mu, &cls, 5, 2_000, &tree).unwrap();
        // identity: H_t constant, slope 0
        assert!(be.slope.abs() < 1e-9, "slope {}", be.slope);

        // single-cell partition: H_t = 0 for all t
        let sys = registry::system("doubling").unwrap();
        let one = LabelPartition { name: "one".into(), kind: LabelKind::Dyadic { k: 0 } };
        let be = block_entropy(&sys, &mu, &one, 5, 500, &tree).unwrap();
        for row in &be.rows {
            assert_eq!(row.h_t, 0.0);
        }
    }

    #[test]
    fn conditional_entropy_examples() {
        let mu = registry::measure("uniform01").unwrap();
        let tree = SeedTree::new(42);
        let cls = LabelPartition { name: "dyadic2".into(), kind: LabelKind::BinaryCut { cut: 0.5 } };

        // identity: symbol determines symbol
        let id = registry::identity_system(1);
        let ce = conditional_entropy(&id, &mu, &cls, 4_000, &tree).unwrap();
        assert_eq!(ce.value, 0.0);

        // doubling: transition row (1/2, 1/2) from each cell
        let sys = registry::system("doubling").unwrap();
        let ce = conditional_entropy(&sys, &mu, &cls, 30_000, &tree).unwrap();
        assert!(
            (ce.value - 2f64.ln()).abs() < 0.02 * 2f64.ln(),
            "conditional {} expect {}",
            ce.value,
            2f64.ln()
        );

        // chain direction: conditional bounds the block slope from above
        let be = block_entropy(&sys, &mu, &cls, 6, 20_000, &tree).unwrap();
        assert!(ce.value >= be.slope - 3.0 * (ce.stderr + be.slope_stderr) - 1e-9);
    }

    #[test]
    fn box_count_examples() {
        let unit = BoxElement {
            anchor: Point::two(0.5, 0.5),
            frame: Mat::identity(2, 2),
            center_offset: vec![0.0, 0.0],
            half_widths: vec![0.5, 0.5],
            level: 0,
            net_index: 0,
            cell_index: None,
        };
        let id = Mat::identity(2, 2);
        let c = box_intersection_count(&id, &unit, 1.0).unwrap();
        assert!(c.exact);
        assert_eq!(c.count, 1);

        let stretch = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let c = box_intersection_count(&stretch, &unit, 1.0).unwrap();
        assert_eq!(c.count, 3);
    }

    #[test]
    fn box_count_respects_side_length_bound() {
        use rand::Rng;
        let mut rng = SeedTree::new(7).stream("boxes", 0);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let anchor = Point::two(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let frame = Mat::from_row_slice(
                2,
                2,
                &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
            );
            let bx = BoxElement {
                anchor,
                frame,
                center_offset: vec![rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)],
                half_widths: vec![rng.gen_range(0.05..2.0), rng.gen_range(0.05..2.0)],
                level: 0,
                net_index: 0,
                cell_index: None,
            };
            let a = Mat::from_row_slice(
                2,
                2,
                &[
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ],
            );
            let count = match box_intersection_count(&a, &bx, 1.0) {
                Ok(c) => c.count,
                Err(_) => continue,
            };
            // image side lengths
            let mut bound = 1.0;
            for j in 0..2 {
                let ex: f64 = (0..2)
                    .map(|i| {
                        (0..2)
                            .map(|k| a[(i, k)] * bx.frame[(k, j)])
                            .sum::<f64>()
                            .powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
                    * 2.0
                    * bx.half_widths[j];
                bound *= ex.max(1.0);
            }
            worst = worst.max(count as f64 / bound);
        }
        // fitted constant stays below the default c = (4 sqrt d)^d = 32
        assert!(worst <= 32.0, "empirical c {worst}");
        assert!(worst > 0.0);
    }

    #[test]
    fn decomposition_single_level_terms_vanish() {
        // a rotation on a boundaryless chart grades every point (and
        // every image) into the base level: no level transitions, so
        // II_2 = II_12 = 0 and I = 0
        let sys = Arc::new(registry::rotation_system(0.3819660112501051));
        let profile = Arc::new(crate::geometry::RegularityProfile::trivial(1.5));
        let mu = registry::measure("uniform01").unwrap();
        let params = crate::partition::LevelParams {
            m: 1,
            n: 1,
            l1: 3,
            l: 0,
            b: 1.5,
            distortion: crate::system::DistortionParams { alpha: 0.9, big_c: 1.1, a: 1.1 },
            s_max: 20,
            c01: None,
            c_box: None,
        };
        let tree = SeedTree::new(50);
        let samples = mu.sample(3_000, tree.child("partition-build").root());
        let part = AdaptivePartition::build_from_samples(sys, profile, params, samples, 3_000)
            .unwrap();
        let rep = decomposition_report(&mu, &part, 3_000, &tree).unwrap();
        assert_eq!(rep.term_i.value, 0.0);
        assert_eq!(rep.term_ii_2.value, 0.0);
        assert_eq!(rep.term_ii_12.value, 0.0);
        assert!(!rep.term_ii_11.exceeds_bound);
        assert!(rep.excluded < 100, "excluded {}", rep.excluded);
    }

    #[test]
    fn reach_counts_identity_and_doubling() {
        let tree = SeedTree::new(61);
        let mu = registry::measure("uniform01").unwrap();

        let sys = Arc::new(registry::system("doubling").unwrap());
        let profile = Arc::new(registry::profile("doubling").unwrap());
        let params = crate::partition::LevelParams {
            m: 1,
            n: 2,
            l1: 5,
            l: 1,
            b: 1.5,
            distortion: crate::system::DistortionParams { alpha: 0.9, big_c: 1.1, a: 1.1 },
            s_max: 40,
            c01: None,
            c_box: None,
        };
        let part =
            AdaptivePartition::build(sys, profile, &mu, params, 5_000, &tree).unwrap();
        let keys: Vec<CellKey> = part.cell_counts.keys().copied().take(40).collect();
        for key in keys {
            let rep = count_reachable_cells(&part, key, 400, &tree).unwrap();
            assert!(!rep.violation, "cell {key:?}: {} > {}", rep.distinct_cells, rep.bound);
            // a doubling-map cell stretches by 2: few image cells
            assert!(rep.distinct_cells <= 8);
        }
    }
}
