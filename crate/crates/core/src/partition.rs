//! Adaptive box partitions.
//!
//! Points are graded into regularity levels by their m-step orbit
//! products: level s collects the points whose products of starred
//! derivative norms, d* gauges, regular radii, and tankages all stay
//! within 2^{±s}. Each occupied level gets a greedy eps_s-net over the
//! samples (eps_s = 1/(sqrt(d) 2^{s l1})), cubes around the net anchors,
//! a 2^{l d} dyadic subdivision of each cube, and a first-hit
//! disjointification in construction order: levels ascending, net index
//! ascending, subcell index ascending.
//!
//! Level sets are implicit (membership is computed pointwise from orbit
//! products); the partition exists on mu-samples plus query points, and
//! levels beyond the truncation level s_max are reported as a truncation
//! symbol with their sampled mass.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{self, ChartDomain, Point, RegularityProfile};
use crate::linalg;
use crate::par;
use crate::rng::SeedTree;
use crate::system::{DistortionParams, SmoothSystem};

const MAX_DIM: usize = 8;
/// Below this fraction of the coordinate scale no two distinct f64 points
/// are eps-separated; nets degenerate to exact-bit dedup.
const DEGENERATE_EPS_FACTOR: f64 = 1e-14;

/// Scale and refinement parameters of one partition.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LevelParams {
    /// iterate count; the partition is adapted to g = f^m
    pub m: u32,
    /// base regularity level
    pub n: u32,
    /// scale exponent of the eps schedule
    pub l1: u32,
    /// dyadic refinement of each box
    pub l: u32,
    /// chart regularity constant
    pub b: f64,
    pub distortion: DistortionParams,
    /// computational truncation level
    pub s_max: u32,
    /// packing constant override; default (2 ceil(b sqrt d) + 1)^d
    pub c01: Option<f64>,
    /// grid-box counting constant override; default (4 sqrt d)^d
    pub c_box: Option<f64>,
}

impl LevelParams {
    pub fn eps(&self, s: u32, d: usize) -> f64 {
        (-(s as f64) * self.l1 as f64).exp2() / (d as f64).sqrt()
    }

    pub fn c01(&self, d: usize) -> f64 {
        self.c01.unwrap_or_else(|| geometry::default_c01(self.b, d))
    }

    /// C0 = C01 * ceil(4 sqrt d)^d, the per-level cell-count constant.
    pub fn c0(&self, d: usize) -> f64 {
        self.c01(d) * (4.0 * (d as f64).sqrt()).ceil().powi(d as i32)
    }

    /// log of the per-level cell cap C0 * 2^{s(1 + l1 d) + l d} (nats).
    pub fn log_cell_cap(&self, s: u32, d: usize) -> f64 {
        self.c0(d).ln()
            + (s as f64 * (1.0 + self.l1 as f64 * d as f64) + self.l as f64 * d as f64)
                * std::f64::consts::LN_2
    }

    /// C2 = C0 (ceil(4 b sqrt d) + 2)^d, the cross-level counting constant.
    pub fn c2(&self, d: usize) -> f64 {
        self.c0(d) * ((4.0 * self.b * (d as f64).sqrt()).ceil() + 2.0).powi(d as i32)
    }

    /// Grid-box counting constant c; default (4 sqrt d)^d.
    pub fn c_box(&self, d: usize) -> f64 {
        self.c_box.unwrap_or_else(|| (4.0 * (d as f64).sqrt()).powi(d as i32))
    }

    /// C3 = c b^2 (ceil(4 sqrt d) + 2)^d (4 ceil(b d))^d.
    pub fn c3(&self, d: usize) -> f64 {
        self.c_box(d)
            * self.b
            * self.b
            * ((4.0 * (d as f64).sqrt()).ceil() + 2.0).powi(d as i32)
            * (4.0 * (self.b * d as f64).ceil()).powi(d as i32)
    }

    /// Maximum cube overlap count (4 ceil(b d))^d.
    pub fn overlap_cap(&self, d: usize) -> f64 {
        (4.0 * (self.b * d as f64).ceil()).powi(d as i32)
    }

    pub fn validate(&self, d: usize, n_check: u32) -> Result<()> {
        self.distortion.validate()?;
        if self.b < 1.0 {
            return Err(Error::InvalidArgument("b must be >= 1".into()));
        }
        if self.m < 1 || self.n < 1 || self.s_max < self.n {
            return Err(Error::InvalidArgument("need m >= 1, n >= 1, s_max >= n".into()));
        }
        if let Some((c, n)) = first_l1_violation(self.l1, self.m, d, &self.distortion, n_check) {
            return Err(Error::InvalidArgument(format!(
                "l1 = {} violates scale constraint {c} at n = {n}",
                self.l1
            )));
        }
        Ok(())
    }
}

/// The three scale constraints at regularity level n, in log2 space:
/// (1) l1 > a, (2) n(l1 - 2m) > n + 1 + log2 sqrt(d),
/// (3) log2 C - alpha n (l1 - 2m) + a n < log2(2^{1/m} - 1).
/// Returns the first violated constraint number, if any.
pub fn l1_violation_at(
    l1: u32,
    m: u32,
    d: usize,
    dist: &DistortionParams,
    n: u32,
) -> Option<u8> {
    let l1f = l1 as f64;
    let mf = m as f64;
    let nf = n as f64;
    if !(l1f > dist.a) {
        return Some(1);
    }
    let sqrt_d_log2 = 0.5 * (d as f64).log2();
    if !(nf * (l1f - 2.0 * mf) > nf + 1.0 + sqrt_d_log2) {
        return Some(2);
    }
    let rhs = ((1.0f64 / mf).exp2() - 1.0).log2();
    let lhs = dist.big_c.log2() - dist.alpha * nf * (l1f - 2.0 * mf) + dist.a * nf;
    if !(lhs < rhs) {
        return Some(3);
    }
    None
}

/// First (constraint, n) violated over n = 1..=n_check, or None.
pub fn first_l1_violation(
    l1: u32,
    m: u32,
    d: usize,
    dist: &DistortionParams,
    n_check: u32,
) -> Option<(u8, u32)> {
    for n in 1..=n_check {
        if let Some(c) = l1_violation_at(l1, m, d, dist, n) {
            return Some((c, n));
        }
    }
    None
}

/// Exact all-n verdict: both n-dependent constraints are linear in n in
/// log2 space, so a sign condition on the coefficient plus the n = 1
/// check decides every n at once.
pub fn l1_holds_for_all_n(l1: u32, m: u32, d: usize, dist: &DistortionParams) -> bool {
    let l1f = l1 as f64;
    let mf = m as f64;
    if !(l1f > dist.a) {
        return false;
    }
    // constraint 2: n (l1 - 2m - 1) > 1 + log2 sqrt(d)
    let coeff2 = l1f - 2.0 * mf - 1.0;
    if !(coeff2 > 0.0) || !(coeff2 > 1.0 + 0.5 * (d as f64).log2()) {
        return false;
    }
    // constraint 3: coefficient (a - alpha (l1 - 2m)) must not be positive
    let coeff3 = dist.a - dist.alpha * (l1f - 2.0 * mf);
    if coeff3 > 0.0 {
        return false;
    }
    l1_violation_at(l1, m, d, dist, 1).is_none()
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct L1Check {
    pub ok: bool,
    pub first_violation: Option<(u8, u32)>,
    pub minimal_l1: Option<u32>,
    pub all_n: bool,
}

/// Verify the scale constraints for l1 over n = 1..=n_check and search
/// the minimal admissible l1 by increasing scan.
pub fn check_l1(params: &LevelParams, d: usize, n_check: u32) -> L1Check {
    let first = first_l1_violation(params.l1, params.m, d, &params.distortion, n_check);
    L1Check {
        ok: first.is_none(),
        first_violation: first,
        minimal_l1: minimal_l1(params.m, d, &params.distortion, n_check, 256),
        all_n: l1_holds_for_all_n(params.l1, params.m, d, &params.distortion),
    }
}

/// Smallest l1 <= cap satisfying all constraints for n = 1..=n_check.
pub fn minimal_l1(
    m: u32,
    d: usize,
    dist: &DistortionParams,
    n_check: u32,
    cap: u32,
) -> Option<u32> {
    (1..=cap).find(|&l1| first_l1_violation(l1, m, d, dist, n_check).is_none())
}

/// The four m-step orbit products, in log2 space.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct OrbitProducts {
    pub log2_df_star: f64,
    pub log2_d_star: f64,
    pub log2_rho: f64,
    pub log2_tankage: f64,
}

impl OrbitProducts {
    pub fn df_star(&self) -> f64 {
        self.log2_df_star.exp2()
    }
    pub fn d_star(&self) -> f64 {
        self.log2_d_star.exp2()
    }
    pub fn rho(&self) -> f64 {
        self.log2_rho.exp2()
    }
    pub fn tankage(&self) -> f64 {
        self.log2_tankage.exp2()
    }

    /// log2 of the level penalty p(x): the largest of the four one-sided
    /// deviations from 1.
    pub fn log2_penalty(&self) -> f64 {
        self.log2_df_star
            .max(-self.log2_d_star)
            .max(-self.log2_rho)
            .max(self.log2_tankage)
    }
}

/// Products over j = 0..m-1 of ‖D_{f^j x} f‖*, d*(f^j x), rho_b(f^j x),
/// N_b(f^j x), all in log space.
pub fn level_products(
    sys: &SmoothSystem,
    profile: &RegularityProfile,
    x: &Point,
    m: u32,
) -> Result<OrbitProducts> {
    let orbit = sys.orbit(x, m.saturating_sub(1) as usize)?;
    let dom = &sys.domain;
    let mut df = 0.0;
    let mut ds = 0.0;
    let mut rho = 0.0;
    let mut tank = 0.0;
    for p in orbit.iter().take(m as usize) {
        df += linalg::spectral_norm(&sys.jacobian(p)).max(1.0).log2();
        ds += dom.d_star(p)?.log2();
        rho += profile.rho_sublevel(dom, p)?.max(f64::MIN_POSITIVE).log2();
        tank += (profile.tankage(dom, p)? as f64).log2();
    }
    Ok(OrbitProducts { log2_df_star: df, log2_d_star: ds, log2_rho: rho, log2_tankage: tank })
}

/// Minimal level s with x in A_s: the smallest integer dominating the
/// log2 penalty.
pub fn level_of(
    sys: &SmoothSystem,
    profile: &RegularityProfile,
    x: &Point,
    m: u32,
) -> Result<u32> {
    let p = level_products(sys, profile, x, m)?;
    let s = p.log2_penalty().ceil();
    Ok(if s <= 0.0 { 0 } else { s as u32 })
}

/// Identifier of one partition cell: level, net anchor index, subcell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
pub struct CellKey {
    pub s: u32,
    pub anchor: u32,
    pub sub: u128,
}

/// Where a point lands in the partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LocateOutcome {
    Cell(CellKey),
    /// level beyond s_max; a legal symbol of its own
    Truncated,
    /// classifiable level, but outside every stored cube of that level
    /// (nets are sample-relative)
    OffNet { level: u32 },
}

enum NetIndex {
    Grid { cell: f64, map: HashMap<[i64; MAX_DIM], Vec<u32>> },
    Exact { map: HashMap<[u64; MAX_DIM], Vec<u32>> },
}

fn grid_key(coords: &[f64], cell: f64) -> [i64; MAX_DIM] {
    let mut k = [0i64; MAX_DIM];
    for (i, c) in coords.iter().enumerate() {
        k[i] = (c / cell).floor() as i64;
    }
    k
}

fn exact_key(coords: &[f64]) -> [u64; MAX_DIM] {
    let mut k = [0u64; MAX_DIM];
    for (i, c) in coords.iter().enumerate() {
        // normalize -0.0 so bit-equality matches numeric equality
        k[i] = (c + 0.0).to_bits();
    }
    k
}

/// One level of the partition: the greedy net, its cubes, and a spatial
/// index for lookups.
pub struct LevelNet {
    pub s: u32,
    pub eps: f64,
    pub anchors: Vec<Point>,
    pub degenerate: bool,
    index: NetIndex,
}

impl LevelNet {
    fn new(s: u32, eps: f64, degenerate: bool) -> Self {
        let index = if degenerate {
            NetIndex::Exact { map: HashMap::new() }
        } else {
            NetIndex::Grid { cell: eps, map: HashMap::new() }
        };
        LevelNet { s, eps, anchors: Vec::new(), degenerate, index }
    }

    fn neighbors(&self, p: &Point, reach_cells: i64) -> Vec<u32> {
        match &self.index {
            NetIndex::Exact { map } => map
                .get(&exact_key(&p.coords))
                .cloned()
                .unwrap_or_default(),
            NetIndex::Grid { cell, map } => {
                let center = grid_key(&p.coords, *cell);
                let d = p.dim();
                let mut out = Vec::new();
                let mut offs = vec![-reach_cells; d];
                loop {
                    let mut key = center;
                    for (i, o) in offs.iter().enumerate() {
                        key[i] = key[i].wrapping_add(*o);
                    }
                    if let Some(v) = map.get(&key) {
                        out.extend_from_slice(v);
                    }
                    let mut i = 0;
                    loop {
                        if i == d {
                            out.sort_unstable();
                            out.dedup();
                            return out;
                        }
                        offs[i] += 1;
                        if offs[i] <= reach_cells {
                            break;
                        }
                        offs[i] = -reach_cells;
                        i += 1;
                    }
                }
            }
        }
    }

    fn insert(&mut self, idx: u32, p: &Point) {
        match &mut self.index {
            NetIndex::Exact { map } => {
                map.entry(exact_key(&p.coords)).or_default().push(idx);
            }
            NetIndex::Grid { cell, map } => {
                map.entry(grid_key(&p.coords, *cell)).or_default().push(idx);
            }
        }
        self.anchors.push(p.clone());
    }

    /// First-hit anchor whose cube (L-inf ball of radius eps in chart
    /// coordinates) contains p.
    fn first_containing(&self, dom: &ChartDomain, p: &Point) -> Option<u32> {
        if self.degenerate {
            let cands = self.neighbors(p, 0);
            return cands
                .iter()
                .copied()
                .find(|i| self.anchors[*i as usize].coords == p.coords);
        }
        let cands = self.neighbors(p, 1);
        cands.into_iter().find(|i| {
            let rel = dom.exp_inv(&self.anchors[*i as usize], p);
            rel.iter().all(|r| r.abs() <= self.eps)
        })
    }
}

/// Entropy figures of a built partition.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PartitionEntropy {
    /// plug-in -sum p log p over sampled cell frequencies (nats),
    /// including the truncation symbol
    pub plug_in: f64,
    /// truncated sum of mu(E_s) log(C0 2^{s(1+l1 d)+l d})
    pub bound: f64,
    /// -p log p of the truncation symbol
    pub truncation_correction: f64,
    pub truncation_mass: f64,
    pub gap: f64,
}

/// A built adaptive partition over mu-samples.
pub struct AdaptivePartition {
    pub params: LevelParams,
    pub system: Arc<SmoothSystem>,
    pub profile: Arc<RegularityProfile>,
    pub levels: BTreeMap<u32, LevelNet>,
    pub cell_counts: BTreeMap<CellKey, u64>,
    pub level_masses: BTreeMap<u32, u64>,
    pub samples: Vec<Point>,
    pub assignments: Vec<LocateOutcome>,
    pub truncated: u64,
    pub escaped: u64,
    pub sample_budget: usize,
}

impl AdaptivePartition {
    /// Draw mu-samples, grade them into levels, build the per-level
    /// greedy nets over lexicographically ordered samples, and assign
    /// every sample its first-hit cell.
    pub fn build(
        system: Arc<SmoothSystem>,
        profile: Arc<RegularityProfile>,
        mu: &crate::measure::InvariantMeasure,
        params: LevelParams,
        sample_budget: usize,
        tree: &SeedTree,
    ) -> Result<AdaptivePartition> {
        params.validate(system.dim(), 64)?;
        let raw = mu.sample(sample_budget, tree.child("partition-build").root());
        Self::build_from_samples(system, profile, params, raw, sample_budget)
    }

    /// Same construction over a caller-supplied sample cloud.
    pub fn build_from_samples(
        system: Arc<SmoothSystem>,
        profile: Arc<RegularityProfile>,
        params: LevelParams,
        raw: Vec<Point>,
        sample_budget: usize,
    ) -> Result<AdaptivePartition> {
        let d = system.dim();
        if d > MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {d} beyond support")));
        }

        let levels_of: Vec<Result<u32>> =
            par::map_slice(&raw, |p| level_of(&system, &profile, p, params.m));

        let mut samples: Vec<Point> = Vec::with_capacity(raw.len());
        let mut sample_levels: Vec<u32> = Vec::with_capacity(raw.len());
        let mut escaped = 0u64;
        let mut truncated = 0u64;
        let mut by_level: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut level_masses: BTreeMap<u32, u64> = BTreeMap::new();

        for (p, lv) in raw.into_iter().zip(levels_of) {
            match lv {
                Err(Error::Escape { .. }) => {
                    escaped += 1;
                }
                Err(e) => return Err(e),
                Ok(s_raw) => {
                    let s = s_raw.max(params.n);
                    let idx = samples.len();
                    samples.push(p);
                    sample_levels.push(s);
                    if s > params.s_max {
                        truncated += 1;
                    } else {
                        by_level.entry(s).or_default().push(idx);
                        *level_masses.entry(s).or_default() += 1;
                    }
                }
            }
        }
        if samples.is_empty() {
            return Err(Error::EmptyPartition);
        }

        let mut levels: BTreeMap<u32, LevelNet> = BTreeMap::new();
        for (&s, idxs) in &by_level {
            let eps = params.eps(s, d);
            let max_abs = idxs
                .iter()
                .flat_map(|&i| samples[i].coords.iter())
                .fold(0.0f64, |a, c| a.max(c.abs()));
            let degenerate = !(eps >= DEGENERATE_EPS_FACTOR * (1.0 + max_abs));
            let mut net = LevelNet::new(s, eps, degenerate);

            // greedy insertion in lexicographic candidate order
            let pts: Vec<Point> = idxs.iter().map(|&i| samples[i].clone()).collect();
            let order = geometry::lex_order(&pts);
            for &oi in &order {
                let cand = &pts[oi];
                let near = net.neighbors(cand, 1);
                let separated = if net.degenerate {
                    !net
                        .neighbors(cand, 0)
                        .iter()
                        .any(|i| net.anchors[*i as usize].coords == cand.coords)
                } else {
                    !near.iter().any(|i| {
                        net.anchors[*i as usize].euclid_dist(cand) <= eps
                    })
                };
                if separated {
                    let idx = net.anchors.len() as u32;
                    net.insert(idx, cand);
                }
            }
            levels.insert(s, net);
        }

        // assign every classified sample its first-hit cell
        let dom = &system.domain;
        let mut cell_counts: BTreeMap<CellKey, u64> = BTreeMap::new();
        let mut assignments: Vec<LocateOutcome> = Vec::with_capacity(samples.len());
        for (p, &s) in samples.iter().zip(&sample_levels) {
            if s > params.s_max {
                assignments.push(LocateOutcome::Truncated);
                continue;
            }
            let net = levels.get(&s).expect("occupied level has a net");
            let outcome = match net.first_containing(dom, p) {
                None => LocateOutcome::OffNet { level: s },
                Some(anchor) => {
                    let rel = dom.exp_inv(&net.anchors[anchor as usize], p);
                    let sub = geometry::cube_subcell_index(&rel, net.eps, params.l)
                        .expect("containing cube yields a subcell");
                    LocateOutcome::Cell(CellKey { s, anchor, sub })
                }
            };
            if let LocateOutcome::Cell(key) = outcome {
                *cell_counts.entry(key).or_default() += 1;
            }
            assignments.push(outcome);
        }

        Ok(AdaptivePartition {
            params,
            system,
            profile,
            levels,
            cell_counts,
            level_masses,
            samples,
            assignments,
            truncated,
            escaped,
            sample_budget,
        })
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Total classified samples (cells + truncation symbol).
    pub fn classified(&self) -> u64 {
        self.samples.len() as u64
    }

    pub fn truncation_mass(&self) -> f64 {
        self.truncated as f64 / self.classified().max(1) as f64
    }

    /// Locate a point: compute its level, clip to [n, ...], find the
    /// first-hit cube at that level, index the subcell. Deterministic.
    pub fn locate(&self, x: &Point) -> Result<LocateOutcome> {
        let s_raw = level_of(&self.system, &self.profile, x, self.params.m)?;
        let s = s_raw.max(self.params.n);
        if s > self.params.s_max {
            return Ok(LocateOutcome::Truncated);
        }
        let net = match self.levels.get(&s) {
            None => return Ok(LocateOutcome::OffNet { level: s }),
            Some(n) => n,
        };
        let dom = &self.system.domain;
        match net.first_containing(dom, x) {
            None => Ok(LocateOutcome::OffNet { level: s }),
            Some(anchor) => {
                let rel = dom.exp_inv(&net.anchors[anchor as usize], x);
                let sub = geometry::cube_subcell_index(&rel, net.eps, self.params.l)
                    .expect("containing cube yields a subcell");
                Ok(LocateOutcome::Cell(CellKey { s, anchor, sub }))
            }
        }
    }

    /// Brute-force locate: scan anchors in construction order. The oracle
    /// the indexed path must agree with.
    pub fn locate_brute_force(&self, x: &Point) -> Result<LocateOutcome> {
        let s_raw = level_of(&self.system, &self.profile, x, self.params.m)?;
        let s = s_raw.max(self.params.n);
        if s > self.params.s_max {
            return Ok(LocateOutcome::Truncated);
        }
        let net = match self.levels.get(&s) {
            None => return Ok(LocateOutcome::OffNet { level: s }),
            Some(n) => n,
        };
        let dom = &self.system.domain;
        for (i, anchor) in net.anchors.iter().enumerate() {
            let rel = dom.exp_inv(anchor, x);
            let inside = if net.degenerate {
                anchor.coords == x.coords
            } else {
                rel.iter().all(|r| r.abs() <= net.eps)
            };
            if inside {
                let sub = geometry::cube_subcell_index(&rel, net.eps, self.params.l).unwrap();
                return Ok(LocateOutcome::Cell(CellKey { s, anchor: i as u32, sub }));
            }
        }
        Ok(LocateOutcome::OffNet { level: s })
    }

    /// Plug-in entropy of the sampled cell frequencies against the
    /// truncated analytic bound.
    pub fn entropy(&self) -> PartitionEntropy {
        let total = self.classified() as f64;
        let d = self.dim();
        let mut terms: Vec<f64> = Vec::with_capacity(self.cell_counts.len() + 2);
        let mut off_net = 0u64;
        for a in &self.assignments {
            if matches!(a, LocateOutcome::OffNet { .. }) {
                off_net += 1;
            }
        }
        for c in self.cell_counts.values() {
            let p = *c as f64 / total;
            terms.push(-p * p.ln());
        }
        if off_net > 0 {
            let p = off_net as f64 / total;
            terms.push(-p * p.ln());
        }
        let trunc_mass = self.truncated as f64 / total;
        let truncation_correction = if self.truncated > 0 {
            -trunc_mass * trunc_mass.ln()
        } else {
            0.0
        };
        let plug_in = par::pairwise_sum(&terms) + truncation_correction;

        let bound_terms: Vec<f64> = self
            .level_masses
            .iter()
            .map(|(&s, &c)| (c as f64 / total) * self.params.log_cell_cap(s, d))
            .collect();
        let bound = par::pairwise_sum(&bound_terms);

        PartitionEntropy {
            plug_in,
            bound,
            truncation_correction,
            truncation_mass: trunc_mass,
            gap: bound + truncation_correction - plug_in,
        }
    }

    /// Occupied-cell count per level.
    pub fn cells_per_level(&self) -> BTreeMap<u32, u64> {
        let mut out: BTreeMap<u32, u64> = BTreeMap::new();
        for key in self.cell_counts.keys() {
            *out.entry(key.s).or_default() += 1;
        }
        out
    }

    /// Fraction of build samples that fell off-net.
    pub fn off_net_mass(&self) -> f64 {
        let off = self
            .assignments
            .iter()
            .filter(|a| matches!(a, LocateOutcome::OffNet { .. }))
            .count();
        off as f64 / self.classified().max(1) as f64
    }

    /// Empirical level distribution (mass per level over classified
    /// samples, truncation mass under the key s_max + 1).
    pub fn level_distribution(&self) -> BTreeMap<u32, f64> {
        let total = self.classified() as f64;
        let mut out: BTreeMap<u32, f64> = BTreeMap::new();
        for (&s, &c) in &self.level_masses {
            out.insert(s, c as f64 / total);
        }
        if self.truncated > 0 {
            out.insert(self.params.s_max + 1, self.truncated as f64 / total);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    fn default_params(l1: u32) -> LevelParams {
        LevelParams {
            m: 1,
            n: 2,
            l1,
            l: 1,
            b: 1.5,
            distortion: DistortionParams { alpha: 0.9, big_c: 1.1, a: 1.1 },
            s_max: 40,
            c01: None,
            c_box: None,
        }
    }

    #[test]
    fn l1_constraint_examples() {
        let dist = DistortionParams { alpha: 0.5, big_c: 2.0, a: 2.0 };
        // l1 <= a violates the first constraint
        assert_eq!(l1_violation_at(2, 1, 1, &dist, 1), Some(1));
        // minimal l1 by search, verified by brute force over l1 = 1..128
        let min = minimal_l1(1, 1, &dist, 64, 128).unwrap();
        for l1 in 1..min {
            assert!(first_l1_violation(l1, 1, 1, &dist, 64).is_some());
        }
        assert!(first_l1_violation(min, 1, 1, &dist, 64).is_none());
        // eps strictly decreasing in n for the admissible l1
        let p = LevelParams { l1: min, ..default_params(min) };
        for s in 1..10u32 {
            assert!(p.eps(s + 1, 1) < p.eps(s, 1));
        }
    }

    #[test]
    fn l1_checker_matches_brute_force_oracle() {
        // independent re-derivation of the constraints, straight from the
        // inequalities, evaluated per (l1, n)
        fn oracle_ok(l1: u32, m: u32, d: usize, dist: &DistortionParams, n_check: u32) -> bool {
            let sd = (d as f64).sqrt();
            for n in 1..=n_check {
                let c1 = (l1 as f64) > dist.a;
                let lhs2 = (-(n as f64) * (l1 as f64 - 2.0 * m as f64)).exp2();
                let rhs2 = 1.0 / (sd * (n as f64 + 1.0).exp2());
                let c2 = lhs2 < rhs2;
                let lhs3 = dist.big_c * lhs2.powf(dist.alpha) * (dist.a * n as f64).exp2();
                let rhs3 = (1.0 / m as f64).exp2() - 1.0;
                let c3 = lhs3 < rhs3;
                if !(c1 && c2 && c3) {
                    return false;
                }
            }
            true
        }
        let mut rng = crate::rng::SeedTree::new(77).stream("l1-oracle", 0);
        use rand::Rng;
        for _ in 0..20 {
            let dist = DistortionParams {
                alpha: rng.gen_range(0.15..0.9),
                big_c: rng.gen_range(1.1..50.0),
                a: rng.gen_range(1.05..4.0),
            };
            let m = rng.gen_range(1..=3u32);
            let d = rng.gen_range(1..=3usize);
            let fast: Vec<u32> = (1..=128u32)
                .filter(|&l1| first_l1_violation(l1, m, d, &dist, 64).is_none())
                .collect();
            let brute: Vec<u32> =
                (1..=128u32).filter(|&l1| oracle_ok(l1, m, d, &dist, 64)).collect();
            assert_eq!(fast, brute, "mismatch for {dist:?} m={m} d={d}");
        }
    }

    #[test]
    fn level_product_examples() {
        let doubling = registry::system("doubling").unwrap();
        let profile = registry::profile("doubling").unwrap();
        // interior point with d* >= 1/2 along its 2-orbit
        let x = Point::one(0.552);
        let p = level_products(&doubling, &profile, &x, 2).unwrap();
        assert!((p.df_star() - 4.0).abs() < 1e-12);
        assert_eq!(p.rho(), 1.0);
        assert_eq!(p.tankage(), 1.0);

        let id = registry::identity_system(1);
        let trivial = RegularityProfile::trivial(1.5);
        let p = level_products(&id, &trivial, &Point::one(0.3), 5).unwrap();
        assert_eq!(p.df_star(), 1.0);
    }

    #[test]
    fn gauss_golden_point_products() {
        // golden fixed point: f(x) = x, |f'| = 1/x^2 = phi^2
        let gauss = registry::system("gauss").unwrap();
        let profile = registry::profile("gauss").unwrap();
        let x = Point::one((5f64.sqrt() - 1.0) / 2.0);
        let p = level_products(&gauss, &profile, &x, 3).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!(
            (p.df_star() - phi.powi(6)).abs() < 1e-9,
            "prodDf {} expect {}",
            p.df_star(),
            phi.powi(6)
        );
        // cross-check the level by brute-force threshold scan
        let s = level_of(&gauss, &profile, &x, 3).unwrap();
        let brute = (1..=64u32)
            .find(|&cand| {
                p.df_star() <= (cand as f64).exp2()
                    && p.d_star() >= (-(cand as f64)).exp2()
                    && p.rho() >= (-(cand as f64)).exp2()
                    && p.tankage() <= (cand as f64).exp2()
            })
            .unwrap();
        assert_eq!(s, brute);
    }

    #[test]
    fn level_of_examples() {
        let id = registry::identity_system(1);
        let trivial = RegularityProfile::trivial(1.5);
        // all products 1 -> level 0 (clipped to n at build time)
        assert_eq!(level_of(&id, &trivial, &Point::one(0.4), 5).unwrap(), 0);

        // prodDf = 16 with everything else trivial -> level 4
        let quad = registry::linear_system(&[16.0]);
        assert_eq!(level_of(&quad, &trivial, &Point::one(0.001), 1).unwrap(), 4);
    }

    #[test]
    fn build_doubling_partition_and_locate() {
        let sys = Arc::new(registry::system("doubling").unwrap());
        let profile = Arc::new(registry::profile("doubling").unwrap());
        let mu = registry::measure("uniform01").unwrap();
        let params = default_params(5);
        let tree = SeedTree::new(21);
        let part =
            AdaptivePartition::build(sys.clone(), profile, &mu, params, 4000, &tree).unwrap();

        assert!(part.escaped <= 1);
        // every classified sample lands in exactly one cell, and the
        // indexed locate agrees with the brute-force scan
        let mut checked = 0;
        for (p, a) in part.samples.iter().zip(&part.assignments) {
            let loc = part.locate(p).unwrap();
            assert_eq!(&loc, a);
            let brute = part.locate_brute_force(p).unwrap();
            assert_eq!(loc, brute);
            if matches!(loc, LocateOutcome::Cell(_)) {
                checked += 1;
            }
        }
        assert!(checked > 3000, "only {checked} samples in cells");
        assert_eq!(part.off_net_mass(), 0.0, "build samples are always covered");

        // net properties per level: anchors pairwise separated, cubes
        // within sqrt(d) eps balls
        for net in part.levels.values() {
            if net.degenerate {
                continue;
            }
            for i in 0..net.anchors.len() {
                for j in (i + 1)..net.anchors.len() {
                    assert!(net.anchors[i].euclid_dist(&net.anchors[j]) > net.eps);
                }
            }
        }

        // per-level occupied cell count respects the analytic cap
        let d = part.dim();
        for (s, count) in part.cells_per_level() {
            let cap = part.params.log_cell_cap(s, d).exp();
            assert!(
                (count as f64) <= cap,
                "level {s}: {count} cells over cap {cap}"
            );
        }
    }

    #[test]
    fn refinement_is_nested() {
        let sys = Arc::new(registry::system("doubling").unwrap());
        let profile = Arc::new(registry::profile("doubling").unwrap());
        let mu = registry::measure("uniform01").unwrap();
        let tree = SeedTree::new(4);
        let coarse_params = LevelParams { l: 1, ..default_params(5) };
        let fine_params = LevelParams { l: 2, ..default_params(5) };
        let samples = mu.sample(2000, tree.child("partition-build").root());
        let coarse = AdaptivePartition::build_from_samples(
            sys.clone(),
            profile.clone(),
            coarse_params,
            samples.clone(),
            2000,
        )
        .unwrap();
        let fine = AdaptivePartition::build_from_samples(
            sys.clone(),
            profile.clone(),
            fine_params,
            samples.clone(),
            2000,
        )
        .unwrap();
        let mut cells_fine_per_coarse: HashMap<CellKey, std::collections::HashSet<CellKey>> =
            HashMap::new();
        for p in &samples {
            let (a, b) = match (coarse.locate(p), fine.locate(p)) {
                (Ok(LocateOutcome::Cell(a)), Ok(LocateOutcome::Cell(b))) => (a, b),
                _ => continue,
            };
            // same level and anchor; the fine id refines the coarse one
            assert_eq!(a.s, b.s);
            assert_eq!(a.anchor, b.anchor);
            cells_fine_per_coarse.entry(a).or_default().insert(b);
        }
        let d = sys.dim() as u32;
        for (_, fines) in cells_fine_per_coarse {
            assert!(fines.len() <= (1usize << d), "cell split into {}", fines.len());
        }
    }

    #[test]
    fn uniform_single_level_entropy_is_l_log2() {
        // hand-built single-level partition: one parent cube spanning the
        // support, subdivided into 2^l cells; uniform samples
        let sys = Arc::new(registry::identity_system(1));
        let profile = Arc::new(RegularityProfile::trivial(1.5));
        let mu = registry::measure("uniform01").unwrap();
        let tree = SeedTree::new(8);
        for l in [1u32, 3] {
            let params = LevelParams {
                m: 1,
                n: 1,
                l1: 1,
                l,
                b: 1.5,
                distortion: DistortionParams { alpha: 0.5, big_c: 2.0, a: 1.5 },
                s_max: 8,
                c01: None,
                c_box: None,
            };
            let samples = mu.sample(60_000, tree.child("s").root());
            // identity on a boundaryless chart grades everything level 0 -> n;
            // eps(1,1) = 1/2 so the first sample's cube spans (0,1) only if
            // anchored near 0.5; anchor the net by hand instead.
            let mut part = AdaptivePartition::build_from_samples(
                sys.clone(),
                profile.clone(),
                params,
                vec![Point::one(0.5)],
                1,
            )
            .unwrap();
            // re-assign the uniform samples through locate
            let mut counts: BTreeMap<CellKey, u64> = BTreeMap::new();
            let mut assignments = Vec::new();
            for p in &samples {
                match part.locate(p).unwrap() {
                    LocateOutcome::Cell(k) => {
                        *counts.entry(k).or_default() += 1;
                        assignments.push(LocateOutcome::Cell(k));
                    }
                    other => assignments.push(other),
                }
            }
            part.cell_counts = counts;
            part.samples = samples.clone();
            part.assignments = assignments;
            part.level_masses = BTreeMap::from([(1u32, samples.len() as u64)]);
            let h = part.entropy();
            let expect = l as f64 * 2f64.ln();
            assert!(
                (h.plug_in - expect).abs() < 0.01,
                "l={l}: H {} expect {expect}",
                h.plug_in
            );
            assert!(h.plug_in <= h.bound + h.truncation_correction + 1e-9);
        }
    }

    #[test]
    fn single_cell_entropy_is_zero() {
        let sys = Arc::new(registry::identity_system(1));
        let profile = Arc::new(RegularityProfile::trivial(1.5));
        let params = LevelParams {
            m: 1,
            n: 1,
            l1: 1,
            l: 0,
            b: 1.5,
            distortion: DistortionParams { alpha: 0.5, big_c: 2.0, a: 1.5 },
            s_max: 8,
            c01: None,
            c_box: None,
        };
        let part = AdaptivePartition::build_from_samples(
            sys,
            profile,
            params,
            vec![Point::one(0.5); 50],
            50,
        )
        .unwrap();
        let h = part.entropy();
        assert_eq!(h.plug_in, 0.0);
    }

    #[test]
    fn locate_brute_force_agreement_on_random_queries() {
        let sys = Arc::new(registry::system("tent").unwrap());
        let profile = Arc::new(registry::profile("tent").unwrap());
        let mu = registry::measure("uniform01").unwrap();
        let params = default_params(5);
        let tree = SeedTree::new(33);
        let part = AdaptivePartition::build(sys, profile, &mu, params, 3000, &tree).unwrap();
        let queries = mu.sample(10_000, 999);
        let mut outcomes = [0usize; 3];
        for q in &queries {
            let a = part.locate(q).unwrap();
            let b = part.locate_brute_force(q).unwrap();
            assert_eq!(a, b, "disagreement at {:?}", q.coords);
            match a {
                LocateOutcome::Cell(_) => outcomes[0] += 1,
                LocateOutcome::Truncated => outcomes[1] += 1,
                LocateOutcome::OffNet { .. } => outcomes[2] += 1,
            }
        }
        assert!(outcomes[0] > 0);
    }

    #[test]
    fn cube_overlap_bound_holds_on_samples() {
        let sys = Arc::new(registry::system("doubling").unwrap());
        let profile = Arc::new(registry::profile("doubling").unwrap());
        let mu = registry::measure("uniform01").unwrap();
        let params = default_params(5);
        let tree = SeedTree::new(13);
        let part = AdaptivePartition::build(sys, profile, &mu, params, 3000, &tree).unwrap();
        let d = part.dim();
        let cap = part.params.overlap_cap(d) as usize;
        for (p, a) in part.samples.iter().zip(&part.assignments) {
            let s = match a {
                LocateOutcome::Cell(k) => k.s,
                _ => continue,
            };
            let net = &part.levels[&s];
            if net.degenerate {
                continue;
            }
            let reach = net.eps * (d as f64).sqrt();
            let mut hits = 0usize;
            for anchor in &net.anchors {
                // distance from p to the cube around anchor
                let mut dist2 = 0.0;
                for (pc, ac) in p.coords.iter().zip(&anchor.coords) {
                    let gap = (pc - ac).abs() - net.eps;
                    if gap > 0.0 {
                        dist2 += gap * gap;
                    }
                }
                if dist2.sqrt() <= reach {
                    hits += 1;
                }
            }
            assert!(hits <= cap, "ball at {:?} touches {hits} cubes, cap {cap}", p.coords);
        }
    }
}
