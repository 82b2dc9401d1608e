//! Invariant measures: analytic densities on 1-D and 2-D charts, empirical
//! orbit measures, sampling, integration, invariance testing, and the
//! log-integrability report.
//!
//! 1-D analytic densities integrate by adaptive Gauss-Legendre after a
//! cosine endpoint substitution (which absorbs log-type endpoint
//! singularities); unbounded supports are first mapped to (0,1) by
//! x = a + t/(1-t). Everything else is Monte Carlo with a standard-error
//! estimate. Sampling is inverse-CDF through a tabulated cumulative
//! integral; draws are deterministic given the seed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point, RegularityProfile};
use crate::par;
use crate::quad::{self, TabulatedCdf};
use crate::rng::SeedTree;
use crate::system::SmoothSystem;

const CDF_PANELS: usize = 1 << 14;
const NORMALIZATION_TOL: f64 = 1e-6;

type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A normalized density on (lo, hi); hi may be +inf. Internally the
/// support is reparametrized to t in (0,1): cosine-graded directly for
/// bounded supports, via x = lo + t/(1-t) for half-infinite ones.
#[derive(Clone)]
pub struct Density1d {
    pub density: Density,
    pub support: (f64, f64),
    table: Arc<TabulatedCdf>,
    unbounded: bool,
}

impl Density1d {
    pub fn new(density: Density, support: (f64, f64)) -> Result<Self> {
        let (lo, hi) = support;
        if !(lo.is_finite() && hi > lo) {
            return Err(Error::InvalidArgument("bad density support".into()));
        }
        let unbounded = !hi.is_finite();
        let f = density.clone();
        let table = if unbounded {
            // x = lo + t/(1-t), dx = dt/(1-t)^2
            TabulatedCdf::build(
                &move |t: f64| {
                    let omt = 1.0 - t;
                    if omt <= 0.0 {
                        return 0.0;
                    }
                    let x = lo + t / omt;
                    f(x) / (omt * omt)
                },
                0.0,
                1.0,
                CDF_PANELS,
            )
        } else {
            TabulatedCdf::build(&move |x: f64| f(x), lo, hi, CDF_PANELS)
        };
        let mass = table.total();
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized { mass });
        }
        Ok(Density1d { density, support, table: Arc::new(table), unbounded })
    }

    pub fn quantile(&self, u: f64) -> f64 {
        let q = self.table.quantile(u);
        if self.unbounded {
            let omt = (1.0 - q).max(f64::MIN_POSITIVE);
            self.support.0 + q / omt
        } else {
            q
        }
    }

    /// Integrate phi against the density by adaptive quadrature; `breaks`
    /// are interior x-locations of kinks or branch cuts of phi.
    ///
    /// The endpoint substitution x = lo + span sin^2(pi s / 2) absorbs
    /// log-type endpoint singularities. sin^2 / cos^2 are evaluated on
    /// the branch nearest their zero, so the left endpoint resolves down
    /// to subnormals and divergent integrands keep growing under
    /// refinement instead of being rounded away.
    fn integrate(
        &self,
        phi: &(dyn Fn(f64) -> f64 + Sync),
        breaks: &[f64],
        max_evals: usize,
    ) -> quad::QuadResult {
        let (lo, hi) = self.support;
        let f = &self.density;
        // fraction along the support and its complement, branch-stable
        let frac = |s: f64| -> (f64, f64) {
            if s <= 0.5 {
                let t = (0.5 * std::f64::consts::PI * s).sin().powi(2);
                (t, 1.0 - t)
            } else {
                let omt = (0.5 * std::f64::consts::PI * (1.0 - s)).sin().powi(2);
                (1.0 - omt, omt)
            }
        };
        let weight = |s: f64| 0.5 * std::f64::consts::PI * (std::f64::consts::PI * s).sin();
        if self.unbounded {
            let integrand = move |s: f64| {
                let (t, omt) = frac(s);
                if omt <= 0.0 || t <= 0.0 {
                    return 0.0;
                }
                let x = lo + t / omt;
                let v = phi(x) * f(x) / (omt * omt) * weight(s);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            };
            let mapped: Vec<f64> = breaks
                .iter()
                .filter(|x| **x > lo && x.is_finite())
                .map(|x| {
                    let t = (x - lo) / (1.0 + x - lo);
                    (1.0 - 2.0 * t).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
                })
                .collect();
            quad::adaptive(&integrand, 0.0, 1.0, 1e-9, 1e-9, max_evals, &mapped)
        } else {
            let span = hi - lo;
            let integrand = move |s: f64| {
                let (t, omt) = frac(s);
                // anchor at the closer endpoint for full resolution
                let x = if t <= 0.5 { lo + span * t } else { hi - span * omt };
                let v = phi(x) * f(x) * span * weight(s);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            };
            let mapped: Vec<f64> = breaks
                .iter()
                .filter(|x| **x > lo && **x < hi)
                .map(|x| {
                    let t = (x - lo) / span;
                    (1.0 - 2.0 * t).clamp(-1.0, 1.0).acos() / std::f64::consts::PI
                })
                .collect();
            quad::adaptive(&integrand, 0.0, 1.0, 1e-9, 1e-9, max_evals, &mapped)
        }
    }
}

#[derive(Clone)]
pub enum MeasureKind {
    Density1d(Density1d),
    /// product measure on a planar chart
    Product2d(Density1d, Density1d),
    /// stored sample cloud (Birkhoff orbits, loaded files)
    Empirical(Arc<Vec<Point>>),
}

#[derive(Clone)]
pub struct InvariantMeasure {
    pub name: String,
    pub dim: usize,
    pub kind: MeasureKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Quadrature,
    MonteCarlo,
}

/// An integral estimate with its uncertainty (quadrature error bound or
/// Monte Carlo standard error).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Integral {
    pub value: f64,
    pub uncertainty: f64,
    pub method: Method,
}

#[derive(Debug, Clone, Copy)]
pub struct Budget {
    pub quad_evals: usize,
    pub mc_samples: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Budget { quad_evals: 100_000, mc_samples: 1_000_000 }
    }
}

impl InvariantMeasure {
    pub fn density_1d(name: &str, density: Density, support: (f64, f64)) -> Result<Self> {
        Ok(InvariantMeasure {
            name: name.to_string(),
            dim: 1,
            kind: MeasureKind::Density1d(Density1d::new(density, support)?),
        })
    }

    pub fn product_2d(name: &str, dx: Density1d, dy: Density1d) -> Self {
        InvariantMeasure { name: name.to_string(), dim: 2, kind: MeasureKind::Product2d(dx, dy) }
    }

    pub fn empirical(name: &str, points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("empirical measure needs points".into()));
        }
        let dim = points[0].dim();
        Ok(InvariantMeasure {
            name: name.to_string(),
            dim,
            kind: MeasureKind::Empirical(Arc::new(points)),
        })
    }

    /// Birkhoff surrogate: the empirical measure of one long orbit.
    pub fn from_orbit(sys: &SmoothSystem, x0: &Point, n: usize, burn: usize) -> Result<Self> {
        let start = sys.iterate(x0, burn)?;
        let orbit = sys.orbit(&start, n.saturating_sub(1))?;
        InvariantMeasure::empirical(&format!("orbit({})", sys.name), orbit)
    }

    /// CSV loader: one point per row, d comma-separated columns.
    pub fn load_csv(path: &std::path::Path, name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut pts = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let coords: std::result::Result<Vec<f64>, _> =
                line.split(',').map(|c| c.trim().parse::<f64>()).collect();
            match coords {
                Ok(c) => pts.push(Point::new(c)),
                Err(e) => {
                    return Err(Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))
                }
            }
        }
        InvariantMeasure::empirical(name, pts)
    }

    /// Binary loader: little-endian f64, d columns per row.
    pub fn load_f64le(path: &std::path::Path, dim: usize, name: &str) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if dim == 0 || bytes.len() % (8 * dim) != 0 {
            return Err(Error::Config(format!(
                "binary sample file {} is not a multiple of {} bytes",
                path.display(),
                8 * dim
            )));
        }
        let mut pts = Vec::with_capacity(bytes.len() / (8 * dim));
        let mut cursor = bytes.chunks_exact(8);
        let rows = bytes.len() / (8 * dim);
        for _ in 0..rows {
            let mut coords = Vec::with_capacity(dim);
            for _ in 0..dim {
                let chunk = cursor.next().unwrap();
                coords.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            pts.push(Point::new(coords));
        }
        InvariantMeasure::empirical(name, pts)
    }

    /// Deterministic i.i.d.-style draws: inverse CDF for analytic
    /// densities, uniform resampling for empirical measures. Chunked
    /// substreams keep the output independent of worker count.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Point> {
        let tree = SeedTree::new(seed).child("measure-sample");
        const CHUNK: usize = 4096;
        let chunks = n.div_ceil(CHUNK);
        let per_chunk: Vec<Vec<Point>> = par::map_indexed(chunks, |c| {
            let mut rng = tree.stream("chunk", c as u64);
            let count = CHUNK.min(n - c * CHUNK);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(self.draw(&mut rng));
            }
            out
        });
        per_chunk.into_iter().flatten().collect()
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> Point {
        match &self.kind {
            MeasureKind::Density1d(d) => Point::one(d.quantile(rng.gen::<f64>())),
            MeasureKind::Product2d(dx, dy) => {
                let x = dx.quantile(rng.gen::<f64>());
                let y = dy.quantile(rng.gen::<f64>());
                Point::two(x, y)
            }
            MeasureKind::Empirical(pts) => {
                let i = rng.gen_range(0..pts.len());
                pts[i].clone()
            }
        }
    }

    /// Integrate a black-box observable. Quadrature on 1-D analytic
    /// densities, Monte Carlo elsewhere.
    pub fn integrate(
        &self,
        phi: &(dyn Fn(&Point) -> f64 + Sync),
        budget: &Budget,
        seed: u64,
    ) -> Result<Integral> {
        self.integrate_with_breaks(phi, &[], budget, seed)
    }

    pub fn integrate_with_breaks(
        &self,
        phi: &(dyn Fn(&Point) -> f64 + Sync),
        breaks: &[f64],
        budget: &Budget,
        seed: u64,
    ) -> Result<Integral> {
        match &self.kind {
            MeasureKind::Density1d(d) => {
                let r = d.integrate(&|x| phi(&Point::one(x)), breaks, budget.quad_evals);
                Ok(Integral { value: r.value, uncertainty: r.error, method: Method::Quadrature })
            }
            MeasureKind::Product2d(..) => {
                let pts = self.sample(budget.mc_samples, seed);
                let vals: Vec<f64> = par::map_slice(&pts, |p| phi(p));
                let (mean, se) = par::mean_stderr(&vals);
                Ok(Integral { value: mean, uncertainty: se, method: Method::MonteCarlo })
            }
            MeasureKind::Empirical(pts) => {
                let vals: Vec<f64> = par::map_slice(pts.as_slice(), |p| phi(p));
                let (mean, se) = par::mean_stderr(&vals);
                Ok(Integral { value: mean, uncertainty: se, method: Method::MonteCarlo })
            }
        }
    }

    /// Integrate at three nested budgets and flag divergence when the
    /// estimates keep growing by more than 10% per refinement.
    pub fn integrate_refining(
        &self,
        phi: &(dyn Fn(&Point) -> f64 + Sync),
        breaks: &[f64],
        budget: &Budget,
        seed: u64,
        component: &str,
    ) -> Result<Integral> {
        let mut estimates = Vec::with_capacity(3);
        for shrink in [4usize, 2, 1] {
            let b = Budget {
                quad_evals: (budget.quad_evals / shrink).max(400),
                mc_samples: (budget.mc_samples / shrink).max(100),
            };
            estimates.push(self.integrate_with_breaks(phi, breaks, &b, seed)?);
        }
        let growing = estimates.windows(2).all(|w| {
            let (a, b) = (w[0].value.abs(), w[1].value.abs());
            b > a * 1.10
        });
        let last = estimates[2];
        if growing && last.value.abs() > 1.0 {
            return Err(Error::Divergent { component: component.to_string() });
        }
        if !last.value.is_finite() {
            return Err(Error::Divergent { component: component.to_string() });
        }
        Ok(last)
    }

    pub fn support_1d(&self) -> Option<(f64, f64)> {
        match &self.kind {
            MeasureKind::Density1d(d) => Some(d.support),
            _ => None,
        }
    }
}

/// A named observable for invariance testing.
#[derive(Clone)]
pub struct TestFunction {
    pub label: String,
    pub f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Default invariance test set: low-order moments, smoothed ±1 splits,
/// and one trigonometric pair, all bounded on the support. Unbounded
/// supports swap moments for decaying observables.
pub fn default_test_functions(mu: &InvariantMeasure) -> Vec<TestFunction> {
    let mut fns: Vec<TestFunction> = Vec::new();
    let bounded = mu.support_1d().map(|(_, hi)| hi.is_finite()).unwrap_or(true);
    let (lo, hi) = mu.support_1d().unwrap_or((0.0, 1.0));
    let span = if bounded { hi - lo } else { 1.0 };
    let edge = 0.1 * span;

    if bounded {
        for k in 1..=3u32 {
            fns.push(TestFunction {
                label: format!("moment{k}"),
                f: Arc::new(move |p: &Point| {
                    p.coords.iter().map(|c| ((c - lo) / span).powi(k as i32)).product()
                }),
            });
        }
        for frac in [0.25, 0.5, 0.75] {
            let cut = lo + frac * span;
            fns.push(TestFunction {
                label: format!("split{frac}"),
                f: Arc::new(move |p: &Point| 1.0 - 2.0 * smoothstep((p.coords[0] - cut) / edge)),
            });
        }
        fns.push(TestFunction {
            label: "cos1".into(),
            f: Arc::new(move |p: &Point| {
                (2.0 * std::f64::consts::PI * (p.coords[0] - lo) / span).cos()
            }),
        });
        fns.push(TestFunction {
            label: "sin1".into(),
            f: Arc::new(move |p: &Point| {
                (2.0 * std::f64::consts::PI * (p.coords[0] - lo) / span).sin()
            }),
        });
    } else {
        fns.push(TestFunction {
            label: "expdecay".into(),
            f: Arc::new(move |p: &Point| (-(p.coords[0] - lo)).exp()),
        });
        fns.push(TestFunction {
            label: "cauchy1".into(),
            f: Arc::new(move |p: &Point| 1.0 / (1.0 + (p.coords[0] - lo))),
        });
        fns.push(TestFunction {
            label: "cauchy2".into(),
            f: Arc::new(move |p: &Point| (1.0 / (1.0 + (p.coords[0] - lo))).powi(2)),
        });
        for shift in [1.0, 3.0] {
            let cut = lo + shift;
            fns.push(TestFunction {
                label: format!("split+{shift}"),
                f: Arc::new(move |p: &Point| 1.0 - 2.0 * smoothstep((p.coords[0] - cut) / 0.25)),
            });
        }
    }
    fns
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InvarianceFn {
    pub label: String,
    pub defect: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct InvarianceReport {
    pub max_defect: f64,
    pub pass: bool,
    pub method: Method,
    pub excluded_mass: f64,
    pub per_function: Vec<InvarianceFn>,
}

/// Max over test functions of |∫ phi∘f dmu - ∫ phi dmu|. Quadrature for
/// 1-D analytic measures (branch cuts of f seed the panels), otherwise
/// paired Monte Carlo on common samples. Escapes during phi∘f count as
/// excluded mass.
pub fn check_invariance(
    mu: &InvariantMeasure,
    sys: &SmoothSystem,
    fns: &[TestFunction],
    budget: &Budget,
    seed: u64,
) -> Result<InvarianceReport> {
    if fns.is_empty() {
        return Err(Error::InvalidArgument("no test functions".into()));
    }
    let quad_path = matches!(mu.kind, MeasureKind::Density1d(_));
    let cuts: Vec<f64> = match (&sys.branch_cuts, mu.support_1d()) {
        (Some(c), Some((lo, hi))) => c(lo, if hi.is_finite() { hi } else { 1e12 }),
        _ => Vec::new(),
    };
    let escaped = AtomicUsize::new(0);
    let total = AtomicUsize::new(0);

    let mut per_function = Vec::with_capacity(fns.len());
    let mut max_defect = 0.0f64;
    let mut pass = true;

    if quad_path {
        for tf in fns {
            let phi = tf.f.clone();
            let direct = mu.integrate(&|p| phi(p), budget, seed)?;
            let phi2 = tf.f.clone();
            let pushed = mu.integrate_with_breaks(
                &|p| {
                    total.fetch_add(1, Ordering::Relaxed);
                    match sys.apply(p) {
                        Ok(y) => phi2(&y),
                        Err(_) => {
                            escaped.fetch_add(1, Ordering::Relaxed);
                            0.0
                        }
                    }
                },
                &cuts,
                budget,
                seed,
            )?;
            let defect = (pushed.value - direct.value).abs();
            let tolerance = 1e-3;
            if defect > tolerance {
                pass = false;
            }
            max_defect = max_defect.max(defect);
            per_function.push(InvarianceFn { label: tf.label.clone(), defect, tolerance });
        }
    } else {
        let pts = mu.sample(budget.mc_samples.min(200_000), seed);
        let images: Vec<Option<Point>> =
            par::map_slice(&pts, |p| sys.apply(p).ok());
        let n_escaped = images.iter().filter(|i| i.is_none()).count();
        escaped.store(n_escaped, Ordering::Relaxed);
        total.store(pts.len(), Ordering::Relaxed);
        for tf in fns {
            let phi = tf.f.clone();
            let diffs: Vec<f64> = pts
                .iter()
                .zip(&images)
                .filter_map(|(x, y)| y.as_ref().map(|y| phi(y) - phi(x)))
                .collect();
            let (mean, se) = par::mean_stderr(&diffs);
            let defect = mean.abs();
            let tolerance = 3.0 * se;
            if defect > tolerance.max(1e-12) {
                pass = false;
            }
            max_defect = max_defect.max(defect);
            per_function.push(InvarianceFn { label: tf.label.clone(), defect, tolerance });
        }
    }

    let t = total.load(Ordering::Relaxed).max(1);
    Ok(InvarianceReport {
        max_defect,
        pass,
        method: if quad_path { Method::Quadrature } else { Method::MonteCarlo },
        excluded_mass: escaped.load(Ordering::Relaxed) as f64 / t as f64,
        per_function,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub enum BStatus {
    Pass,
    Fail { component: String },
}

/// The four log-integrals of the integrability condition plus the
/// integral of their pointwise max.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IntegrabilityReport {
    pub log_plus_df: Integral,
    pub abs_log_d0: Integral,
    pub abs_log_rho: Integral,
    pub log_tankage: Integral,
    pub max_integral: Integral,
    pub status: BStatus,
    pub d0_infinity_branch_fraction: f64,
}

/// Estimate ∫ log+‖D_x f‖, ∫ |log d0|, ∫ |log rho_b|, ∫ log N_b and the
/// integral of their max; status is Pass iff every component converges to
/// a finite value under refinement.
pub fn condition_b_report(
    mu: &InvariantMeasure,
    sys: &SmoothSystem,
    profile: &RegularityProfile,
    hint_breaks: &[f64],
    budget: &Budget,
    seed: u64,
) -> Result<IntegrabilityReport> {
    let dom = &sys.domain;
    let cuts: Vec<f64> = {
        let mut c: Vec<f64> = match (&sys.branch_cuts, mu.support_1d()) {
            (Some(f), Some((lo, hi))) => f(lo, if hi.is_finite() { hi } else { 1e12 }),
            _ => Vec::new(),
        };
        c.extend_from_slice(hint_breaks);
        c
    };

    let f_df = |p: &Point| {
        crate::linalg::spectral_norm(&sys.jacobian(p)).max(1.0).ln()
    };
    let f_d0 = |p: &Point| dom.d0(p).map(|v| v.ln().abs()).unwrap_or(0.0);
    let f_rho = |p: &Point| profile.rho_sublevel(dom, p).map(|v| v.max(f64::MIN_POSITIVE).ln().abs()).unwrap_or(0.0);
    let f_tk = |p: &Point| profile.tankage(dom, p).map(|v| (v as f64).ln()).unwrap_or(0.0);
    let f_max = |p: &Point| f_df(p).max(f_d0(p)).max(f_rho(p)).max(f_tk(p));

    let mut status = BStatus::Pass;
    let mut run = |phi: &(dyn Fn(&Point) -> f64 + Sync), label: &str| -> Result<Integral> {
        match mu.integrate_refining(phi, &cuts, budget, seed, label) {
            Ok(i) => Ok(i),
            Err(Error::Divergent { component }) => {
                status = BStatus::Fail { component: component.clone() };
                Ok(Integral { value: f64::NAN, uncertainty: f64::NAN, method: Method::Quadrature })
            }
            Err(e) => Err(e),
        }
    };

    let log_plus_df = run(&f_df, "log+|Df|")?;
    let abs_log_d0 = run(&f_d0, "|log d0|")?;
    let abs_log_rho = run(&f_rho, "|log rho_b|")?;
    let log_tankage = run(&f_tk, "log N_b")?;
    let max_integral = run(&f_max, "max-integrand")?;

    // branch statistics of d0 on mu-samples
    let pts = mu.sample(4096, seed ^ 0x5eed);
    let hits: Vec<f64> = par::map_slice(&pts, |p| {
        match dom.d0_branch(p) {
            Ok(crate::geometry::D0Branch::Infinity) => 1.0,
            _ => 0.0,
        }
    });
    let frac = par::pairwise_sum(&hits) / hits.len().max(1) as f64;

    Ok(IntegrabilityReport {
        log_plus_df,
        abs_log_d0,
        abs_log_rho,
        log_tankage,
        max_integral,
        status,
        d0_infinity_branch_fraction: frac,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn uniform_samples_reproducible() {
        let mu = registry::measure("uniform01").unwrap();
        let a = mu.sample(4, 42);
        let b = mu.sample(4, 42);
        assert_eq!(a, b);
        assert!(a.iter().all(|p| p.coords[0] > 0.0 && p.coords[0] < 1.0));
    }

    #[test]
    fn empirical_single_point() {
        let mu = InvariantMeasure::empirical("pt", vec![Point::one(0.3)]).unwrap();
        for p in mu.sample(10, 1) {
            assert_eq!(p.coords[0], 0.3);
        }
    }

    #[test]
    fn integrate_uniform_mean() {
        let mu = registry::measure("uniform01").unwrap();
        let r = mu.integrate(&|p: &Point| p.coords[0], &Budget::default(), 0).unwrap();
        assert!((r.value - 0.5).abs() < 1e-9, "value {}", r.value);
        let one = mu.integrate(&|_p: &Point| 1.0, &Budget::default(), 0).unwrap();
        assert!((one.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integrate_gauss_log_singular() {
        // ∫ log(1/x^2) dmu = pi^2/(6 ln 2) for the 1/((1+x) ln 2) density
        let mu = registry::measure("gauss-density").unwrap();
        let r = mu
            .integrate(&|p: &Point| -2.0 * p.coords[0].ln(), &Budget::default(), 0)
            .unwrap();
        let expect = std::f64::consts::PI.powi(2) / (6.0 * 2f64.ln());
        assert!((r.value - expect).abs() < 1e-4, "value {} expect {expect}", r.value);
    }

    #[test]
    fn gauss_density_sample_mean() {
        // E[x] = 1/ln2 - 1
        let mu = registry::measure("gauss-density").unwrap();
        let pts = mu.sample(200_000, 3);
        let vals: Vec<f64> = pts.iter().map(|p| p.coords[0]).collect();
        let (mean, _) = par::mean_stderr(&vals);
        let expect = 1.0 / 2f64.ln() - 1.0;
        assert!((mean - expect).abs() < 3e-3, "mean {mean} expect {expect}");
    }

    #[test]
    fn mc_uncertainty_shrinks_with_budget() {
        let mu = registry::measure("uniform-square").unwrap();
        let mut ratios = Vec::new();
        for trial in 0..10u64 {
            let b1 = Budget { quad_evals: 0, mc_samples: 4000 , };
            let b2 = Budget { quad_evals: 0, mc_samples: 8000 };
            let r1 = mu.integrate(&|p: &Point| p.coords[0] * p.coords[1], &b1, trial).unwrap();
            let r2 = mu.integrate(&|p: &Point| p.coords[0] * p.coords[1], &b2, trial + 100).unwrap();
            ratios.push(r1.uncertainty / r2.uncertainty);
        }
        let (mean_ratio, _) = par::mean_stderr(&ratios);
        assert!(mean_ratio > 1.2 && mean_ratio < 1.7, "ratio {mean_ratio}");
    }

    #[test]
    fn invariance_doubling_uniform() {
        let sys = registry::system("doubling").unwrap();
        let mu = registry::measure("uniform01").unwrap();
        let phi = vec![TestFunction {
            label: "cos2pix".into(),
            f: Arc::new(|p: &Point| (2.0 * std::f64::consts::PI * p.coords[0]).cos()),
        }];
        let rep = check_invariance(&mu, &sys, &phi, &Budget::default(), 0).unwrap();
        assert!(rep.max_defect <= 1e-6, "defect {}", rep.max_defect);
        assert!(rep.pass);
    }

    #[test]
    fn invariance_gauss_pair() {
        let sys = registry::system("gauss").unwrap();
        let mu = registry::measure("gauss-density").unwrap();
        let fns = default_test_functions(&mu);
        let rep = check_invariance(&mu, &sys, &fns, &Budget::default(), 0).unwrap();
        assert!(rep.max_defect <= 1e-3, "defect {}", rep.max_defect);
        assert!(rep.pass);
    }

    #[test]
    fn invariance_rejects_wrong_pairing() {
        let sys = registry::system("doubling").unwrap();
        let mu = registry::measure("gauss-density").unwrap();
        let fns = default_test_functions(&mu);
        let rep = check_invariance(&mu, &sys, &fns, &Budget::default(), 0).unwrap();
        assert!(rep.max_defect > 0.05, "defect {}", rep.max_defect);
        assert!(!rep.pass);
    }

    #[test]
    fn condition_b_doubling() {
        let sys = registry::system("doubling").unwrap();
        let mu = registry::measure("uniform01").unwrap();
        let profile = registry::profile("doubling").unwrap();
        let rep =
            condition_b_report(&mu, &sys, &profile, &[0.5], &Budget::default(), 0).unwrap();
        assert!(matches!(rep.status, BStatus::Pass));
        assert!((rep.log_plus_df.value - 2f64.ln()).abs() < 1e-6);
        // ∫ |log min(x,1-x)| dx = 1 + ln 2
        assert!((rep.abs_log_d0.value - (1.0 + 2f64.ln())).abs() < 1e-4,
            "d0 integral {}", rep.abs_log_d0.value);
        assert_eq!(rep.abs_log_rho.value, 0.0);
        assert_eq!(rep.log_tankage.value, 0.0);
        assert!(rep.max_integral.value >= rep.abs_log_d0.value - 1e-9);
    }

    #[test]
    fn condition_b_rotation_trivial_rho() {
        let sys = registry::rotation_system(0.381966);
        let mu = registry::measure("uniform01").unwrap();
        let profile = RegularityProfile::trivial(1.5);
        let rep = condition_b_report(&mu, &sys, &profile, &[], &Budget::default(), 0).unwrap();
        assert_eq!(rep.abs_log_rho.value, 0.0);
        assert_eq!(rep.log_tankage.value, 0.0);
    }

    #[test]
    fn divergent_integrand_flagged() {
        let mu = registry::measure("uniform01").unwrap();
        let r = mu.integrate_refining(
            &|p: &Point| 1.0 / p.coords[0],
            &[],
            &Budget { quad_evals: 40_000, mc_samples: 1000 },
            0,
            "1/x",
        );
        assert!(matches!(r, Err(Error::Divergent { .. })), "got {r:?}");
    }

    #[test]
    fn loaders_roundtrip() {
        let dir = std::env::temp_dir().join("ruelle-measure-test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv = dir.join("pts.csv");
        std::fs::write(&csv, "0.25,0.5\n0.75,0.125\n").unwrap();
        let m = InvariantMeasure::load_csv(&csv, "csv").unwrap();
        assert_eq!(m.dim, 2);
        match &m.kind {
            MeasureKind::Empirical(p) => assert_eq!(p.len(), 2),
            _ => panic!(),
        }

        let bin = dir.join("pts.f64");
        let mut bytes = Vec::new();
        for v in [0.25f64, 0.5, 0.75, 0.125] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&bin, bytes).unwrap();
        let m = InvariantMeasure::load_f64le(&bin, 2, "bin").unwrap();
        assert_eq!(m.dim, 2);
        match &m.kind {
            MeasureKind::Empirical(p) => {
                assert_eq!(p.len(), 2);
                assert_eq!(p[1].coords, vec![0.75, 0.125]);
            }
            _ => panic!(),
        }
    }
}
