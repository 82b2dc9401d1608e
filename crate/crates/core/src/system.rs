//! The C1 dynamical system: map evaluation, exact Jacobians, iterates,
//! derivative cocycles, exterior-power norms, and the empirical distortion
//! falsifier for the Hölder condition on ‖D_x f‖.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{ChartDomain, Point};
use crate::linalg::{self, Mat};

type MapFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
type JacFn = Arc<dyn Fn(&Point) -> Mat + Send + Sync>;
type PredFn = Arc<dyn Fn(&Point) -> bool + Send + Sync>;
type CutsFn = Arc<dyn Fn(f64, f64) -> Vec<f64> + Send + Sync>;

/// A C1 map f from an open subset U of the chart into the open chart,
/// with its exact Jacobian. Immutable after construction; all operations
/// are pure.
#[derive(Clone)]
pub struct SmoothSystem {
    pub name: String,
    pub domain: ChartDomain,
    map: MapFn,
    jac: JacFn,
    in_u: PredFn,
    /// Interior discontinuity/kink locations of f within an interval
    /// (1-D charts); used to seed quadrature panels.
    pub branch_cuts: Option<CutsFn>,
    singular_clearance: Option<Arc<dyn Fn(&Point) -> f64 + Send + Sync>>,
}

impl SmoothSystem {
    pub fn new(name: &str, domain: ChartDomain, map: MapFn, jac: JacFn) -> Self {
        SmoothSystem {
            name: name.to_string(),
            domain,
            map,
            jac,
            in_u: Arc::new(|_| true),
            branch_cuts: None,
            singular_clearance: None,
        }
    }

    pub fn with_u(mut self, in_u: PredFn) -> Self {
        self.in_u = in_u;
        self
    }

    pub fn with_branch_cuts(mut self, cuts: CutsFn) -> Self {
        self.branch_cuts = Some(cuts);
        self
    }

    pub fn with_singular_clearance(
        mut self,
        f: Arc<dyn Fn(&Point) -> f64 + Send + Sync>,
    ) -> Self {
        self.singular_clearance = Some(f);
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim
    }

    /// Is x in the open set U on which f is defined?
    pub fn in_domain_of_map(&self, x: &Point) -> bool {
        self.domain.contains(x) && (self.in_u)(x)
    }

    /// Distance to the nearest singular locus; +inf when smooth on U.
    pub fn singular_clearance(&self, x: &Point) -> f64 {
        match &self.singular_clearance {
            Some(f) => f(x),
            None => f64::INFINITY,
        }
    }

    /// One application of f; the image must stay in the open chart.
    pub fn apply(&self, x: &Point) -> Result<Point> {
        if !self.in_domain_of_map(x) {
            return Err(Error::Escape { step: 0 });
        }
        let y = (self.map)(x);
        if !self.domain.contains(&y) {
            return Err(Error::Escape { step: 1 });
        }
        Ok(y)
    }

    pub fn map_raw(&self, x: &Point) -> Point {
        (self.map)(x)
    }

    pub fn jacobian(&self, x: &Point) -> Mat {
        (self.jac)(x)
    }

    /// f^m(x); m = 0 is the identity. Escapes carry the exit step.
    pub fn iterate(&self, x: &Point, m: usize) -> Result<Point> {
        let mut cur = x.clone();
        for step in 0..m {
            if !self.in_domain_of_map(&cur) {
                return Err(Error::Escape { step });
            }
            cur = (self.map)(&cur);
            if !self.domain.contains(&cur) {
                return Err(Error::Escape { step: step + 1 });
            }
        }
        Ok(cur)
    }

    /// The orbit segment x, f(x), ..., f^m(x) (length m+1).
    pub fn orbit(&self, x: &Point, m: usize) -> Result<Vec<Point>> {
        let mut out = Vec::with_capacity(m + 1);
        out.push(x.clone());
        for step in 0..m {
            let cur = out.last().unwrap();
            if !self.in_domain_of_map(cur) {
                return Err(Error::Escape { step });
            }
            let next = (self.map)(cur);
            if !self.domain.contains(&next) {
                return Err(Error::Escape { step: step + 1 });
            }
            out.push(next);
        }
        Ok(out)
    }

    /// Per-step spectral norms ‖D_{f^j(x)} f‖ for j = 0..m-1 and the
    /// product of the starred norms (each factor floored at 1), carried in
    /// log2 space to survive long products.
    pub fn cocycle_norms(&self, x: &Point, m: usize) -> Result<CocycleNorms> {
        if m == 0 {
            return Ok(CocycleNorms { per_step: vec![], log2_starred: 0.0 });
        }
        let orbit = self.orbit(x, m - 1)?;
        let mut per_step = Vec::with_capacity(m);
        let mut log2_starred = 0.0;
        for p in orbit.iter().take(m) {
            let n = linalg::spectral_norm(&self.jacobian(p));
            per_step.push(n);
            log2_starred += n.max(1.0).log2();
        }
        Ok(CocycleNorms { per_step, log2_starred })
    }

    /// log ‖(D_x f^m)^∧‖ from a max-entry-scaled product of the Jacobians:
    /// the running matrix is renormalized each step and the scale carried
    /// in log space, so the raw product never overflows.
    pub fn exterior_log_norm(&self, x: &Point, m: usize) -> Result<f64> {
        if m == 0 {
            return Ok(0.0);
        }
        let orbit = self.orbit(x, m - 1)?;
        let d = self.dim();
        let mut acc = Mat::identity(d, d);
        let mut log_scale = 0.0;
        for p in orbit.iter().take(m) {
            acc = self.jacobian(p) * acc;
            let top = acc.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            if top == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            acc /= top;
            log_scale += top.ln();
        }
        let sigmas = linalg::singular_values_desc(&acc);
        let mut best = f64::NEG_INFINITY;
        let mut running = 0.0;
        for s in &sigmas {
            running += s.max(f64::MIN_POSITIVE).ln() + log_scale;
            best = best.max(running);
        }
        Ok(best)
    }
}

#[derive(Debug, Clone)]
pub struct CocycleNorms {
    pub per_step: Vec<f64>,
    pub log2_starred: f64,
}

impl CocycleNorms {
    pub fn starred_product(&self) -> f64 {
        self.log2_starred.exp2()
    }
}

/// Norm of the induced map on the full exterior algebra: the maximum over
/// kappa = 1..d of the product of the kappa largest singular values. The
/// empty product is excluded, so the result is at least the spectral norm.
pub fn exterior_norm(a: &Mat) -> f64 {
    let sigmas = linalg::singular_values_desc(a);
    let mut best = f64::NEG_INFINITY;
    let mut running = 1.0;
    for s in &sigmas {
        running *= s;
        best = best.max(running);
    }
    best
}

/// QR-maintained frame pushed through the derivative cocycle; the
/// workhorse behind spectrum estimation.
#[derive(Debug, Clone)]
pub struct CocycleState {
    pub base_point: Point,
    pub frame: Mat,
    pub log_diagonal_sums: Vec<f64>,
    pub steps: usize,
}

impl CocycleState {
    pub fn new(x: Point, dim: usize) -> Self {
        CocycleState {
            base_point: x,
            frame: Mat::identity(dim, dim),
            log_diagonal_sums: vec![0.0; dim],
            steps: 0,
        }
    }

    /// Push the frame through `span` cocycle steps, re-orthonormalize once
    /// (modified Gram-Schmidt, positive diagonal), accumulate log diagonal
    /// entries. A diagonal underflowing 1e-300 pins the corresponding sum
    /// at -inf (degenerate direction).
    pub fn advance(&mut self, sys: &SmoothSystem, span: usize) -> Result<()> {
        for _ in 0..span {
            if !sys.in_domain_of_map(&self.base_point) {
                return Err(Error::Escape { step: self.steps });
            }
            let j = sys.jacobian(&self.base_point);
            self.frame = j * &self.frame;
            self.base_point = sys.map_raw(&self.base_point);
            if !sys.domain.contains(&self.base_point) {
                return Err(Error::Escape { step: self.steps + 1 });
            }
            self.steps += 1;
        }
        let diag = linalg::mgs_qr(&mut self.frame);
        for (sum, r) in self.log_diagonal_sums.iter_mut().zip(&diag) {
            if *r < 1e-300 {
                *sum = f64::NEG_INFINITY;
            } else {
                *sum += r.ln();
            }
        }
        Ok(())
    }
}

/// Hölder-distortion parameters (alpha, C, a).
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DistortionParams {
    pub alpha: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
    pub a: f64,
}

impl DistortionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument("alpha must lie in (0,1)".into()));
        }
        if !(self.big_c > 1.0 && self.a > 1.0) {
            return Err(Error::InvalidArgument("C and a must exceed 1".into()));
        }
        Ok(())
    }
}

/// Sampling plan for the distortion falsifier. Base points come from the
/// caller (typically mu-samples) and are augmented with a log-spaced
/// ladder marching toward the boundary, where the d0^{-a} weight is
/// stressed hardest.
#[derive(Debug, Clone, Copy)]
pub struct DistortionPlan {
    pub pairs_per_point: usize,
    pub boundary_ladder: usize,
}

impl Default for DistortionPlan {
    fn default() -> Self {
        DistortionPlan { pairs_per_point: 8, boundary_ladder: 48 }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DistortionWitness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub quotient: f64,
    pub threshold: f64,
    pub ratio: f64,
}

/// Report of the empirical condition check on the derivative Hölder
/// quotient. This is a falsifier, not a prover: it can only refute the
/// condition for the given parameters on the sampled pairs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DistortionReport {
    pub params: DistortionParams,
    pub max_ratio: f64,
    pub pass: bool,
    pub pairs: usize,
    pub skipped: usize,
    pub witnesses: Vec<DistortionWitness>,
}

/// Empirical check of q(x,y) = |‖D_x f‖ - ‖D_y f‖| / d(x,y)^alpha against
/// C d0(x)^{-a} over y in B(x, min{1, d(x, boundary)^a}). Only the two
/// real numbers ‖D_x f‖ and ‖D_y f‖ are compared; no matrix difference
/// across tangent spaces is formed.
pub fn check_distortion(
    sys: &SmoothSystem,
    params: &DistortionParams,
    base_points: &[Point],
    plan: &DistortionPlan,
    rng: &mut ChaCha8Rng,
) -> Result<DistortionReport> {
    params.validate()?;
    let d = sys.dim();

    let mut points: Vec<Point> = base_points.to_vec();
    if let Some(seed) = base_points.first() {
        for k in 1..=plan.boundary_ladder {
            let t = 2f64.powi(-(k as i32));
            let mut probe = seed.clone();
            probe.coords[0] = seed.coords[0] * t;
            if sys.in_domain_of_map(&probe)
                && sys.domain.boundary_dist(&probe) < sys.domain.boundary_dist(seed)
            {
                points.push(probe);
            }
        }
    }

    let mut max_ratio = 0.0f64;
    let mut witnesses: Vec<DistortionWitness> = Vec::new();
    let mut pairs = 0usize;
    let mut skipped = 0usize;

    for x in &points {
        if !sys.in_domain_of_map(x) {
            skipped += 1;
            continue;
        }
        let bd = sys.domain.boundary_dist(x);
        let radius = if bd.is_finite() { bd.powf(params.a).min(1.0) } else { 1.0 };
        if !(radius > 0.0) {
            skipped += 1;
            continue;
        }
        let d0 = sys.domain.d0(x)?;
        let threshold = params.big_c * d0.powf(-params.a);
        let nx = linalg::spectral_norm(&sys.jacobian(x));
        for k in 0..plan.pairs_per_point {
            let r = radius * 2f64.powi(-((k % 12) as i32)) * rng.gen_range(0.5..1.0);
            let mut dir = vec![0.0; d];
            let mut norm = 0.0;
            for c in dir.iter_mut() {
                *c = rng.sample::<f64, _>(rand_distr::StandardNormal);
                norm += *c * *c;
            }
            let norm = norm.sqrt();
            if norm == 0.0 {
                skipped += 1;
                continue;
            }
            let y = Point::new(
                x.coords
                    .iter()
                    .zip(&dir)
                    .map(|(c, u)| c + r * u / norm)
                    .collect(),
            );
            if !sys.in_domain_of_map(&y) {
                skipped += 1;
                continue;
            }
            let dist = sys.domain.dist(x, &y);
            if dist == 0.0 || dist > radius {
                skipped += 1;
                continue;
            }
            let ny = linalg::spectral_norm(&sys.jacobian(&y));
            let quotient = (nx - ny).abs() / dist.powf(params.alpha);
            let ratio = quotient / threshold;
            pairs += 1;
            if ratio > max_ratio {
                max_ratio = ratio;
                witnesses.push(DistortionWitness {
                    x: x.coords.clone(),
                    y: y.coords.clone(),
                    quotient,
                    threshold,
                    ratio,
                });
                if witnesses.len() > 5 {
                    witnesses.remove(0);
                }
            }
        }
    }

    Ok(DistortionReport {
        params: *params,
        max_ratio,
        pass: max_ratio <= 1.0,
        pairs,
        skipped,
        witnesses,
    })
}

/// Central finite-difference Jacobian, for validating registered systems
/// against their declared exact Jacobians.
pub fn finite_difference_jacobian(sys: &SmoothSystem, x: &Point, h: f64) -> Result<Mat> {
    let d = sys.dim();
    let mut out = Mat::zeros(d, d);
    for j in 0..d {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp.coords[j] += h;
        xm.coords[j] -= h;
        if !sys.in_domain_of_map(&xp) || !sys.in_domain_of_map(&xm) {
            return Err(Error::OutsideDomain);
        }
        let fp = (sys.map)(&xp);
        let fm = (sys.map)(&xm);
        for i in 0..d {
            out[(i, j)] = (fp.coords[i] - fm.coords[i]) / (2.0 * h);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn iterate_examples() {
        let doubling = registry::system("doubling").unwrap();
        let x = doubling.iterate(&Point::one(0.1), 3).unwrap();
        assert!((x.coords[0] - 0.8).abs() < 1e-12);
        let same = doubling.iterate(&Point::one(0.37), 0).unwrap();
        assert_eq!(same.coords[0], 0.37);

        let gauss = registry::system("gauss").unwrap();
        let y = gauss.iterate(&Point::one(2.0 / 3.0), 1).unwrap();
        assert!((y.coords[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn escape_carries_step() {
        let doubling = registry::system("doubling").unwrap();
        // 0.5 maps to 0.0, the boundary
        match doubling.iterate(&Point::one(0.5), 3) {
            Err(Error::Escape { step }) => assert_eq!(step, 1),
            other => panic!("expected escape, got {other:?}"),
        }
    }

    #[test]
    fn cocycle_norm_examples() {
        let doubling = registry::system("doubling").unwrap();
        let n = doubling.cocycle_norms(&Point::one(0.3), 4).unwrap();
        assert_eq!(n.per_step, vec![2.0; 4]);
        assert!((n.starred_product() - 16.0).abs() < 1e-12);

        let gauss = registry::system("gauss").unwrap();
        let n = gauss.cocycle_norms(&Point::one(2.0 / 3.0), 1).unwrap();
        assert!((n.per_step[0] - 2.25).abs() < 1e-12);
        assert!((n.starred_product() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn identity_cocycle_is_trivial() {
        let id = registry::identity_system(1);
        let n = id.cocycle_norms(&Point::one(0.2), 5).unwrap();
        assert_eq!(n.starred_product(), 1.0);
    }

    #[test]
    fn exterior_norm_diagonal_examples() {
        let a = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.5]));
        assert!((exterior_norm(&a) - 2.0).abs() < 1e-12);
        let b = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0]));
        assert!((exterior_norm(&b) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn exterior_log_norm_examples() {
        let doubling = registry::system("doubling").unwrap();
        let g = doubling.exterior_log_norm(&Point::one(0.3), 10).unwrap();
        assert!((g - 10.0 * 2f64.ln()).abs() < 1e-10);

        let id = registry::identity_system(2);
        assert_eq!(id.exterior_log_norm(&Point::two(0.1, 0.2), 7).unwrap(), 0.0);

        let lin = registry::linear_system(&[2.0, 0.5]);
        let g = lin.exterior_log_norm(&Point::two(0.1, 0.2), 5).unwrap();
        assert!((g - 5.0 * 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn distortion_affine_passes() {
        let doubling = registry::system("doubling").unwrap();
        let params = DistortionParams { alpha: 0.5, big_c: 2.0, a: 1.5 };
        let pts: Vec<Point> = (1..40).map(|i| Point::one(i as f64 / 40.0)).collect();
        let mut rng = crate::rng::SeedTree::new(1).stream("distortion", 0);
        let rep =
            check_distortion(&doubling, &params, &pts, &DistortionPlan::default(), &mut rng)
                .unwrap();
        assert_eq!(rep.max_ratio, 0.0);
        assert!(rep.pass);
    }

    #[test]
    fn finite_difference_matches_declared_jacobian() {
        for name in ["doubling", "gauss", "logistic4", "tent", "doubling2d", "gauss-noncompact"] {
            let sys = registry::system(name).unwrap();
            let mut rng = crate::rng::SeedTree::new(11).stream("fd", 0);
            let mut checked = 0;
            let mut attempts = 0;
            while checked < 1000 && attempts < 100_000 {
                attempts += 1;
                let x = registry::sample_interior_point(&sys, &mut rng);
                if sys.singular_clearance(&x) < 5e-3 {
                    continue;
                }
                let h = 1e-7 * (1.0 + x.coords[0].abs());
                let (fd, exact) = match finite_difference_jacobian(&sys, &x, h) {
                    Ok(fd) => (fd, sys.jacobian(&x)),
                    Err(_) => continue,
                };
                let denom = linalg::spectral_norm(&exact).max(1e-8);
                let diff = linalg::spectral_norm(&(fd - &exact));
                assert!(
                    diff / denom <= 1e-5,
                    "{name}: FD mismatch at {:?}: rel {}",
                    x.coords,
                    diff / denom
                );
                checked += 1;
            }
            assert_eq!(checked, 1000, "{name}: not enough admissible sample points");
        }
    }
}
