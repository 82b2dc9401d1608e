//! Chart-level Riemannian primitives.
//!
//! A manifold is represented as a chart domain in R^d with a boundary
//! distance, a reference point x0, and a metric descriptor. The proximity
//! gauge
//!
//! ```text
//! d0(x) = min{ d(x, boundary), 1 / d(x, x0) }
//! ```
//!
//! measures closeness to the boundary and to infinity simultaneously;
//! d*(x) = min{d0(x), 1} is its clip at 1. Regular radii, covering
//! tankage, separated nets, and box subdivisions all live here.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::Mat;

pub const GEOM_TOL: f64 = 1e-12;

/// A point in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn one(x: f64) -> Self {
        Point { coords: vec![x] }
    }

    pub fn two(x: f64, y: f64) -> Self {
        Point { coords: vec![x, y] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }

    pub fn euclid_dist(&self, other: &Point) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

type PointFn<T> = Arc<dyn Fn(&Point) -> T + Send + Sync>;

/// User-supplied exponential-map data for non-euclidean charts.
#[derive(Clone)]
pub struct CustomMetric {
    /// exp_x(v)
    pub exp: Arc<dyn Fn(&Point, &[f64]) -> Point + Send + Sync>,
    /// exp_x^{-1}(y)
    pub exp_inv: Arc<dyn Fn(&Point, &Point) -> Vec<f64> + Send + Sync>,
    /// ‖D_w exp_x‖ at tangent vector w
    pub exp_norm: Arc<dyn Fn(&Point, &[f64]) -> f64 + Send + Sync>,
    /// ‖D_y exp_x^{-1}‖
    pub exp_inv_norm: Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>,
    /// distance oracle
    pub dist: Arc<dyn Fn(&Point, &Point) -> f64 + Send + Sync>,
}

#[derive(Clone, Default)]
pub enum MetricKind {
    #[default]
    Euclidean,
    Custom(CustomMetric),
}

/// A d-dimensional chart domain with boundary description, reference
/// point, and metric data. Exponential maps default to translations.
#[derive(Clone)]
pub struct ChartDomain {
    pub dim: usize,
    pub reference: Point,
    pub metric: MetricKind,
    boundary_distance: PointFn<f64>,
    membership: PointFn<bool>,
}

impl ChartDomain {
    pub fn new(
        dim: usize,
        reference: Point,
        metric: MetricKind,
        boundary_distance: PointFn<f64>,
        membership: PointFn<bool>,
    ) -> Self {
        assert_eq!(reference.dim(), dim);
        ChartDomain { dim, reference, metric, boundary_distance, membership }
    }

    /// Open interval (lo, hi) with the euclidean metric.
    pub fn interval(lo: f64, hi: f64, x0: f64) -> Self {
        ChartDomain::new(
            1,
            Point::one(x0),
            MetricKind::Euclidean,
            Arc::new(move |p: &Point| (p.coords[0] - lo).min(hi - p.coords[0])),
            Arc::new(move |p: &Point| p.coords[0] > lo && p.coords[0] < hi),
        )
    }

    /// Open half line (lo, +inf), euclidean.
    pub fn half_line(lo: f64, x0: f64) -> Self {
        ChartDomain::new(
            1,
            Point::one(x0),
            MetricKind::Euclidean,
            Arc::new(move |p: &Point| p.coords[0] - lo),
            Arc::new(move |p: &Point| p.coords[0] > lo && p.coords[0].is_finite()),
        )
    }

    /// Open unit square (0,1)^2, euclidean.
    pub fn unit_square(x0: [f64; 2]) -> Self {
        ChartDomain::new(
            2,
            Point::two(x0[0], x0[1]),
            MetricKind::Euclidean,
            Arc::new(|p: &Point| {
                p.coords
                    .iter()
                    .map(|c| c.min(1.0 - c))
                    .fold(f64::INFINITY, f64::min)
            }),
            Arc::new(|p: &Point| p.coords.iter().all(|c| *c > 0.0 && *c < 1.0)),
        )
    }

    /// Boundaryless chart covering all of R^d.
    pub fn boundaryless(dim: usize, x0: Point) -> Self {
        ChartDomain::new(
            dim,
            x0,
            MetricKind::Euclidean,
            Arc::new(|_p: &Point| f64::INFINITY),
            Arc::new(|p: &Point| p.is_finite()),
        )
    }

    pub fn contains(&self, x: &Point) -> bool {
        x.dim() == self.dim && x.is_finite() && (self.membership)(x)
    }

    pub fn boundary_dist(&self, x: &Point) -> f64 {
        (self.boundary_distance)(x)
    }

    pub fn dist(&self, a: &Point, b: &Point) -> f64 {
        match &self.metric {
            MetricKind::Euclidean => a.euclid_dist(b),
            MetricKind::Custom(m) => (m.dist)(a, b),
        }
    }

    pub fn exp(&self, x: &Point, v: &[f64]) -> Point {
        match &self.metric {
            MetricKind::Euclidean => Point::new(
                x.coords.iter().zip(v).map(|(a, b)| a + b).collect(),
            ),
            MetricKind::Custom(m) => (m.exp)(x, v),
        }
    }

    pub fn exp_inv(&self, x: &Point, y: &Point) -> Vec<f64> {
        match &self.metric {
            MetricKind::Euclidean => x
                .coords
                .iter()
                .zip(&y.coords)
                .map(|(a, b)| b - a)
                .collect(),
            MetricKind::Custom(m) => (m.exp_inv)(x, y),
        }
    }

    /// Proximity gauge d0(x) = min{boundary distance, 1/dist(x, x0)}.
    /// At x = x0 the reciprocal term is +inf and the boundary term alone
    /// decides; on boundaryless charts the reciprocal term alone decides.
    pub fn d0(&self, x: &Point) -> Result<f64> {
        if !self.contains(x) {
            return Err(Error::OutsideDomain);
        }
        let bd = self.boundary_dist(x);
        let r = self.dist(x, &self.reference);
        let inv = if r > 0.0 { 1.0 / r } else { f64::INFINITY };
        Ok(bd.min(inv))
    }

    /// Which branch of d0 is active; `Infinity` means the reciprocal term.
    pub fn d0_branch(&self, x: &Point) -> Result<D0Branch> {
        if !self.contains(x) {
            return Err(Error::OutsideDomain);
        }
        let bd = self.boundary_dist(x);
        let r = self.dist(x, &self.reference);
        let inv = if r > 0.0 { 1.0 / r } else { f64::INFINITY };
        Ok(if inv < bd { D0Branch::Infinity } else { D0Branch::Boundary })
    }

    /// d*(x) = min{d0(x), 1}, always in (0, 1].
    pub fn d_star(&self, x: &Point) -> Result<f64> {
        Ok(self.d0(x)?.min(1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum D0Branch {
    Boundary,
    Infinity,
}

/// Whether the regular radius is clipped to the boundary clearance.
/// `PureNorm` follows the derivative-norm definition literally (radius 1
/// in euclidean charts); `ClipToBoundary` additionally keeps the ball
/// inside the open domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RadiusPolicy {
    #[serde(rename = "pure-norm")]
    PureNorm,
    #[serde(rename = "clip")]
    ClipToBoundary,
}

/// Parameters for regular-radius and tankage estimation.
#[derive(Debug, Clone, Copy)]
pub struct ProfileConfig {
    pub b: f64,
    pub policy: RadiusPolicy,
    /// bisection tolerance for the custom-metric radius search
    pub bisect_tol: f64,
    /// points sampled per dimension inside a candidate ball
    pub ball_samples: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { b: 1.5, policy: RadiusPolicy::PureNorm, bisect_tol: 1e-3, ball_samples: 9 }
    }
}

/// Largest r <= 1 such that the exponential map and its inverse have
/// derivative norms <= b on B(y, r). Exact for euclidean charts (all
/// derivative norms equal 1); a sampled bisection for custom metrics.
pub fn regular_radius_at(domain: &ChartDomain, cfg: &ProfileConfig, y: &Point) -> Result<f64> {
    if !domain.contains(y) {
        return Err(Error::OutsideDomain);
    }
    match &domain.metric {
        MetricKind::Euclidean => {
            let r = match cfg.policy {
                RadiusPolicy::PureNorm => 1.0,
                RadiusPolicy::ClipToBoundary => domain.boundary_dist(y).min(1.0),
            };
            Ok(r)
        }
        MetricKind::Custom(m) => {
            let admissible = |r: f64| -> bool {
                let pts = ball_grid(y, r, cfg.ball_samples);
                for x1 in &pts {
                    for x2 in &pts {
                        if (m.dist)(y, x1) > r || (m.dist)(y, x2) > r {
                            continue;
                        }
                        let w = (m.exp_inv)(x1, x2);
                        if (m.exp_norm)(x1, &w) > cfg.b + GEOM_TOL {
                            return false;
                        }
                        if (m.exp_inv_norm)(x1, x2) > cfg.b + GEOM_TOL {
                            return false;
                        }
                    }
                }
                true
            };
            let clip = match cfg.policy {
                RadiusPolicy::PureNorm => 1.0,
                RadiusPolicy::ClipToBoundary => domain.boundary_dist(y).min(1.0),
            };
            if admissible(clip) {
                return Ok(clip);
            }
            let mut lo = cfg.bisect_tol;
            if !admissible(lo) {
                return Err(Error::Resolution { min_tested: lo });
            }
            let mut hi = clip;
            while hi - lo > cfg.bisect_tol {
                let mid = 0.5 * (lo + hi);
                if admissible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        }
    }
}

/// Deterministic grid of chart points inside the coordinate ball B(y, r).
fn ball_grid(y: &Point, r: f64, per_dim: usize) -> Vec<Point> {
    let d = y.dim();
    let n = per_dim.max(2);
    let mut pts = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let mut coords = Vec::with_capacity(d);
        for (k, i) in idx.iter().enumerate() {
            let t = -1.0 + 2.0 * (*i as f64) / ((n - 1) as f64);
            coords.push(y.coords[k] + r * t);
        }
        let p = Point::new(coords);
        if y.euclid_dist(&p) <= r + GEOM_TOL {
            pts.push(p);
        }
        // next multi-index
        let mut k = 0;
        loop {
            if k == d {
                return pts;
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Regular radius over the sublevel set {y : d0(y) >= d0(x)}, estimated as
/// the minimum of [`regular_radius_at`] over a deterministic grid. The set
/// is bounded: d0 >= c forces dist(y, x0) <= 1/c.
#[derive(Debug, Clone, Copy)]
pub struct SublevelEstimate {
    pub value: f64,
    pub resolution: f64,
}

pub fn sublevel_regular_radius(
    domain: &ChartDomain,
    cfg: &ProfileConfig,
    x: &Point,
    grid_per_dim: usize,
) -> Result<SublevelEstimate> {
    let c = domain.d0(x)?;
    let pts = sublevel_grid(domain, c, grid_per_dim)?;
    let resolution = 2.0 / (c * grid_per_dim.max(2) as f64);
    let mut best = f64::INFINITY;
    for p in &pts {
        best = best.min(regular_radius_at(domain, cfg, p)?);
    }
    // x itself is in its own sublevel set
    best = best.min(regular_radius_at(domain, cfg, x)?);
    Ok(SublevelEstimate { value: best, resolution })
}

fn sublevel_grid(domain: &ChartDomain, c: f64, grid_per_dim: usize) -> Result<Vec<Point>> {
    if !(c > 0.0) {
        return Err(Error::EmptySublevel);
    }
    let d = domain.dim;
    let n = grid_per_dim.max(2);
    let radius = 1.0 / c;
    let x0 = &domain.reference;
    let mut pts = Vec::new();
    let mut idx = vec![0usize; d];
    loop {
        let mut coords = Vec::with_capacity(d);
        for (k, i) in idx.iter().enumerate() {
            let t = -1.0 + 2.0 * (*i as f64) / ((n - 1) as f64);
            coords.push(x0.coords[k] + radius * t);
        }
        let p = Point::new(coords);
        if domain.contains(&p) {
            if let Ok(v) = domain.d0(&p) {
                if v >= c - GEOM_TOL {
                    pts.push(p);
                }
            }
        }
        let mut k = 0;
        loop {
            if k == d {
                if pts.is_empty() {
                    return Err(Error::EmptySublevel);
                }
                return Ok(pts);
            }
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

/// Greedy covering count of the sublevel set {y : d0(y) >= d0(x)} by balls
/// of the sublevel regular radius — an upper bound on the true minimal
/// cover at the given grid resolution.
pub fn tankage(
    domain: &ChartDomain,
    cfg: &ProfileConfig,
    x: &Point,
    grid_resolution: f64,
) -> Result<u64> {
    let c = domain.d0(x)?;
    let grid_per_dim = ((2.0 / (c * grid_resolution)).ceil() as usize).clamp(2, 4001);
    let rho = sublevel_regular_radius(domain, cfg, x, grid_per_dim)?.value;
    if grid_resolution >= rho {
        return Err(Error::CoarseGrid { resolution: grid_resolution, radius: rho });
    }
    let pts = sublevel_grid(domain, c, grid_per_dim)?;
    let mut covered = vec![false; pts.len()];
    let mut count = 0u64;
    for i in 0..pts.len() {
        if covered[i] {
            continue;
        }
        count += 1;
        let center = &pts[i];
        for (j, p) in pts.iter().enumerate() {
            if !covered[j] && domain.dist(center, p) <= rho {
                covered[j] = true;
            }
        }
    }
    Ok(count.max(1))
}

/// Greedy maximal separated net over candidates *in the given order*:
/// a candidate joins the net iff its distance to every accepted point
/// exceeds eps. Returns indices into `candidates`. Every rejected
/// candidate is within eps of some net point, so the candidate set is
/// covered by closed eps-balls around the net.
pub fn separated_net(candidates: &[Point], eps: f64) -> Vec<usize> {
    separated_net_with(candidates, eps, &|a, b| a.euclid_dist(b))
}

pub fn separated_net_with(
    candidates: &[Point],
    eps: f64,
    dist: &dyn Fn(&Point, &Point) -> f64,
) -> Vec<usize> {
    assert!(eps > 0.0, "separated_net: eps must be positive");
    let mut net: Vec<usize> = Vec::new();
    'cand: for (i, c) in candidates.iter().enumerate() {
        for &j in &net {
            if dist(&candidates[j], c) <= eps {
                continue 'cand;
            }
        }
        net.push(i);
    }
    net
}

/// Indices that sort points lexicographically by coordinates — the fixed
/// candidate order used for reproducible nets.
pub fn lex_order(points: &[Point]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        for (x, y) in points[a].coords.iter().zip(&points[b].coords) {
            match x.partial_cmp(y) {
                Some(std::cmp::Ordering::Equal) | None => continue,
                Some(o) => return o,
            }
        }
        a.cmp(&b)
    });
    idx
}

/// Upper bound C01 * ceil(r/eps)^d on the cardinality of a maximal
/// eps-separated set inside a ball of radius r at regular scale.
pub fn covering_count_bound(r: f64, eps: f64, c01: f64, d: usize) -> u64 {
    assert!(r > 0.0 && eps > 0.0);
    let per_axis = (r / eps).ceil().max(1.0);
    let raw = c01 * per_axis.powi(d as i32);
    if raw >= u64::MAX as f64 {
        u64::MAX
    } else {
        raw.ceil() as u64
    }
}

/// Default packing constant (2 ceil(b sqrt(d)) + 1)^d for a b-bi-Lipschitz
/// chart; configurable at the call sites that consume it.
pub fn default_c01(b: f64, d: usize) -> f64 {
    (2.0 * (b * (d as f64).sqrt()).ceil() + 1.0).powi(d as i32)
}

type ProfileFn<T> = Arc<dyn Fn(&ChartDomain, &Point) -> Result<T> + Send + Sync>;

/// Evaluators for the regularity quantities: the pointwise regular radius,
/// its infimum over the sublevel set {d0 >= d0(x)}, and the covering
/// tankage of that set. `analytic` profiles carry closed forms; the
/// `estimated` profile falls back to the grid estimators above and is
/// labelled with its resolution.
#[derive(Clone)]
pub struct RegularityProfile {
    pub b: f64,
    pub policy: RadiusPolicy,
    pub mode: &'static str,
    rho_point: ProfileFn<f64>,
    rho_sublevel: ProfileFn<f64>,
    tankage_fn: ProfileFn<u64>,
}

impl RegularityProfile {
    pub fn analytic(
        b: f64,
        policy: RadiusPolicy,
        rho_point: ProfileFn<f64>,
        rho_sublevel: ProfileFn<f64>,
        tankage_fn: ProfileFn<u64>,
    ) -> Self {
        RegularityProfile { b, policy, mode: "analytic", rho_point, rho_sublevel, tankage_fn }
    }

    /// Grid-backed profile; `grid_per_dim` controls the sublevel grids and
    /// `tank_resolution` the tankage discretization.
    pub fn estimated(cfg: ProfileConfig, grid_per_dim: usize, tank_resolution: f64) -> Self {
        let c1 = cfg;
        let c2 = cfg;
        let c3 = cfg;
        RegularityProfile {
            b: cfg.b,
            policy: cfg.policy,
            mode: "estimated",
            rho_point: Arc::new(move |dom, y| regular_radius_at(dom, &c1, y)),
            rho_sublevel: Arc::new(move |dom, x| {
                Ok(sublevel_regular_radius(dom, &c2, x, grid_per_dim)?.value)
            }),
            tankage_fn: Arc::new(move |dom, x| tankage(dom, &c3, x, tank_resolution)),
        }
    }

    /// Constant profile rho == 1, N == 1 for bounded euclidean charts under
    /// the pure-norm policy (diameter <= 2 keeps every sublevel set inside
    /// one regular ball).
    pub fn trivial(b: f64) -> Self {
        RegularityProfile::analytic(
            b,
            RadiusPolicy::PureNorm,
            Arc::new(|_, _| Ok(1.0)),
            Arc::new(|_, _| Ok(1.0)),
            Arc::new(|_, _| Ok(1)),
        )
    }

    pub fn rho_point(&self, domain: &ChartDomain, y: &Point) -> Result<f64> {
        (self.rho_point)(domain, y)
    }

    pub fn rho_sublevel(&self, domain: &ChartDomain, x: &Point) -> Result<f64> {
        (self.rho_sublevel)(domain, x)
    }

    pub fn tankage(&self, domain: &ChartDomain, x: &Point) -> Result<u64> {
        (self.tankage_fn)(domain, x)
    }
}

/// A box element: anchor point (net point), orthonormal frame, center
/// offset in the tangent chart, half widths, and provenance indices.
#[derive(Debug, Clone)]
pub struct BoxElement {
    pub anchor: Point,
    pub frame: Mat,
    pub center_offset: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub level: u32,
    pub net_index: u32,
    pub cell_index: Option<u128>,
}

impl BoxElement {
    /// The cube of half width `a` centered at the anchor, standard frame.
    pub fn cube(anchor: Point, a: f64, level: u32, net_index: u32) -> Self {
        let d = anchor.dim();
        BoxElement {
            anchor,
            frame: Mat::identity(d, d),
            center_offset: vec![0.0; d],
            half_widths: vec![a; d],
            level,
            net_index,
            cell_index: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.anchor.dim()
    }

    pub fn frame_orthonormality_defect(&self) -> f64 {
        crate::linalg::orthonormality_defect(&self.frame)
    }

    /// Tangent coordinates of `p` relative to the anchor frame.
    pub fn tangent_coords(&self, domain: &ChartDomain, p: &Point) -> Vec<f64> {
        let v = domain.exp_inv(&self.anchor, p);
        let d = self.dim();
        let mut out = vec![0.0; d];
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += self.frame[(i, j)] * v[i];
            }
            out[j] = acc;
        }
        out
    }

    pub fn contains(&self, domain: &ChartDomain, p: &Point) -> bool {
        let t = self.tangent_coords(domain, p);
        t.iter()
            .zip(&self.center_offset)
            .zip(&self.half_widths)
            .all(|((ti, ci), hi)| (ti - ci).abs() <= *hi)
    }

    /// Euclidean volume of the box (product of side lengths).
    pub fn volume(&self) -> f64 {
        self.half_widths.iter().map(|h| 2.0 * h).product()
    }

    /// Dyadic subdivision into 2^(l*d) subcubes of half width a/2^l with
    /// centers at odd multiples k*a/2^l, k in {1-2^l, ..., 2^l-1}, k odd.
    /// Only valid for cube elements (equal half widths).
    pub fn subdivide(&self, l: u32) -> Result<Vec<BoxElement>> {
        if l == 0 {
            return Err(Error::InvalidArgument("subdivision level must be >= 1".into()));
        }
        let d = self.dim();
        if (l as u64) * (d as u64) > 24 {
            return Err(Error::InvalidArgument(format!(
                "refusing to enumerate 2^{} subcells; use implicit indexing",
                l as u64 * d as u64
            )));
        }
        let a = self.half_widths[0];
        if self.half_widths.iter().any(|h| (*h - a).abs() > GEOM_TOL * a.max(1.0)) {
            return Err(Error::InvalidArgument("subdivide expects a cube".into()));
        }
        let cells_per_axis = 1u64 << l;
        let total = 1u128 << (l as u64 * d as u64);
        let sub = a / cells_per_axis as f64;
        let mut out = Vec::with_capacity(total as usize);
        for j in 0..total {
            let ks = subcell_multi_index(j, l, d);
            let mut offset = self.center_offset.clone();
            for (dim_i, k) in ks.iter().enumerate() {
                offset[dim_i] += *k as f64 * sub;
            }
            out.push(BoxElement {
                anchor: self.anchor.clone(),
                frame: self.frame.clone(),
                center_offset: offset,
                half_widths: vec![sub; d],
                level: self.level,
                net_index: self.net_index,
                cell_index: Some(j),
            });
        }
        Ok(out)
    }

    /// Index of the subcell of the 2^(l*d) subdivision containing `p`, or
    /// None if `p` is outside the parent cube. Face ties go to the lower
    /// index, matching the first-hit disjointification order.
    pub fn subcell_of(&self, domain: &ChartDomain, p: &Point, l: u32) -> Option<u128> {
        let t = self.tangent_coords(domain, p);
        let rel: Vec<f64> = t
            .iter()
            .zip(&self.center_offset)
            .map(|(ti, ci)| ti - ci)
            .collect();
        cube_subcell_index(&rel, self.half_widths[0], l)
    }
}

/// Subcell index of the 2^(l*d) dyadic subdivision of a cube with half
/// width `a`, given coordinates relative to the cube center. None when
/// the point lies outside the cube; face ties go to the lower index.
pub fn cube_subcell_index(rel: &[f64], a: f64, l: u32) -> Option<u128> {
    for r in rel {
        if r.abs() > a {
            return None;
        }
    }
    if l == 0 {
        return Some(0);
    }
    let cells_per_axis = 1i64 << l;
    let sub = a / cells_per_axis as f64;
    let mut j: u128 = 0;
    for r in rel {
        // odd k with |r/(a/2^l) - k| <= 1, smallest such k
        let u = if sub > 0.0 && (r / sub).is_finite() { r / sub } else { 0.0 };
        let mut k = {
            let q = (u - 1.0).ceil() as i64;
            if q.rem_euclid(2) == 1 {
                q
            } else {
                q + 1
            }
        };
        k = k.clamp(1 - cells_per_axis, cells_per_axis - 1);
        let axis_idx = ((k - (1 - cells_per_axis)) / 2) as u128;
        j = j * (cells_per_axis as u128) + axis_idx;
    }
    Some(j)
}

/// Multi-index (k_1..k_d), each an odd integer, for linear subcell index
/// `j` in lexicographic order (first coordinate most significant).
pub fn subcell_multi_index(j: u128, l: u32, d: usize) -> Vec<i64> {
    let cells_per_axis = 1u128 << l;
    let mut ks = vec![0i64; d];
    let mut rest = j;
    for dim_i in (0..d).rev() {
        let axis_idx = (rest % cells_per_axis) as i64;
        rest /= cells_per_axis;
        ks[dim_i] = (1 - (cells_per_axis as i64)) + 2 * axis_idx;
    }
    ks
}
