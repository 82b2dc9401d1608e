//! Registered benchmark systems, invariant measures, regularity profiles,
//! and natural (Markov-style) partitions, addressable by name.
//!
//! The five benchmarks stress different hypotheses: doubling (boundary,
//! constant derivative), gauss (boundary plus unbounded derivative),
//! logistic4 (boundary, vanishing derivative), tent (boundary),
//! doubling2d (planar, exercises exterior powers), and gauss-noncompact
//! (the gauss map conjugated to (1, inf) by x -> 1/x, so the domain is
//! unbounded and the reciprocal branch of d0 is active).

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::entropy::{LabelKind, LabelPartition};
use crate::error::{Error, Result};
use crate::geometry::{ChartDomain, Point, RadiusPolicy, RegularityProfile};
use crate::linalg::Mat;
use crate::measure::InvariantMeasure;
use crate::system::{DistortionParams, SmoothSystem};

pub const SYSTEM_NAMES: [&str; 6] =
    ["doubling", "tent", "logistic4", "gauss", "gauss-noncompact", "doubling2d"];

pub const MEASURE_NAMES: [&str; 5] = [
    "uniform01",
    "gauss-density",
    "arcsine",
    "gauss-noncompact-density",
    "uniform-square",
];

const BRANCH_CUT_CAP: usize = 5000;

pub fn system(name: &str) -> Result<SmoothSystem> {
    match name {
        "doubling" => {
            let dom = ChartDomain::interval(0.0, 1.0, 0.5);
            Ok(SmoothSystem::new(
                "doubling",
                dom,
                Arc::new(|p: &Point| {
                    let x = p.coords[0];
                    Point::one(if x < 0.5 { 2.0 * x } else { 2.0 * x - 1.0 })
                }),
                Arc::new(|_p: &Point| Mat::from_element(1, 1, 2.0)),
            )
            .with_branch_cuts(Arc::new(|lo, hi| {
                if lo < 0.5 && 0.5 < hi {
                    vec![0.5]
                } else {
                    vec![]
                }
            }))
            .with_singular_clearance(Arc::new(|p: &Point| (p.coords[0] - 0.5).abs())))
        }
        "tent" => {
            let dom = ChartDomain::interval(0.0, 1.0, 0.5);
            Ok(SmoothSystem::new(
                "tent",
                dom,
                Arc::new(|p: &Point| {
                    let x = p.coords[0];
                    Point::one(if x <= 0.5 { 2.0 * x } else { 2.0 - 2.0 * x })
                }),
                Arc::new(|p: &Point| {
                    Mat::from_element(1, 1, if p.coords[0] <= 0.5 { 2.0 } else { -2.0 })
                }),
            )
            .with_branch_cuts(Arc::new(|lo, hi| {
                if lo < 0.5 && 0.5 < hi {
                    vec![0.5]
                } else {
                    vec![]
                }
            }))
            .with_singular_clearance(Arc::new(|p: &Point| (p.coords[0] - 0.5).abs())))
        }
        "logistic4" => {
            let dom = ChartDomain::interval(0.0, 1.0, 0.5);
            Ok(SmoothSystem::new(
                "logistic4",
                dom,
                Arc::new(|p: &Point| {
                    let x = p.coords[0];
                    Point::one(4.0 * x * (1.0 - x))
                }),
                Arc::new(|p: &Point| Mat::from_element(1, 1, 4.0 - 8.0 * p.coords[0])),
            )
            // smooth map; the cut marks the critical point for quadrature
            // panels and keeps finite differences away from Df = 0
            .with_branch_cuts(Arc::new(|lo, hi| {
                if lo < 0.5 && 0.5 < hi {
                    vec![0.5]
                } else {
                    vec![]
                }
            }))
            .with_singular_clearance(Arc::new(|p: &Point| (p.coords[0] - 0.5).abs())))
        }
        "gauss" => {
            let dom = ChartDomain::interval(0.0, 1.0, 0.5);
            Ok(SmoothSystem::new(
                "gauss",
                dom,
                Arc::new(|p: &Point| {
                    let x = p.coords[0];
                    let inv = 1.0 / x;
                    Point::one(inv - inv.floor())
                }),
                Arc::new(|p: &Point| {
                    let x = p.coords[0];
                    Mat::from_element(1, 1, -1.0 / (x * x))
                }),
            )
            .with_branch_cuts(Arc::new(|lo, hi| {
                // cuts at 1/k inside (lo, hi), largest first capped
                let mut out = Vec::new();
                let k_min = (1.0 / hi.min(1.0)).ceil().max(2.0) as u64;
                for k in k_min.. {
                    let c = 1.0 / k as f64;
                    if c <= lo || out.len() >= BRANCH_CUT_CAP {
                        break;
                    }
                    if c < hi {
                        out.push(c);
                    }
                }
                out
            }))
            .with_singular_clearance(Arc::new(|p: &Point| {
                let x = p.coords[0];
                if x <= 0.0 {
                    return 0.0;
                }
                let k = (1.0 / x).round().max(2.0);
                (x - 1.0 / k).abs().min((x - 1.0 / (k + 1.0)).abs())
            })))
        }
        "gauss-noncompact" => {
            // conjugate of the gauss map under x -> 1/x: G(y) = 1/frac(y)
            let dom = ChartDomain::half_line(1.0, 2.0);
            Ok(SmoothSystem::new(
                "gauss-noncompact",
                dom,
                Arc::new(|p: &Point| {
                    let y = p.coords[0];
                    Point::one(1.0 / (y - y.floor()))
                }),
                Arc::new(|p: &Point| {
                    let y = p.coords[0];
                    let fr = y - y.floor();
                    Mat::from_element(1, 1, -1.0 / (fr * fr))
                }),
            )
            .with_branch_cuts(Arc::new(|lo, hi| {
                let mut out = Vec::new();
                let mut k = lo.floor().max(2.0);
                while k < hi && out.len() < BRANCH_CUT_CAP {
                    if k > lo {
                        out.push(k);
                    }
                    k += 1.0;
                }
                out
            }))
            .with_singular_clearance(Arc::new(|p: &Point| {
                let y = p.coords[0];
                let k = y.round().max(2.0);
                (y - k).abs()
            })))
        }
        "doubling2d" => {
            let dom = ChartDomain::unit_square([0.5, 0.5]);
            Ok(SmoothSystem::new(
                "doubling2d",
                dom,
                Arc::new(|p: &Point| {
                    let wrap = |x: f64| if x < 0.5 { 2.0 * x } else { 2.0 * x - 1.0 };
                    Point::two(wrap(p.coords[0]), wrap(p.coords[1]))
                }),
                Arc::new(|_p: &Point| Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0]))),
            )
            .with_singular_clearance(Arc::new(|p: &Point| {
                (p.coords[0] - 0.5).abs().min((p.coords[1] - 0.5).abs())
            })))
        }
        other => Err(Error::Config(format!("unknown system '{other}'"))),
    }
}

/// Identity map on a boundaryless chart; test fixture.
pub fn identity_system(dim: usize) -> SmoothSystem {
    let dom = ChartDomain::boundaryless(dim, Point::new(vec![0.0; dim]));
    SmoothSystem::new(
        "identity",
        dom,
        Arc::new(|p: &Point| p.clone()),
        Arc::new(move |p: &Point| Mat::identity(p.dim(), p.dim())),
    )
}

/// Diagonal linear map on a boundaryless chart; test fixture.
pub fn linear_system(diag: &[f64]) -> SmoothSystem {
    let d = diag.len();
    let dom = ChartDomain::boundaryless(d, Point::new(vec![0.0; d]));
    let diag_v: Vec<f64> = diag.to_vec();
    let diag_j = diag_v.clone();
    SmoothSystem::new(
        "linear",
        dom,
        Arc::new(move |p: &Point| {
            Point::new(p.coords.iter().zip(&diag_v).map(|(c, d)| c * d).collect())
        }),
        Arc::new(move |_p: &Point| {
            Mat::from_diagonal(&nalgebra::DVector::from_vec(diag_j.clone()))
        }),
    )
}

/// Rigid rotation x -> x + theta mod 1 on a boundaryless circle chart.
pub fn rotation_system(theta: f64) -> SmoothSystem {
    let dom = ChartDomain::boundaryless(1, Point::one(0.5));
    SmoothSystem::new(
        "rotation",
        dom,
        Arc::new(move |p: &Point| {
            let v = p.coords[0] + theta;
            Point::one(v - v.floor())
        }),
        Arc::new(|_p: &Point| Mat::from_element(1, 1, 1.0)),
    )
}

pub fn measure(name: &str) -> Result<InvariantMeasure> {
    match name {
        "uniform01" => InvariantMeasure::density_1d("uniform01", Arc::new(|_x| 1.0), (0.0, 1.0)),
        "gauss-density" => InvariantMeasure::density_1d(
            "gauss-density",
            Arc::new(|x: f64| 1.0 / ((1.0 + x) * std::f64::consts::LN_2)),
            (0.0, 1.0),
        ),
        "arcsine" => InvariantMeasure::density_1d(
            "arcsine",
            Arc::new(|x: f64| 1.0 / (std::f64::consts::PI * (x * (1.0 - x)).sqrt())),
            (0.0, 1.0),
        ),
        "gauss-noncompact-density" => InvariantMeasure::density_1d(
            "gauss-noncompact-density",
            Arc::new(|y: f64| 1.0 / (std::f64::consts::LN_2 * y * (y + 1.0))),
            (1.0, f64::INFINITY),
        ),
        "uniform-square" => {
            let u = crate::measure::Density1d::new(Arc::new(|_x| 1.0), (0.0, 1.0))?;
            let v = crate::measure::Density1d::new(Arc::new(|_x| 1.0), (0.0, 1.0))?;
            Ok(InvariantMeasure::product_2d("uniform-square", u, v))
        }
        other => Err(Error::Config(format!("unknown measure '{other}'"))),
    }
}

/// Regularity profile matched to a named benchmark system. Bounded
/// euclidean interval charts under the pure-norm policy have rho == 1 and
/// a single covering ball; the noncompact chart gets the closed-form
/// interval covering count.
pub fn profile(system_name: &str) -> Result<RegularityProfile> {
    profile_with(system_name, 1.5, RadiusPolicy::PureNorm)
}

pub fn profile_with(
    system_name: &str,
    b: f64,
    policy: RadiusPolicy,
) -> Result<RegularityProfile> {
    match system_name {
        "doubling" | "tent" | "logistic4" | "gauss" | "doubling2d" => match policy {
            RadiusPolicy::PureNorm => Ok(RegularityProfile::trivial(b)),
            RadiusPolicy::ClipToBoundary => Ok(RegularityProfile::analytic(
                b,
                policy,
                Arc::new(|dom: &ChartDomain, y: &Point| Ok(dom.boundary_dist(y).min(1.0))),
                Arc::new(|dom: &ChartDomain, x: &Point| Ok(dom.d0(x)?.min(1.0))),
                Arc::new(|dom: &ChartDomain, x: &Point| {
                    // cover a set of diameter <= 1 by balls of radius d0(x)
                    let rho = dom.d0(x)?.min(1.0);
                    Ok(((1.0 / (2.0 * rho)).ceil() as u64).max(1))
                }),
            )),
        },
        "gauss-noncompact" => Ok(RegularityProfile::analytic(
            b,
            RadiusPolicy::PureNorm,
            Arc::new(|_dom: &ChartDomain, _y: &Point| Ok(1.0)),
            Arc::new(|_dom: &ChartDomain, _x: &Point| Ok(1.0)),
            Arc::new(|dom: &ChartDomain, x: &Point| {
                // sublevel set of c = d0(x) is the closed interval
                // [max(1+c, x0 - 1/c), x0 + 1/c]; minimal cover by
                // radius-1 balls is ceil(len/2)
                let c = dom.d0(x)?;
                let x0 = dom.reference.coords[0];
                let lo = (1.0 + c).max(x0 - 1.0 / c);
                let hi = x0 + 1.0 / c;
                let len = (hi - lo).max(0.0);
                Ok(((len / 2.0).ceil() as u64).max(1))
            }),
        )),
        other => Err(Error::Config(format!("no profile for system '{other}'"))),
    }
}

/// The benchmark's natural coarse partition, when one is registered.
pub fn natural_partition(system_name: &str) -> Option<LabelPartition> {
    match system_name {
        "doubling" => Some(LabelPartition {
            name: "dyadic2".into(),
            kind: LabelKind::BinaryCut { cut: 0.5 },
        }),
        "tent" => Some(LabelPartition {
            name: "binary".into(),
            kind: LabelKind::BinaryCut { cut: 0.5 },
        }),
        "logistic4" => Some(LabelPartition {
            name: "binary".into(),
            kind: LabelKind::BinaryCut { cut: 0.5 },
        }),
        "gauss" => Some(LabelPartition {
            name: "cf-digits".into(),
            kind: LabelKind::GaussDigit { cap: 64 },
        }),
        "gauss-noncompact" => Some(LabelPartition {
            name: "integer-cells".into(),
            kind: LabelKind::IntegerPart { cap: 64 },
        }),
        "doubling2d" => Some(LabelPartition {
            name: "quadrants".into(),
            kind: LabelKind::Quadrant,
        }),
        _ => None,
    }
}

/// Measure conventionally paired with a benchmark system.
pub fn paired_measure(system_name: &str) -> Result<InvariantMeasure> {
    let name = match system_name {
        "doubling" | "tent" => "uniform01",
        "logistic4" => "arcsine",
        "gauss" => "gauss-density",
        "gauss-noncompact" => "gauss-noncompact-density",
        "doubling2d" => "uniform-square",
        other => return Err(Error::Config(format!("no paired measure for '{other}'"))),
    };
    measure(name)
}

/// Distortion parameters that the dense-sampling falsifier accepts for
/// each benchmark (affine-derivative maps pass with anything mild; the
/// gauss maps need a >= 3 so the boundary exponent dominates the blow-up
/// of 1/x^2).
pub fn paired_distortion(system_name: &str) -> DistortionParams {
    match system_name {
        "doubling" | "tent" | "doubling2d" => {
            DistortionParams { alpha: 0.9, big_c: 1.1, a: 1.1 }
        }
        "logistic4" => DistortionParams { alpha: 0.5, big_c: 4.0, a: 1.5 },
        _ => DistortionParams { alpha: 0.5, big_c: 4.0, a: 3.0 },
    }
}

/// Quadrature hint points (kinks of d0 and friends) per benchmark.
pub fn quad_hints(system_name: &str) -> Vec<f64> {
    match system_name {
        "doubling" | "tent" | "logistic4" | "gauss" => vec![0.5],
        // boundary-gauge kink at x0 and the branch crossover of d0
        "gauss-noncompact" => vec![2.0, (3.0 + 5f64.sqrt()) / 2.0],
        _ => vec![],
    }
}

/// A random interior point of the benchmark's chart, for sampling-based
/// tests.
pub fn sample_interior_point(sys: &SmoothSystem, rng: &mut ChaCha8Rng) -> Point {
    match sys.name.as_str() {
        "gauss-noncompact" => {
            // log-uniform over (1 + 1e-3, ~55)
            let e: f64 = rng.gen_range(-3.0..4.0);
            Point::one(1.0 + e.exp())
        }
        _ if sys.dim() == 2 => {
            Point::two(rng.gen_range(0.001..0.999), rng.gen_range(0.001..0.999))
        }
        _ => Point::one(rng.gen_range(0.001..0.999)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_registered_names_resolve() {
        for name in SYSTEM_NAMES {
            let s = system(name).unwrap();
            assert_eq!(s.name, name);
            let _ = profile(name).unwrap();
            let _ = paired_measure(name).unwrap();
        }
        for name in MEASURE_NAMES {
            let _ = measure(name).unwrap();
        }
        assert!(system("nope").is_err());
    }

    #[test]
    fn noncompact_conjugacy_relations() {
        // G(y) = 1/frac(y) matches 1/gauss(1/y)
        let g = system("gauss").unwrap();
        let gn = system("gauss-noncompact").unwrap();
        for &y in &[1.37, 2.71, 5.05, 11.93] {
            let x = 1.0 / y;
            let via_gauss = 1.0 / g.apply(&Point::one(x)).unwrap().coords[0];
            let direct = gn.apply(&Point::one(y)).unwrap().coords[0];
            assert!((via_gauss - direct).abs() < 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn noncompact_infinity_branch_is_common() {
        let gn = system("gauss-noncompact").unwrap();
        let mu = measure("gauss-noncompact-density").unwrap();
        let pts = mu.sample(20_000, 7);
        let mut infinity = 0usize;
        for p in &pts {
            if gn.domain.d0_branch(p).unwrap() == crate::geometry::D0Branch::Infinity {
                infinity += 1;
            }
        }
        let frac = infinity as f64 / pts.len() as f64;
        assert!(frac >= 0.30, "infinity branch fraction {frac}");
    }

    #[test]
    fn gauss_distortion_defaults_derived_from_dense_sampling() {
        // dense-sampling oracle of the Hölder quotient near the boundary:
        // the recorded defaults must keep the ratio under 1
        let sys = system("gauss").unwrap();
        let params = paired_distortion("gauss");
        let pts: Vec<Point> = (1..=400).map(|i| Point::one(i as f64 / 401.0)).collect();
        let mut rng = crate::rng::SeedTree::new(17).stream("gauss-distortion", 0);
        let rep = crate::system::check_distortion(
            &sys,
            &params,
            &pts,
            &crate::system::DistortionPlan { pairs_per_point: 24, boundary_ladder: 64 },
            &mut rng,
        )
        .unwrap();
        assert!(rep.pairs > 5_000);
        assert!(rep.pass, "max ratio {}", rep.max_ratio);
    }
}
