//! Declarative benchmark configuration: a versioned TOML tree with no
//! embedded code. Systems and measures resolve against the registry or
//! against coefficient tables / sample files.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ChartDomain, Point, RadiusPolicy, RegularityProfile};
use crate::linalg::Mat;
use crate::measure::InvariantMeasure;
use crate::partition::LevelParams;
use crate::registry;
use crate::system::{DistortionParams, SmoothSystem};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub system: SystemSpec,
    pub measure: MeasureSpec,
    #[serde(default)]
    pub profile: ProfileSpec,
    pub distortion: DistortionParams,
    pub level: LevelSpec,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub sweep: SweepSpec,
}

fn default_version() -> u32 {
    CONFIG_VERSION
}
fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    Builtin { name: String },
    /// 1-D rational map p(x)/q(x) with coefficient tables (ascending
    /// powers); optional wrap into [0,1).
    Rational1d {
        num: Vec<f64>,
        #[serde(default)]
        den: Vec<f64>,
        lo: f64,
        hi: f64,
        x0: f64,
        #[serde(default)]
        mod1: bool,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureSpec {
    Builtin { name: String },
    EmpiricalCsv { path: String },
    EmpiricalF64le { path: String, dim: usize },
    /// Birkhoff surrogate measure from one long orbit
    Orbit { x0: Vec<f64>, n: usize, burn: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    #[serde(default = "default_b")]
    pub b: f64,
    #[serde(default = "default_policy")]
    pub policy: RadiusPolicy,
    /// "analytic" uses the registry closed forms; "estimated" the grid
    /// estimators
    #[serde(default = "default_profile_mode")]
    pub mode: String,
    #[serde(default = "default_grid")]
    pub grid_per_dim: usize,
    #[serde(default = "default_tank_resolution")]
    pub tank_resolution: f64,
}

fn default_b() -> f64 {
    1.5
}
fn default_policy() -> RadiusPolicy {
    RadiusPolicy::PureNorm
}
fn default_profile_mode() -> String {
    "analytic".into()
}
fn default_grid() -> usize {
    201
}
fn default_tank_resolution() -> f64 {
    0.05
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec {
            b: default_b(),
            policy: default_policy(),
            mode: default_profile_mode(),
            grid_per_dim: default_grid(),
            tank_resolution: default_tank_resolution(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSpec {
    pub m: u32,
    pub n: u32,
    pub l: u32,
    /// None: the minimal admissible scale exponent is computed
    #[serde(default)]
    pub l1: Option<u32>,
    #[serde(default = "default_s_max")]
    pub s_max: u32,
}

fn default_s_max() -> u32 {
    40
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub spectrum_horizon: usize,
    pub spectrum_orbits: usize,
    pub burn_in: usize,
    pub reorth_every: usize,
    pub partition_samples: usize,
    pub entropy_orbits: usize,
    pub block_t_max: usize,
    pub adaptive_t_max: usize,
    pub conditional_pairs: usize,
    pub decomposition_samples: usize,
    pub probe_cells: usize,
    pub probes_per_cell: usize,
    pub quad_evals: usize,
    pub mc_samples: usize,
    pub distortion_points: usize,
    pub exterior_m: Vec<usize>,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            spectrum_horizon: 20_000,
            spectrum_orbits: 24,
            burn_in: 1_000,
            reorth_every: 5,
            partition_samples: 20_000,
            entropy_orbits: 20_000,
            block_t_max: 8,
            adaptive_t_max: 4,
            conditional_pairs: 30_000,
            decomposition_samples: 30_000,
            probe_cells: 120,
            probes_per_cell: 256,
            quad_evals: 200_000,
            mc_samples: 200_000,
            distortion_points: 400,
            exterior_m: vec![1, 2, 4],
        }
    }
}

/// Piecewise-affine binary maps (doubling, tent and their products) are
/// exact in floating point: every orbit shifts mantissa bits out and
/// collapses onto the boundary after about 52 steps. Their spectrum
/// budgets therefore use short orbit windows with many mu-restarts; the
/// constant derivative makes the estimate exact regardless of horizon.
pub fn default_budgets_for(name: &str) -> Budgets {
    let mut b = Budgets::default();
    if matches!(name, "doubling" | "tent" | "doubling2d") {
        b.spectrum_horizon = 40;
        b.reorth_every = 4;
        b.burn_in = 2;
        b.spectrum_orbits = 64;
    }
    b
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub n: Vec<u32>,
    pub l: Vec<u32>,
    pub m: Vec<u32>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { n: vec![1, 2, 3], l: vec![0, 1, 2], m: vec![1, 2] }
    }
}

impl BenchmarkSpec {
    /// Registry defaults for a named benchmark.
    pub fn named(name: &str) -> Result<BenchmarkSpec> {
        if !registry::SYSTEM_NAMES.contains(&name) {
            return Err(Error::Config(format!("unknown benchmark '{name}'")));
        }
        let distortion = registry::paired_distortion(name);
        Ok(BenchmarkSpec {
            version: CONFIG_VERSION,
            name: name.to_string(),
            seed: 7,
            system: SystemSpec::Builtin { name: name.to_string() },
            measure: MeasureSpec::Builtin {
                name: match name {
                    "doubling" | "tent" => "uniform01",
                    "logistic4" => "arcsine",
                    "gauss" => "gauss-density",
                    "gauss-noncompact" => "gauss-noncompact-density",
                    "doubling2d" => "uniform-square",
                    _ => unreachable!(),
                }
                .to_string(),
            },
            profile: ProfileSpec::default(),
            distortion,
            level: LevelSpec { m: 1, n: 2, l: 1, l1: None, s_max: 40 },
            budgets: default_budgets_for(name),
            sweep: SweepSpec::default(),
        })
    }

    pub fn load(path: &Path) -> Result<BenchmarkSpec> {
        let text = std::fs::read_to_string(path)?;
        let spec: BenchmarkSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if spec.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} unsupported (expected {})",
                spec.version, CONFIG_VERSION
            )));
        }
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("spec serializes")
    }
}

/// A spec resolved into live objects.
pub struct Bench {
    pub spec: BenchmarkSpec,
    pub system: Arc<SmoothSystem>,
    pub measure: Arc<InvariantMeasure>,
    pub profile: Arc<RegularityProfile>,
    pub natural: Option<crate::entropy::LabelPartition>,
    pub level_params: LevelParams,
    pub quad_hints: Vec<f64>,
}

fn eval_poly(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

pub fn resolve(spec: BenchmarkSpec) -> Result<Bench> {
    let (system, builtin_name) = match &spec.system {
        SystemSpec::Builtin { name } => (registry::system(name)?, Some(name.clone())),
        SystemSpec::Rational1d { num, den, lo, hi, x0, mod1 } => {
            let dom = if hi.is_finite() {
                ChartDomain::interval(*lo, *hi, *x0)
            } else {
                ChartDomain::half_line(*lo, *x0)
            };
            let num_m = num.clone();
            let den_m = den.clone();
            let wrap = *mod1;
            let num_j = num.clone();
            let den_j = den.clone();
            let dnum = poly_derivative(num);
            let dden = poly_derivative(den);
            let sys = SmoothSystem::new(
                "rational1d",
                dom,
                Arc::new(move |p: &Point| {
                    let x = p.coords[0];
                    let mut v = eval_poly(&num_m, x);
                    if !den_m.is_empty() {
                        v /= eval_poly(&den_m, x);
                    }
                    if wrap {
                        v -= v.floor();
                    }
                    Point::one(v)
                }),
                Arc::new(move |p: &Point| {
                    let x = p.coords[0];
                    let pn = eval_poly(&num_j, x);
                    let dn = eval_poly(&dnum, x);
                    let v = if den_j.is_empty() {
                        dn
                    } else {
                        let q = eval_poly(&den_j, x);
                        let dq = eval_poly(&dden, x);
                        (dn * q - pn * dq) / (q * q)
                    };
                    Mat::from_element(1, 1, v)
                }),
            );
            (sys, None)
        }
    };

    let measure = match &spec.measure {
        MeasureSpec::Builtin { name } => registry::measure(name)?,
        MeasureSpec::EmpiricalCsv { path } => {
            InvariantMeasure::load_csv(Path::new(path), "empirical-csv")?
        }
        MeasureSpec::EmpiricalF64le { path, dim } => {
            InvariantMeasure::load_f64le(Path::new(path), *dim, "empirical-f64le")?
        }
        MeasureSpec::Orbit { x0, n, burn } => {
            InvariantMeasure::from_orbit(&system, &Point::new(x0.clone()), *n, *burn)?
        }
    };

    let profile = match (spec.profile.mode.as_str(), &builtin_name) {
        ("analytic", Some(name)) => {
            registry::profile_with(name, spec.profile.b, spec.profile.policy)?
        }
        _ => RegularityProfile::estimated(
            crate::geometry::ProfileConfig {
                b: spec.profile.b,
                policy: spec.profile.policy,
                bisect_tol: 1e-3,
                ball_samples: 9,
            },
            spec.profile.grid_per_dim,
            spec.profile.tank_resolution,
        ),
    };

    let d = system.dim();
    let l1 = match spec.level.l1 {
        Some(l1) => l1,
        None => crate::partition::minimal_l1(spec.level.m, d, &spec.distortion, 64, 256)
            .ok_or_else(|| Error::Config("no admissible l1 <= 256".into()))?,
    };
    let level_params = LevelParams {
        m: spec.level.m,
        n: spec.level.n,
        l1,
        l: spec.level.l,
        b: spec.profile.b,
        distortion: spec.distortion,
        s_max: spec.level.s_max,
        c01: None,
        c_box: None,
    };

    let natural = builtin_name.as_deref().and_then(registry::natural_partition);
    let quad_hints = builtin_name
        .as_deref()
        .map(registry::quad_hints)
        .unwrap_or_default();

    Ok(Bench {
        spec,
        system: Arc::new(system),
        measure: Arc::new(measure),
        profile: Arc::new(profile),
        natural,
        level_params,
        quad_hints,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_specs_resolve() {
        for name in registry::SYSTEM_NAMES {
            let spec = BenchmarkSpec::named(name).unwrap();
            let bench = resolve(spec).unwrap();
            assert_eq!(bench.system.name, name);
            // the computed l1 satisfies the constraints
            assert!(crate::partition::first_l1_violation(
                bench.level_params.l1,
                bench.level_params.m,
                bench.system.dim(),
                &bench.level_params.distortion,
                64
            )
            .is_none());
        }
    }

    #[test]
    fn toml_roundtrip() {
        let spec = BenchmarkSpec::named("doubling").unwrap();
        let text = spec.to_toml();
        let back: BenchmarkSpec = toml::from_str(&text).unwrap();
        assert_eq!(back.name, spec.name);
        assert_eq!(back.budgets.spectrum_orbits, spec.budgets.spectrum_orbits);
    }

    #[test]
    fn rational_system_from_config() {
        // logistic map as a coefficient table: 4x - 4x^2
        let spec = BenchmarkSpec {
            version: CONFIG_VERSION,
            name: "custom-logistic".into(),
            seed: 1,
            system: SystemSpec::Rational1d {
                num: vec![0.0, 4.0, -4.0],
                den: vec![],
                lo: 0.0,
                hi: 1.0,
                x0: 0.5,
                mod1: false,
            },
            measure: MeasureSpec::Builtin { name: "arcsine".into() },
            profile: ProfileSpec::default(),
            distortion: registry::paired_distortion("logistic4"),
            level: LevelSpec { m: 1, n: 2, l: 0, l1: None, s_max: 30 },
            budgets: Budgets::default(),
            sweep: SweepSpec::default(),
        };
        let bench = resolve(spec).unwrap();
        let y = bench.system.apply(&Point::one(0.25)).unwrap();
        assert!((y.coords[0] - 0.75).abs() < 1e-12);
        let j = bench.system.jacobian(&Point::one(0.25));
        assert!((j[(0, 0)] - 2.0).abs() < 1e-12);
    }
}
