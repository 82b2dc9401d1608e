//! Lyapunov spectrum estimation (QR / Benettin scheme) and the
//! exponent-side integrals of the entropy inequality.

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::measure::{Budget, Integral, InvariantMeasure, Method};
use crate::par;
use crate::rng::SeedTree;
use crate::system::{CocycleState, SmoothSystem};

/// Estimated spectrum, sorted descending. Degenerate directions carry
/// -inf (a sentinel the positive sum ignores).
#[derive(Debug, Clone, serde::Serialize)]
pub struct SpectrumEstimate {
    pub exponents: Vec<f64>,
    pub horizon: usize,
    pub stderr: Vec<f64>,
    pub positive_sum: f64,
}

const SPECTRUM_BLOCKS: usize = 10;

/// Benettin QR accumulation: push an orthonormal frame through the
/// derivative cocycle, re-orthonormalize every `reorth_every` steps, and
/// average the log diagonal growth. Standard errors come from block means
/// over ten windows.
pub fn spectrum(
    sys: &SmoothSystem,
    x: &Point,
    n: usize,
    reorth_every: usize,
) -> Result<SpectrumEstimate> {
    if reorth_every == 0 || n < 10 * reorth_every {
        return Err(Error::InvalidArgument(
            "spectrum needs n >= 10 * reorth_every".into(),
        ));
    }
    let d = sys.dim();
    let mut state = CocycleState::new(x.clone(), d);
    let block_len = n / SPECTRUM_BLOCKS;
    let mut block_rates: Vec<Vec<f64>> = Vec::with_capacity(SPECTRUM_BLOCKS);
    let mut prev_sums = vec![0.0; d];
    let mut prev_done = 0usize;
    let mut done = 0usize;
    let mut next_block_end = block_len;

    while done < n {
        let span = reorth_every.min(n - done);
        state.advance(sys, span)?;
        done += span;
        if done >= next_block_end && block_rates.len() < SPECTRUM_BLOCKS {
            let steps = (done - prev_done) as f64;
            let rates: Vec<f64> = state
                .log_diagonal_sums
                .iter()
                .zip(&prev_sums)
                .map(|(s, p)| (s - p) / steps)
                .collect();
            block_rates.push(rates);
            prev_sums = state.log_diagonal_sums.clone();
            prev_done = done;
            next_block_end += block_len;
        }
    }

    let mut pairs: Vec<(f64, f64)> = (0..d)
        .map(|i| {
            let lambda = state.log_diagonal_sums[i] / n as f64;
            let blocks: Vec<f64> = block_rates.iter().map(|b| b[i]).collect();
            let (_, se) = par::mean_stderr(&blocks);
            (lambda, se)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let exponents: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let stderr: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let positive_sum = exponents.iter().filter(|l| **l > 0.0).sum();
    Ok(SpectrumEstimate { exponents, horizon: n, stderr, positive_sum })
}

/// One orbit's contribution to the exponent-side integral.
#[derive(Debug, Clone, serde::Serialize)]
pub struct OrbitRow {
    pub orbit: usize,
    pub x0: Vec<f64>,
    pub exponents: Vec<f64>,
    pub positive_sum: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct PositiveSumEstimate {
    pub value: f64,
    pub stderr: f64,
    pub horizon: usize,
    pub orbits_requested: usize,
    pub escaped: usize,
    pub rows: Vec<OrbitRow>,
}

/// Monte Carlo mean over mu-sampled initial points of the positive part
/// of the spectrum. Aborts when more than half of the orbits escape.
#[allow(clippy::too_many_arguments)]
pub fn positive_sum_integral(
    sys: &SmoothSystem,
    mu: &InvariantMeasure,
    horizon: usize,
    n_orbits: usize,
    reorth_every: usize,
    burn_in: usize,
    tree: &SeedTree,
) -> Result<PositiveSumEstimate> {
    if n_orbits < 1 {
        return Err(Error::InvalidArgument("need at least one orbit".into()));
    }
    let starts = mu.sample(n_orbits, tree.child("positive-sum").root());
    let results: Vec<Result<OrbitRow>> = par::map_indexed(n_orbits, |i| {
        let x0 = sys.iterate(&starts[i], burn_in)?;
        let est = spectrum(sys, &x0, horizon, reorth_every)?;
        Ok(OrbitRow {
            orbit: i,
            x0: starts[i].coords.clone(),
            exponents: est.exponents,
            positive_sum: est.positive_sum,
        })
    });

    let mut rows = Vec::new();
    let mut escaped = 0usize;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(Error::Escape { .. }) => escaped += 1,
            Err(e) => return Err(e),
        }
    }
    if escaped * 2 > n_orbits || rows.is_empty() {
        return Err(Error::EscapeRate { escaped, total: n_orbits });
    }
    let sums: Vec<f64> = rows.iter().map(|r| r.positive_sum).collect();
    let (value, stderr) = par::mean_stderr(&sums);
    Ok(PositiveSumEstimate {
        value,
        stderr,
        horizon,
        orbits_requested: n_orbits,
        escaped,
        rows,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ExteriorGrowth {
    pub m: usize,
    pub integral: Integral,
    pub escaped: usize,
    pub samples: usize,
}

/// (1/m) ∫ log ‖(D_x f^m)^∧‖ dmu by Monte Carlo. Decreases toward the
/// positive-sum integral as m grows (subadditivity), which the pipeline
/// reports as a trend.
pub fn exterior_growth_integral(
    sys: &SmoothSystem,
    mu: &InvariantMeasure,
    m: usize,
    n_samples: usize,
    tree: &SeedTree,
) -> Result<ExteriorGrowth> {
    if m == 0 {
        return Err(Error::InvalidArgument("m must be >= 1".into()));
    }
    let pts = mu.sample(n_samples, tree.child("exterior-growth").root());
    let vals: Vec<Option<f64>> = par::map_slice(&pts, |p| {
        sys.exterior_log_norm(p, m).ok().map(|g| g / m as f64)
    });
    let kept: Vec<f64> = vals.iter().flatten().copied().collect();
    let escaped = n_samples - kept.len();
    if escaped * 2 > n_samples || kept.is_empty() {
        return Err(Error::EscapeRate { escaped, total: n_samples });
    }
    let (value, stderr) = par::mean_stderr(&kept);
    Ok(ExteriorGrowth {
        m,
        integral: Integral { value, uncertainty: stderr, method: Method::MonteCarlo },
        escaped,
        samples: kept.len(),
    })
}

/// Convenience wrapper reusing the measure budget for sample counts.
pub fn exterior_growth_sweep(
    sys: &SmoothSystem,
    mu: &InvariantMeasure,
    ms: &[usize],
    budget: &Budget,
    tree: &SeedTree,
) -> Result<Vec<ExteriorGrowth>> {
    ms.iter()
        .map(|&m| exterior_growth_integral(sys, mu, m, budget.mc_samples.min(200_000), tree))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry;

    #[test]
    fn doubling_exponent_exact() {
        // binary doubling is exact in f64, so orbits collapse to the
        // boundary after ~52 steps; constant derivative makes a short
        // window already exact
        let sys = registry::system("doubling").unwrap();
        let est = spectrum(&sys, &Point::one(0.3183), 40, 4).unwrap();
        assert!((est.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((est.positive_sum - 2f64.ln()).abs() < 1e-12);
        assert!(est.stderr[0] < 1e-12);
    }

    #[test]
    fn linear_2d_spectrum_exact() {
        let sys = registry::linear_system(&[2.0, 0.5]);
        let est = spectrum(&sys, &Point::two(0.1, -0.2), 400, 4).unwrap();
        assert!((est.exponents[0] - 2f64.ln()).abs() < 1e-12);
        assert!((est.exponents[1] + 2f64.ln()).abs() < 1e-12);
        assert!((est.positive_sum - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn spectrum_invariant_under_reorth_interval() {
        let sys = registry::system("gauss").unwrap();
        let x = Point::one(0.5857864376269049); // sqrt(2) - 1 inside (0,1)
        let base = spectrum(&sys, &x, 5_000, 1).unwrap();
        for reorth in [5usize, 10] {
            let alt = spectrum(&sys, &x, 5_000, reorth).unwrap();
            assert!(
                (alt.exponents[0] - base.exponents[0]).abs() < 1e-9,
                "reorth {reorth}: {} vs {}",
                alt.exponents[0],
                base.exponents[0]
            );
        }
    }

    #[test]
    fn one_dimensional_matches_birkhoff_average() {
        let sys = registry::system("gauss").unwrap();
        let x = Point::one(0.3267);
        let n = 4_000;
        let est = spectrum(&sys, &x, n, 1).unwrap();
        let orbit = sys.orbit(&x, n - 1).unwrap();
        let logs: Vec<f64> = orbit
            .iter()
            .map(|p| crate::linalg::spectral_norm(&sys.jacobian(p)).ln())
            .collect();
        // same orbit, same arithmetic order: sequential sum over steps
        let mut acc = 0.0;
        for v in &logs {
            acc += v;
        }
        let birkhoff = acc / n as f64;
        assert!((est.exponents[0] - birkhoff).abs() < 1e-12);
    }

    #[test]
    fn positive_sum_examples() {
        let tree = SeedTree::new(5);
        let doubling = registry::system("doubling").unwrap();
        let uniform = registry::measure("uniform01").unwrap();
        let est = positive_sum_integral(&doubling, &uniform, 40, 12, 4, 2, &tree).unwrap();
        assert!((est.value - 2f64.ln()).abs() < 1e-6, "value {}", est.value);

        let id = registry::identity_system(1);
        let est = positive_sum_integral(&id, &uniform, 500, 10, 5, 0, &tree).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn logistic_positive_sum_matches_quadrature_oracle() {
        let tree = SeedTree::new(9);
        let sys = registry::system("logistic4").unwrap();
        let mu = registry::measure("arcsine").unwrap();
        // oracle: ∫ ln|4-8x| darcsine = ln 2, by quadrature
        let oracle = mu
            .integrate_with_breaks(
                &|p: &Point| (4.0 - 8.0 * p.coords[0]).abs().max(f64::MIN_POSITIVE).ln(),
                &[0.5],
                &Budget::default(),
                0,
            )
            .unwrap();
        assert!((oracle.value - 2f64.ln()).abs() < 1e-4, "oracle {}", oracle.value);
        let est = positive_sum_integral(&sys, &mu, 20_000, 16, 5, 500, &tree).unwrap();
        assert!(
            (est.value - 2f64.ln()).abs() < 0.02 * 2f64.ln(),
            "estimate {} oracle {}",
            est.value,
            oracle.value
        );
    }

    #[test]
    fn exterior_growth_examples() {
        let tree = SeedTree::new(3);
        let doubling = registry::system("doubling").unwrap();
        let uniform = registry::measure("uniform01").unwrap();
        for m in [1usize, 4] {
            let g = exterior_growth_integral(&doubling, &uniform, m, 2_000, &tree).unwrap();
            assert!((g.integral.value - 2f64.ln()).abs() < 1e-10);
        }
        let lin = registry::linear_system(&[2.0, 0.5]);
        let free = InvariantMeasure::empirical(
            "cloud",
            (0..64).map(|i| Point::two(0.01 * i as f64, -0.02 * i as f64)).collect(),
        )
        .unwrap();
        let g = exterior_growth_integral(&lin, &free, 5, 64, &tree).unwrap();
        assert!((g.integral.value - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn exterior_growth_decreases_toward_exponent() {
        let tree = SeedTree::new(12);
        let sys = registry::system("gauss").unwrap();
        let mu = registry::measure("gauss-density").unwrap();
        let sweep = exterior_growth_sweep(
            &sys,
            &mu,
            &[1, 5, 10],
            &Budget { quad_evals: 0, mc_samples: 40_000 },
            &tree,
        )
        .unwrap();
        let lambda = std::f64::consts::PI.powi(2) / (6.0 * 2f64.ln());
        // subadditive upper bounds decreasing toward lambda within MC noise
        for w in sweep.windows(2) {
            assert!(
                w[1].integral.value
                    <= w[0].integral.value + 3.0 * (w[0].integral.uncertainty + w[1].integral.uncertainty),
                "not decreasing: {} then {}",
                w[0].integral.value,
                w[1].integral.value
            );
        }
        for g in &sweep {
            assert!(
                g.integral.value >= lambda - 3.0 * g.integral.uncertainty - 1e-9,
                "m={}: {} below lambda {}",
                g.m,
                g.integral.value,
                lambda
            );
        }
    }
}
