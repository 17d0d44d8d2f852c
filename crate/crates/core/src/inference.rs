//! Residual-bootstrap pointwise confidence bands for the coefficient
//! function.
//!
//! Residuals from a fitted model are resampled with replacement, the model
//! is refit on each synthetic response vector with the tuning parameters
//! held at the original fit's values, and pivotal bands are assembled from
//! the empirical quantiles of the refit coefficient curves.

use crate::bspline::eval_spline;
use crate::design::{DesignSystem, FunctionalDataset};
use crate::error::{Error, Result};
use crate::estimator::{fit_ngb, NgbFit};
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Pointwise confidence band on a time grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapBand {
    /// Evaluation times.
    pub grid: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Confidence level, `1 − a`.
    pub level: f64,
    /// Requested replicate count.
    pub replicates: usize,
    /// Replicates whose refit succeeded and entered the quantiles.
    pub replicates_used: usize,
    /// Replicates whose refit failed.
    pub failures: usize,
    /// `β̂` of the original fit on the same grid.
    pub point_estimate: Vec<f64>,
}

impl BootstrapBand {
    /// True when more than 5% of the requested replicates failed to refit.
    pub fn failure_rate_exceeded(&self) -> bool {
        self.failures * 20 > self.replicates
    }
}

/// Empirical quantile as the order statistic at `⌈q·B⌉` (1-based) of the
/// sorted sample.
fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let b = sorted.len();
    let rank = (q * b as f64).ceil() as usize;
    sorted[rank.clamp(1, b) - 1]
}

/// Pointwise pivotal band `(2β̂ − q*_{1−a/2}, 2β̂ − q*_{a/2})` from `b_count`
/// residual-bootstrap refits of `fit` at its own `(κ, λ)`. Replicate `r`
/// draws from RNG stream `(seed, r)`, so the band is reproducible and
/// independent of scheduling.
pub fn bootstrap_band(
    data: &FunctionalDataset,
    fit: &NgbFit,
    b_count: usize,
    a: f64,
    grid: &[f64],
    seed: u64,
) -> Result<BootstrapBand> {
    if b_count < 100 {
        return Err(Error::invalid(format!(
            "bootstrap needs at least 100 replicates, got {b_count}"
        )));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("level a must lie in (0,1), got {a}")));
    }
    if grid.is_empty() {
        return Err(Error::invalid("evaluation grid is empty"));
    }

    let basis = fit.beta_hat.basis();
    let ds = DesignSystem::new(data, basis.clone(), fit.config.m)?;
    let n = ds.n();
    let point: Vec<f64> = grid
        .iter()
        .map(|&t| eval_spline(&fit.beta_hat, t))
        .collect::<Result<_>>()?;

    let fitted = ds.u() * &fit.b_hat;
    let residuals = data.responses() - &fitted;

    let curves: Vec<Option<Vec<f64>>> = (0..b_count as u64)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(replicate);
            let y_star = DVector::from_fn(n, |i, _| {
                fitted[i] + residuals[rng.gen_range(0..n)]
            });
            fit_ngb(&ds, &y_star, &fit.config).ok().map(|refit| {
                grid.iter()
                    .map(|&t| eval_spline(&refit.beta_hat, t).unwrap_or(f64::NAN))
                    .collect()
            })
        })
        .collect();

    let successes: Vec<&Vec<f64>> = curves.iter().flatten().collect();
    let failures = b_count - successes.len();
    if successes.is_empty() {
        return Err(Error::AllFitsFailed {
            attempted: b_count,
            last: "every bootstrap refit failed".into(),
        });
    }

    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    let mut column = vec![0.0; successes.len()];
    for (g, &p) in point.iter().enumerate() {
        for (i, curve) in successes.iter().enumerate() {
            column[i] = curve[g];
        }
        column.sort_by(|x, y| x.total_cmp(y));
        lower.push(2.0 * p - order_statistic(&column, 1.0 - a / 2.0));
        upper.push(2.0 * p - order_statistic(&column, a / 2.0));
    }

    Ok(BootstrapBand {
        grid: grid.to_vec(),
        lower,
        upper,
        level: 1.0 - a,
        replicates: b_count,
        replicates_used: successes.len(),
        failures,
        point_estimate: point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bspline::make_basis;
    use crate::estimator::{tune_fit, NgbConfig};
    use crate::simlab::{simulate_dataset, Scenario};
    use approx::assert_abs_diff_eq;

    fn quantile_oracle(values: &[f64], q: f64) -> f64 {
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
        sorted[rank - 1]
    }

    #[test]
    fn order_statistic_matches_sort_oracle() {
        let fixture: [f64; 5] = [0.3, -1.2, 4.5, 0.0, 2.2];
        let mut sorted = fixture.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        for &q in &[0.025, 0.1, 0.5, 0.9, 0.975] {
            assert_eq!(
                order_statistic(&sorted, q),
                quantile_oracle(&fixture, q)
            );
        }
        // ⌈0.5·5⌉ = 3rd order statistic, ⌈0.975·5⌉ = 5th.
        assert_eq!(order_statistic(&sorted, 0.5), 0.3);
        assert_eq!(order_statistic(&sorted, 0.975), 4.5);
        assert_eq!(order_statistic(&sorted, 0.025), -1.2);
    }

    fn small_fit() -> (crate::design::FunctionalDataset, NgbFit) {
        let data = simulate_dataset(Scenario::II, 40, 99).unwrap();
        let basis = make_basis(1.0, 8, 3).unwrap();
        let ds = DesignSystem::new(&data, basis, 2).unwrap();
        let fit = tune_fit(
            &ds,
            data.responses(),
            &[1e-8, 1e-7],
            &[1e-6, 1e-5],
            &NgbConfig::new(0.0, 0.0),
        )
        .unwrap();
        (data, fit)
    }

    #[test]
    fn band_is_ordered_and_deterministic() {
        let (data, fit) = small_fit();
        let grid: Vec<f64> = (0..21).map(|i| i as f64 / 20.0).collect();
        let band = bootstrap_band(&data, &fit, 100, 0.10, &grid, 4).unwrap();
        assert_eq!(band.grid.len(), 21);
        assert_eq!(band.replicates, 100);
        assert_eq!(band.level, 0.90);
        for g in 0..21 {
            assert!(band.lower[g] <= band.upper[g]);
        }
        let again = bootstrap_band(&data, &fit, 100, 0.10, &grid, 4).unwrap();
        assert_eq!(band.lower, again.lower);
        assert_eq!(band.upper, again.upper);
        assert_eq!(band.failures, again.failures);

        let other_seed = bootstrap_band(&data, &fit, 100, 0.10, &grid, 5).unwrap();
        assert_ne!(band.lower, other_seed.lower);
    }

    #[test]
    fn wider_level_contains_narrower() {
        let (data, fit) = small_fit();
        let grid: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let band90 = bootstrap_band(&data, &fit, 120, 0.10, &grid, 7).unwrap();
        let band99 = bootstrap_band(&data, &fit, 120, 0.01, &grid, 7).unwrap();
        for g in 0..11 {
            assert!(band99.lower[g] <= band90.lower[g]);
            assert!(band99.upper[g] >= band90.upper[g]);
        }
    }

    #[test]
    fn degenerate_residuals_collapse_band_to_point() {
        // A zero response vector fits to exactly zero coefficients, so the
        // residuals are exactly zero and every refit reproduces the fit.
        let data = simulate_dataset(Scenario::I, 30, 123).unwrap();
        let zero = crate::design::FunctionalDataset::new(
            data.grid().to_vec(),
            data.curves().clone(),
            DVector::zeros(30),
        )
        .unwrap();
        let basis = make_basis(1.0, 6, 3).unwrap();
        let ds = DesignSystem::new(&zero, basis, 2).unwrap();
        let fit = fit_ngb(&ds, zero.responses(), &NgbConfig::new(1e-6, 1e-3)).unwrap();
        assert!(fit.b_hat.iter().all(|&b| b == 0.0));

        let grid: Vec<f64> = (0..13).map(|i| i as f64 / 12.0).collect();
        let band = bootstrap_band(&zero, &fit, 100, 0.05, &grid, 11).unwrap();
        assert_eq!(band.failures, 0);
        for g in 0..13 {
            assert_eq!(band.lower[g], band.point_estimate[g]);
            assert_eq!(band.upper[g], band.point_estimate[g]);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let (data, fit) = small_fit();
        let grid = vec![0.5];
        assert!(bootstrap_band(&data, &fit, 99, 0.05, &grid, 1).is_err());
        assert!(bootstrap_band(&data, &fit, 100, 0.0, &grid, 1).is_err());
        assert!(bootstrap_band(&data, &fit, 100, 1.0, &grid, 1).is_err());
        assert!(bootstrap_band(&data, &fit, 100, 0.05, &[], 1).is_err());
    }

    #[test]
    fn coverage_sanity_at_interior_point() {
        // A light version of the coverage experiment: the 95% band at
        // t=0.25 should cover the truth in most of a handful of outer
        // simulations.
        let mut covered = 0;
        for sim in 0..10 {
            let data = simulate_dataset(Scenario::II, 60, 1000 + sim).unwrap();
            let basis = make_basis(1.0, 8, 3).unwrap();
            let ds = DesignSystem::new(&data, basis, 2).unwrap();
            let fit = tune_fit(
                &ds,
                data.responses(),
                &[1e-8, 1e-7],
                &[1e-6, 1e-5],
                &NgbConfig::new(0.0, 0.0),
            )
            .unwrap();
            let band = bootstrap_band(&data, &fit, 100, 0.05, &[0.25], 77).unwrap();
            let truth = 1.0; // sin(2π·0.25)
            if band.lower[0] <= truth && truth <= band.upper[0] {
                covered += 1;
            }
        }
        assert!(covered >= 6, "covered {covered}/10");
    }

    #[test]
    fn point_estimate_matches_fit_on_grid() {
        let (data, fit) = small_fit();
        let grid: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let band = bootstrap_band(&data, &fit, 100, 0.05, &grid, 3).unwrap();
        for (g, &t) in grid.iter().enumerate() {
            assert_abs_diff_eq!(
                band.point_estimate[g],
                eval_spline(&fit.beta_hat, t).unwrap(),
                epsilon = 0.0
            );
        }
    }
}
