//! Lasso + partial ridge refit and its residual-bootstrap intervals.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::lasso::{fit_problem, predict, LassoConfig, LassoFit, Problem};
use crate::error::{Error, Result};
use crate::numerics::penalized_least_squares;
use crate::numerics::rng::{stream, tags};
use crate::variance::{percentile_interval, CiMethod, IntervalSet};
use rand::Rng as _;

pub const DEFAULT_LAMBDA_RIDGE: f64 = 1e-2;
pub const DEFAULT_RBLPR_REPLICATES: usize = 1000;

#[derive(Clone, Debug, Serialize)]
pub struct LprFit {
    pub lasso: LassoFit,
    pub active: Vec<usize>,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub fitted: Vec<f64>,
    pub lambda_ridge: f64,
}

/// Ridge stage on standardized columns: minimizes
/// `(1/W) sum_a w_a r_a^2 + lambda_ridge * sum_{j inactive} beta_j^2`
/// with `W = sum_a w_a`, leaving the intercept and active columns free.
fn partial_ridge(problem: &Problem, active: &[usize], lambda_ridge: f64) -> Result<Vec<f64>> {
    let free: Vec<usize> = (0..problem.num_columns()).filter(|&j| !problem.fixed[j]).collect();
    let m = problem.rows.len();
    let design = DMatrix::from_fn(m, free.len(), |i, k| problem.xs[free[k]][i]);
    let y: Vec<f64> = problem.z.iter().map(|z| z - problem.zbar).collect();
    let penalties: Vec<f64> = free
        .iter()
        .map(|j| {
            if active.contains(j) {
                0.0
            } else {
                lambda_ridge * problem.wsum
            }
        })
        .collect();
    let sol = penalized_least_squares(&design, &y, &problem.w, &penalties)?;
    let mut beta = vec![0.0; problem.num_columns()];
    for (k, &j) in free.iter().enumerate() {
        beta[j] = sol.solution[k];
    }
    Ok(beta)
}

fn check_ridge(lambda_ridge: f64) -> Result<()> {
    if !(lambda_ridge >= 0.0 && lambda_ridge.is_finite()) {
        return Err(Error::Parameter(format!(
            "ridge penalty must be finite and >= 0, got {lambda_ridge}"
        )));
    }
    Ok(())
}

fn lpr_from(problem: &Problem, x: &DMatrix<f64>, lasso: LassoFit, lambda_ridge: f64) -> Result<LprFit> {
    let beta = partial_ridge(problem, &lasso.active, lambda_ridge)?;
    let (intercept, coefficients) = problem.unscale(&beta);
    let fitted = predict(x, intercept, &coefficients);
    Ok(LprFit {
        active: lasso.active.clone(),
        lasso,
        intercept,
        coefficients,
        fitted,
        lambda_ridge,
    })
}

/// Two-stage fit: lasso at `lambda_lasso` selects columns, then a ridge
/// penalty applies to the unselected ones only.
pub fn fit_lpr(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    lambda_lasso: f64,
    lambda_ridge: f64,
    config: &LassoConfig,
) -> Result<LprFit> {
    check_ridge(lambda_ridge)?;
    let problem = Problem::new(x, z, weights, config.standardize)?;
    let mut beta = vec![0.0; problem.num_columns()];
    let lasso = fit_problem(&problem, x, weights, lambda_lasso, &mut beta, config)?;
    lpr_from(&problem, x, lasso, lambda_ridge)
}

/// Residual-bootstrap percentile intervals around the lasso + partial ridge
/// estimate.
///
/// Standardized residuals `(z_a - lasso_a) / sigma_a` are centered, inflated
/// by `sqrt(K / (K - |active| - 1))` and resampled; each replicate sets
/// `z*_a = lasso_a + sigma_a e*_a` and refits both stages at the original
/// penalties. Rows with an undefined estimate get no interval.
#[allow(clippy::too_many_arguments)]
pub fn rblpr_ci(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    lambda_lasso: f64,
    lambda_ridge: f64,
    replicates: usize,
    level: f64,
    seed: u64,
    config: &LassoConfig,
) -> Result<IntervalSet> {
    rblpr_ci_levels(
        x,
        z,
        weights,
        lambda_lasso,
        lambda_ridge,
        replicates,
        &[level],
        seed,
        config,
    )
    .map(|mut v| v.remove(0))
}

/// `rblpr_ci` at several confidence levels from one set of replicates.
#[allow(clippy::too_many_arguments)]
pub fn rblpr_ci_levels(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    lambda_lasso: f64,
    lambda_ridge: f64,
    replicates: usize,
    levels: &[f64],
    seed: u64,
    config: &LassoConfig,
) -> Result<Vec<IntervalSet>> {
    if replicates < 100 {
        return Err(Error::Parameter(format!(
            "rBLPR needs at least 100 replicates, got {replicates}"
        )));
    }
    check_ridge(lambda_ridge)?;
    let problem = Problem::new(x, z, weights, config.standardize)?;
    if problem.rows.len() < 3 {
        return Err(Error::Inference(format!(
            "rBLPR needs at least 3 groups with a defined estimate, got {}",
            problem.rows.len()
        )));
    }
    let mut beta0 = vec![0.0; problem.num_columns()];
    let lasso = fit_problem(&problem, x, weights, lambda_lasso, &mut beta0, config)?;

    let sd: Vec<f64> = problem.w.iter().map(|w| 1.0 / w.sqrt()).collect();
    let base: Vec<f64> = problem.rows.iter().map(|&i| lasso.fitted[i]).collect();
    let mut resid: Vec<f64> = (0..problem.rows.len())
        .map(|k| (problem.z[k] - base[k]) / sd[k])
        .collect();
    let mean = resid.iter().sum::<f64>() / resid.len() as f64;
    for r in &mut resid {
        *r -= mean;
    }
    // residuals of a fit with df = |active| + 1 are shrunk; inflate them
    let k = resid.len() as f64;
    let scale = (k / (k - lasso.active.len() as f64 - 1.0).max(1.0)).sqrt();
    for r in &mut resid {
        *r *= scale;
    }

    let n = x.nrows();
    let draws: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let mut rng = stream(seed, &[tags::RBLPR, b as u64]);
            let mut zs: Vec<Option<f64>> = vec![None; n];
            for (k, &i) in problem.rows.iter().enumerate() {
                let e = resid[rng.random_range(0..resid.len())];
                zs[i] = Some(base[k] + sd[k] * e);
            }
            let p = Problem::new(x, &zs, weights, config.standardize)?;
            let mut beta = beta0.clone();
            let fit = fit_problem(&p, x, weights, lambda_lasso, &mut beta, config)?;
            Ok(lpr_from(&p, x, fit, lambda_ridge)?.fitted)
        })
        .collect::<Result<_>>()?;

    let mut per_row: Vec<Option<Vec<f64>>> = vec![None; n];
    for &i in &problem.rows {
        let mut v: Vec<f64> = draws.iter().map(|d| d[i]).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        per_row[i] = Some(v);
    }
    levels
        .iter()
        .map(|&level| {
            let intervals = per_row
                .iter()
                .map(|s| s.as_ref().map(|s| percentile_interval(s, 1.0 - level)).transpose())
                .collect::<Result<_>>()?;
            Ok(IntervalSet {
                method: CiMethod::Rblpr,
                level,
                intervals,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::weighted_least_squares;

    fn toy() -> (DMatrix<f64>, Vec<Option<f64>>, Vec<f64>) {
        let x = DMatrix::from_row_slice(
            6,
            3,
            &[
                1.0, 0.0, 0.3, 0.0, 1.0, 0.5, 1.0, 1.0, 0.1, 0.0, 0.0, 0.9, 1.0, 0.0, 0.7, 0.0, 1.0, 0.2,
            ],
        );
        let z = vec![Some(0.2), Some(0.45), Some(0.6), Some(0.1), Some(0.3), Some(0.35)];
        let w = vec![10.0, 20.0, 5.0, 40.0, 8.0, 12.0];
        (x, z, w)
    }

    #[test]
    fn zero_ridge_with_full_active_set_is_least_squares() {
        let (x, z, w) = toy();
        let fit = fit_lpr(&x, &z, &w, 0.0, 0.0, &LassoConfig::default()).unwrap();
        let design = DMatrix::from_fn(6, 4, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let y: Vec<f64> = z.iter().map(|v| v.unwrap()).collect();
        let ols = weighted_least_squares(&design, &y, &w).unwrap();
        let fitted = &design * &ols.solution;
        for i in 0..6 {
            assert!((fit.fitted[i] - fitted[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_active_set_and_huge_ridge_gives_weighted_mean() {
        let (x, z, w) = toy();
        let c = LassoConfig::default();
        let fit = fit_lpr(&x, &z, &w, 1e6, 1e9, &c).unwrap();
        assert!(fit.active.is_empty());
        let wsum: f64 = w.iter().sum();
        let mean = z.iter().zip(&w).map(|(z, w)| z.unwrap() * w).sum::<f64>() / wsum;
        for f in &fit.fitted {
            assert!((f - mean).abs() < 1e-8);
        }
    }

    #[test]
    fn exact_linear_response_gives_zero_width() {
        let (x, _, w) = toy();
        let z: Vec<Option<f64>> = (0..6).map(|i| Some(0.1 + 0.2 * x[(i, 0)] - 0.1 * x[(i, 2)])).collect();
        let set = rblpr_ci(&x, &z, &w, 0.0, 0.01, 200, 0.95, 3, &LassoConfig::default()).unwrap();
        for iv in set.intervals.iter().flatten() {
            assert!(iv.width() < 1e-9);
        }
    }

    #[test]
    fn rblpr_is_deterministic_and_rejects_small_inputs() {
        let (x, z, w) = toy();
        let c = LassoConfig::default();
        let a = rblpr_ci(&x, &z, &w, 0.5, 0.01, 150, 0.9, 11, &c).unwrap();
        let b = rblpr_ci(&x, &z, &w, 0.5, 0.01, 150, 0.9, 11, &c).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            rblpr_ci(&x, &z, &w, 0.5, 0.01, 10, 0.9, 11, &c),
            Err(Error::Parameter(_))
        ));
        let two = vec![Some(0.1), Some(0.2), None, None, None, None];
        assert!(matches!(
            rblpr_ci(&x, &two, &w, 0.5, 0.01, 150, 0.9, 11, &c),
            Err(Error::Inference(_))
        ));
    }
}
