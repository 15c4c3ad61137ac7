//! Variance-weighted lasso solved by cyclic coordinate descent.
//!
//! The objective over groups with a defined estimate is
//!
//! ```text
//! L(t0, t) = sum_a w_a (t0 + t . x_a - z_a)^2 + lambda * sum_j p_j |t_j|
//! ```
//!
//! with `w_a = 1 / sigma_a^2`. With `standardize` on (the default) the
//! penalty factor `p_j` is the weighted standard deviation of column `j`,
//! which is the same as fitting unit-variance columns with a plain l1
//! penalty. With it off, `p_j = 1`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{soft_threshold, weighted_least_squares};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub standardize: bool,
    /// Keep the objective after every sweep in `LassoFit::trace`.
    pub record_trace: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            tolerance: 1e-7,
            max_sweeps: 100_000,
            standardize: true,
            record_trace: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LassoFit {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub weights: Vec<f64>,
    /// `t0 + t . x_a` for every row, including rows left out of the loss.
    pub fitted: Vec<f64>,
    pub active: Vec<usize>,
    pub sweeps: usize,
    pub max_update: f64,
    pub converged: bool,
    pub objective: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<f64>,
}

/// Weighted, centered and scaled copy of the rows that enter the loss.
#[derive(Clone, Debug)]
pub(crate) struct Problem {
    pub rows: Vec<usize>,
    pub w: Vec<f64>,
    pub wsum: f64,
    pub z: Vec<f64>,
    pub zbar: f64,
    /// Column-major standardized design over `rows`.
    pub xs: Vec<Vec<f64>>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns with zero spread over `rows`; their coefficient stays 0.
    pub fixed: Vec<bool>,
    /// Penalty factor on the standardized coefficient.
    pub factor: Vec<f64>,
}

impl Problem {
    pub fn new(x: &DMatrix<f64>, z: &[Option<f64>], weights: &[f64], standardize: bool) -> Result<Problem> {
        let (n, p) = x.shape();
        if z.len() != n || weights.len() != n {
            return Err(Error::Parameter(format!(
                "dimension mismatch: {n} feature rows, {} estimates, {} weights",
                z.len(),
                weights.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mut rows = Vec::new();
        let mut w = Vec::new();
        let mut zv = Vec::new();
        for i in 0..n {
            if let Some(v) = z[i] {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!("non-finite estimate in row {i}")));
                }
                if !(weights[i].is_finite() && weights[i] > 0.0) {
                    return Err(Error::Numeric(format!("weight of row {i} is not positive and finite")));
                }
                rows.push(i);
                w.push(weights[i]);
                zv.push(v);
            }
        }
        if rows.len() < 2 {
            return Err(Error::Estimation(format!(
                "need at least 2 groups with a defined estimate, got {}",
                rows.len()
            )));
        }
        let wsum: f64 = w.iter().sum();
        let zbar = w.iter().zip(&zv).map(|(w, z)| w * z).sum::<f64>() / wsum;
        let mut xs = Vec::with_capacity(p);
        let mut center = Vec::with_capacity(p);
        let mut scale = Vec::with_capacity(p);
        let mut fixed = Vec::with_capacity(p);
        let mut factor = Vec::with_capacity(p);
        for j in 0..p {
            let col: Vec<f64> = rows.iter().map(|&i| x[(i, j)]).collect();
            let m = w.iter().zip(&col).map(|(w, v)| w * v).sum::<f64>() / wsum;
            let var = w.iter().zip(&col).map(|(w, v)| w * (v - m) * (v - m)).sum::<f64>() / wsum;
            let magnitude = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let s = var.sqrt();
            let is_fixed = !(s > 1e-12 * magnitude.max(1e-300));
            let s = if is_fixed { 1.0 } else { s };
            xs.push(col.iter().map(|v| (v - m) / s).collect());
            center.push(m);
            scale.push(s);
            fixed.push(is_fixed);
            factor.push(if standardize { 1.0 } else { 1.0 / s });
        }
        Ok(Problem {
            rows,
            w,
            wsum,
            z: zv,
            zbar,
            xs,
            center,
            scale,
            fixed,
            factor,
        })
    }

    pub fn num_columns(&self) -> usize {
        self.xs.len()
    }

    /// Smallest lambda at which every standardized coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        (0..self.num_columns())
            .filter(|&j| !self.fixed[j])
            .map(|j| {
                let g: f64 = (0..self.rows.len())
                    .map(|i| self.w[i] * self.xs[j][i] * (self.z[i] - self.zbar))
                    .sum();
                2.0 * g.abs() / self.factor[j]
            })
            .fold(0.0, f64::max)
    }

    /// Objective in standardized coordinates (intercept profiled out).
    fn objective(&self, beta: &[f64], resid: &[f64], lambda: f64) -> f64 {
        let loss: f64 = self.w.iter().zip(resid).map(|(w, r)| w * r * r).sum();
        let pen: f64 = beta.iter().zip(&self.factor).map(|(b, f)| f * b.abs()).sum();
        loss + lambda * pen
    }

    /// Solves at `lambda` starting from `beta` (standardized coordinates).
    pub fn solve(&self, lambda: f64, beta: &mut [f64], config: &LassoConfig) -> SolveStats {
        let m = self.rows.len();
        let p = self.num_columns();
        let mut resid: Vec<f64> = (0..m)
            .map(|i| {
                let fit: f64 = (0..p).map(|j| beta[j] * self.xs[j][i]).sum();
                self.z[i] - self.zbar - fit
            })
            .collect();
        // sum_i w_i x_ij^2 is wsum for every standardized free column
        let denom = self.wsum;
        let mut trace = Vec::new();
        if config.record_trace {
            trace.push(self.objective(beta, &resid, lambda));
        }
        let mut sweeps = 0;
        let mut max_update = f64::INFINITY;
        let mut full_sweep = true;
        let mut converged = false;
        while sweeps < config.max_sweeps {
            sweeps += 1;
            max_update = 0.0;
            for j in 0..p {
                if self.fixed[j] || (!full_sweep && beta[j] == 0.0) {
                    continue;
                }
                let xj = &self.xs[j];
                let rho: f64 = (0..m).map(|i| self.w[i] * xj[i] * resid[i]).sum::<f64>() + denom * beta[j];
                let new = soft_threshold(rho, 0.5 * lambda * self.factor[j]) / denom;
                let delta = new - beta[j];
                if delta != 0.0 {
                    for i in 0..m {
                        resid[i] -= delta * xj[i];
                    }
                    beta[j] = new;
                    max_update = max_update.max(delta.abs());
                }
            }
            if config.record_trace {
                trace.push(self.objective(beta, &resid, lambda));
            }
            if max_update < config.tolerance {
                if full_sweep {
                    converged = true;
                    break;
                }
                // active set settled; confirm with a sweep over every column
                full_sweep = true;
            } else {
                full_sweep = false;
            }
        }
        SolveStats {
            sweeps,
            max_update,
            converged,
            objective: self.objective(beta, &resid, lambda),
            trace,
        }
    }

    /// Exact minimizer at lambda = 0 (minimum norm in standardized space).
    pub fn solve_unpenalized(&self) -> Result<Vec<f64>> {
        let free: Vec<usize> = (0..self.num_columns()).filter(|&j| !self.fixed[j]).collect();
        let m = self.rows.len();
        let design = DMatrix::from_fn(m, free.len(), |i, k| self.xs[free[k]][i]);
        let y: Vec<f64> = self.z.iter().map(|z| z - self.zbar).collect();
        let sol = weighted_least_squares(&design, &y, &self.w)?;
        let mut beta = vec![0.0; self.num_columns()];
        for (k, &j) in free.iter().enumerate() {
            beta[j] = sol.solution[k];
        }
        Ok(beta)
    }

    /// Maps standardized coefficients back to `(intercept, coefficients)`.
    pub fn unscale(&self, beta: &[f64]) -> (f64, Vec<f64>) {
        let coefs: Vec<f64> = beta.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let intercept = self.zbar - coefs.iter().zip(&self.center).map(|(c, m)| c * m).sum::<f64>();
        (intercept, coefs)
    }

    pub fn fit_from(
        &self,
        x: &DMatrix<f64>,
        weights: &[f64],
        lambda: f64,
        beta: &[f64],
        stats: SolveStats,
    ) -> LassoFit {
        let (intercept, coefficients) = self.unscale(beta);
        let fitted = predict(x, intercept, &coefficients);
        let active = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
        LassoFit {
            intercept,
            coefficients,
            lambda,
            weights: weights.to_vec(),
            fitted,
            active,
            sweeps: stats.sweeps,
            max_update: stats.max_update,
            converged: stats.converged,
            objective: stats.objective,
            trace: stats.trace,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SolveStats {
    pub sweeps: usize,
    pub max_update: f64,
    pub converged: bool,
    pub objective: f64,
    pub trace: Vec<f64>,
}

pub fn predict(x: &DMatrix<f64>, intercept: f64, coefficients: &[f64]) -> Vec<f64> {
    (0..x.nrows())
        .map(|i| intercept + coefficients.iter().enumerate().map(|(j, c)| c * x[(i, j)]).sum::<f64>())
        .collect()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || lambda.is_nan() {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Objective value at given parameters on the original column scale.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    intercept: f64,
    coefficients: &[f64],
    lambda: f64,
    config: &LassoConfig,
) -> Result<f64> {
    let problem = Problem::new(x, z, weights, config.standardize)?;
    let fitted = predict(x, intercept, coefficients);
    let loss: f64 = problem
        .rows
        .iter()
        .zip(&problem.w)
        .zip(&problem.z)
        .map(|((&i, w), z)| w * (fitted[i] - z).powi(2))
        .sum();
    let pen: f64 = (0..coefficients.len())
        .map(|j| {
            let p = if config.standardize { problem.scale[j] } else { 1.0 };
            p * coefficients[j].abs()
        })
        .sum();
    Ok(loss + lambda * pen)
}

/// Fits the weighted lasso at a single lambda.
pub fn fit_weighted_lasso(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    lambda: f64,
    config: &LassoConfig,
) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let problem = Problem::new(x, z, weights, config.standardize)?;
    let mut beta = vec![0.0; problem.num_columns()];
    fit_problem(&problem, x, weights, lambda, &mut beta, config)
}

pub(crate) fn fit_problem(
    problem: &Problem,
    x: &DMatrix<f64>,
    weights: &[f64],
    lambda: f64,
    beta: &mut Vec<f64>,
    config: &LassoConfig,
) -> Result<LassoFit> {
    let stats = if lambda == 0.0 {
        *beta = problem.solve_unpenalized()?;
        let resid = residuals(problem, beta);
        let objective = problem.objective(beta, &resid, 0.0);
        SolveStats {
            sweeps: 0,
            max_update: 0.0,
            converged: true,
            objective,
            trace: Vec::new(),
        }
    } else {
        problem.solve(lambda, beta, config)
    };
    Ok(problem.fit_from(x, weights, lambda, beta, stats))
}

fn residuals(problem: &Problem, beta: &[f64]) -> Vec<f64> {
    (0..problem.rows.len())
        .map(|i| {
            let fit: f64 = beta.iter().enumerate().map(|(j, b)| b * problem.xs[j][i]).sum();
            problem.z[i] - problem.zbar - fit
        })
        .collect()
}

/// Fits along `lambdas` in the given order, warm-starting each solve from
/// the previous solution.
pub fn lasso_path(
    x: &DMatrix<f64>,
    z: &[Option<f64>],
    weights: &[f64],
    lambdas: &[f64],
    config: &LassoConfig,
) -> Result<Vec<LassoFit>> {
    for &l in lambdas {
        check_lambda(l)?;
    }
    let problem = Problem::new(x, z, weights, config.standardize)?;
    let mut beta = vec![0.0; problem.num_columns()];
    lambdas
        .iter()
        .map(|&l| fit_problem(&problem, x, weights, l, &mut beta, config))
        .collect()
}

/// Smallest lambda with all coefficients at zero.
pub fn lambda_max(x: &DMatrix<f64>, z: &[Option<f64>], weights: &[f64], config: &LassoConfig) -> Result<f64> {
    Ok(Problem::new(x, z, weights, config.standardize)?.lambda_max())
}

/// `count` log-spaced values from `max` down to `ratio * max`. A zero
/// `max` (constant estimates) is replaced by 1, where every lambda gives
/// the same fit.
pub fn lambda_grid(max: f64, count: usize, ratio: f64) -> Vec<f64> {
    let max = if max > 0.0 { max } else { 1.0 };
    match count {
        0 => Vec::new(),
        1 => vec![max],
        _ => {
            let step = ratio.ln() / (count - 1) as f64;
            (0..count)
                .map(|k| if k == 0 { max } else { max * (step * k as f64).exp() })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, Vec<Option<f64>>, Vec<f64>) {
        let x = DMatrix::from_row_slice(5, 2, &[1.0, 0.2, 0.0, 1.5, 2.0, -0.4, 1.0, 0.9, -1.0, 0.3]);
        let z = vec![Some(0.3), Some(0.5), Some(0.9), None, Some(0.1)];
        let w = vec![2.0, 1.0, 4.0, 3.0, 0.5];
        (x, z, w)
    }

    #[test]
    fn large_lambda_gives_weighted_mean() {
        let (x, z, w) = toy();
        let c = LassoConfig::default();
        let lm = lambda_max(&x, &z, &w, &c).unwrap();
        let fit = fit_weighted_lasso(&x, &z, &w, lm, &c).unwrap();
        let mean = (0.3 * 2.0 + 0.5 + 0.9 * 4.0 + 0.1 * 0.5) / 7.5;
        for f in &fit.fitted {
            assert!((f - mean).abs() < 1e-12);
        }
        assert!(fit.active.is_empty());
        let fit = fit_weighted_lasso(&x, &z, &w, 0.999 * lm, &c).unwrap();
        assert_eq!(fit.active.len(), 1);
    }

    #[test]
    fn fitted_values_cover_excluded_rows() {
        let (x, z, w) = toy();
        let fit = fit_weighted_lasso(&x, &z, &w, 0.1, &LassoConfig::default()).unwrap();
        let expect = fit.intercept + fit.coefficients[0] * 1.0 + fit.coefficients[1] * 0.9;
        assert!((fit.fitted[3] - expect).abs() < 1e-14);
    }

    #[test]
    fn objective_trace_is_non_increasing() {
        let (x, z, w) = toy();
        let c = LassoConfig {
            record_trace: true,
            ..LassoConfig::default()
        };
        let fit = fit_weighted_lasso(&x, &z, &w, 0.05, &c).unwrap();
        assert!(fit.converged);
        for pair in fit.trace.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{pair:?}");
        }
    }

    #[test]
    fn reported_objective_matches_direct_evaluation() {
        let (x, z, w) = toy();
        for standardize in [true, false] {
            let c = LassoConfig {
                standardize,
                ..LassoConfig::default()
            };
            let fit = fit_weighted_lasso(&x, &z, &w, 0.2, &c).unwrap();
            let direct = lasso_objective(&x, &z, &w, fit.intercept, &fit.coefficients, 0.2, &c).unwrap();
            assert!((fit.objective - direct).abs() < 1e-10 * direct.max(1.0));
        }
    }

    #[test]
    fn constant_column_is_ignored() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let z = vec![Some(1.0), Some(2.0), Some(3.0)];
        let fit = fit_weighted_lasso(&x, &z, &[1.0; 3], 0.0, &LassoConfig::default()).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        for (f, z) in fit.fitted.iter().zip([1.0, 2.0, 3.0]) {
            assert!((f - z).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let (x, _, w) = toy();
        let c = LassoConfig::default();
        let one = vec![Some(1.0), None, None, None, None];
        assert!(matches!(
            fit_weighted_lasso(&x, &one, &w, 0.1, &c),
            Err(Error::Estimation(_))
        ));
        let bad = vec![Some(f64::NAN), Some(1.0), None, None, None];
        assert!(matches!(
            fit_weighted_lasso(&x, &bad, &w, 0.1, &c),
            Err(Error::Numeric(_))
        ));
        let (x, z, w) = toy();
        assert!(fit_weighted_lasso(&x, &z, &w, -1.0, &c).is_err());
    }

    #[test]
    fn grid_shape() {
        let g = lambda_grid(2.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 2.0);
        assert!((g[49] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|p| p[1] < p[0]));
    }
}
