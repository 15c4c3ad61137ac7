//! Weighted least squares through a rank-revealing SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub solution: DVector<f64>,
    /// Weighted residual sum of squares `sum_i w_i (y_i - x_i . beta)^2`.
    pub rss: f64,
    pub rank: usize,
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite entry in {what}")));
    }
    Ok(())
}

/// Minimum-norm minimizer of `sum_i w_i (y_i - x_i . beta)^2`.
///
/// Rank is the number of singular values of `diag(sqrt(w)) X` above
/// `RANK_TOLERANCE * sigma_max`.
pub fn weighted_least_squares(design: &DMatrix<f64>, response: &[f64], weights: &[f64]) -> Result<WlsSolution> {
    let (n, p) = design.shape();
    if response.len() != n || weights.len() != n {
        return Err(Error::Parameter(format!(
            "dimension mismatch: design {n}x{p}, response {}, weights {}",
            response.len(),
            weights.len()
        )));
    }
    check_finite("design", design.iter().copied())?;
    check_finite("response", response.iter().copied())?;
    check_finite("weights", weights.iter().copied())?;
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Parameter("negative weight".into()));
    }
    if p == 0 {
        let rss = response.iter().zip(weights).map(|(y, w)| w * y * y).sum();
        return Ok(WlsSolution {
            solution: DVector::zeros(0),
            rss,
            rank: 0,
        });
    }

    let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let a = DMatrix::from_fn(n, p, |i, j| sqrt_w[i] * design[(i, j)]);
    let b = DVector::from_iterator(n, response.iter().zip(&sqrt_w).map(|(y, s)| y * s));

    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cutoff = RANK_TOLERANCE * sigma_max;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let solution = if rank == 0 {
        DVector::zeros(p)
    } else {
        svd.solve(&b, cutoff)
            .map_err(|e| Error::Numeric(format!("SVD solve failed: {e}")))?
    };
    let resid = &b - &a * &solution;
    let rss = resid.iter().map(|r| r * r).sum();
    Ok(WlsSolution { solution, rss, rank })
}

/// Weighted least squares with a diagonal ridge penalty
/// `sum_j penalty_j * beta_j^2`; a zero entry leaves that coefficient free.
pub fn penalized_least_squares(
    design: &DMatrix<f64>,
    response: &[f64],
    weights: &[f64],
    penalties: &[f64],
) -> Result<WlsSolution> {
    let (n, p) = design.shape();
    if penalties.len() != p {
        return Err(Error::Parameter(format!(
            "expected {p} penalties, got {}",
            penalties.len()
        )));
    }
    if penalties.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::Parameter("ridge penalties must be finite and >= 0".into()));
    }
    let penalized: Vec<usize> = (0..p).filter(|&j| penalties[j] > 0.0).collect();
    let rows = n + penalized.len();
    let mut aug = DMatrix::zeros(rows, p);
    aug.view_mut((0, 0), (n, p)).copy_from(design);
    let mut y = response.to_vec();
    let mut w = weights.to_vec();
    for (k, &j) in penalized.iter().enumerate() {
        aug[(n + k, j)] = penalties[j].sqrt();
        y.push(0.0);
        w.push(1.0);
    }
    let mut sol = weighted_least_squares(&aug, &y, &w)?;
    // report the data-fit part only
    let fitted = design * &sol.solution;
    sol.rss = (0..n).map(|i| weights[i] * (response[i] - fitted[i]).powi(2)).sum();
    Ok(sol)
}

/// `sign(v) * max(|v| - t, 0)`.
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}
