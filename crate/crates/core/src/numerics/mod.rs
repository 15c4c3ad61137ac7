//! Numerical primitives shared by the estimators.

pub mod linalg;
pub mod rng;
pub mod special;

pub use linalg::{penalized_least_squares, soft_threshold, weighted_least_squares, WlsSolution};
pub use special::{f_cdf, f_sf, normal_cdf, normal_quantile};

/// Inverse-ECDF quantile of an ascending-sorted sample: the smallest order
/// statistic `x_(k)` with `k / m >= p`.
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let m = sorted.len();
    let k = ((p * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

/// Unbiased sample variance with sequential accumulation.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some(0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Some(ss / (n - 1.0))
}
