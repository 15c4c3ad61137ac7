//! Normal quantiles and F-distribution tail probabilities.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Quantile of the standard normal distribution.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs 0 < p < 1, got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    Ok(standard_normal().inverse_cdf(p))
}

/// Distribution function of the standard normal distribution.
pub fn normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

fn standard_normal() -> Normal {
    Normal::standard()
}

fn check_df(d1: f64, d2: f64) -> Result<()> {
    if !(d1 >= 1.0 && d2 >= 1.0 && d1.is_finite() && d2.is_finite()) {
        return Err(Error::Domain(format!(
            "F distribution needs finite degrees of freedom >= 1, got ({d1}, {d2})"
        )));
    }
    Ok(())
}

/// CDF of the F distribution, `I_{d1 x / (d1 x + d2)}(d1/2, d2/2)`.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, d2)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("F distribution needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    // For large arguments use the complementary form, which keeps the beta
    // argument away from 1.
    let t = d1 * x / (d1 * x + d2);
    if t <= 0.5 {
        Ok(beta_reg(d1 / 2.0, d2 / 2.0, t))
    } else {
        let c = d2 / (d1 * x + d2);
        Ok(1.0 - beta_reg(d2 / 2.0, d1 / 2.0, c))
    }
}

/// Upper tail `1 - F-CDF(x)`, computed without cancellation.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> Result<f64> {
    check_df(d1, d2)?;
    if x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("F distribution needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let t = d1 * x / (d1 * x + d2);
    if t <= 0.5 {
        Ok(1.0 - beta_reg(d1 / 2.0, d2 / 2.0, t))
    } else {
        let c = d2 / (d1 * x + d2);
        Ok(beta_reg(d2 / 2.0, d1 / 2.0, c))
    }
}
