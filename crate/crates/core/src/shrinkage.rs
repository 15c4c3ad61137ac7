//! James-Stein and empirical-Bayes shrinkage of per-group estimates.
//!
//! Both shrink toward a weighted mean of the defined estimates; groups with
//! an undefined estimate stay undefined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{EstimateSet, EstimatorKind};
use crate::variance::{normal_interval, CiMethod, IntervalSet, VarianceModel};

/// Numerator multiplier `c` in the James-Stein shrink factor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JsMultiplier {
    /// Number of groups with a defined estimate.
    #[default]
    Groups,
    /// Number of defined groups minus three, floored at zero.
    GroupsMinusThree,
    Fixed(f64),
}

impl JsMultiplier {
    pub fn value(self, groups: usize) -> f64 {
        match self {
            JsMultiplier::Groups => groups as f64,
            JsMultiplier::GroupsMinusThree => groups.saturating_sub(3) as f64,
            JsMultiplier::Fixed(c) => c,
        }
    }
}

fn defined(z: &EstimateSet) -> Result<Vec<(usize, f64, f64)>> {
    let d: Vec<(usize, f64, f64)> = z
        .values
        .iter()
        .zip(&z.sizes)
        .enumerate()
        .filter_map(|(a, (v, &n))| v.map(|v| (a, v, n as f64)))
        .collect();
    if d.len() < 2 {
        return Err(Error::Estimation(format!(
            "shrinkage needs at least 2 groups with a defined estimate, got {}",
            d.len()
        )));
    }
    if d.iter().any(|&(_, v, _)| !v.is_finite()) {
        return Err(Error::Numeric("non-finite estimate".into()));
    }
    Ok(d)
}

/// Size-weighted mean `sum n_a Z_a / sum n_a` over defined groups.
fn size_weighted_mean(d: &[(usize, f64, f64)]) -> f64 {
    if d.iter().all(|x| x.1 == d[0].1) {
        return d[0].1;
    }
    let n: f64 = d.iter().map(|x| x.2).sum();
    d.iter().map(|&(_, z, m)| m * z).sum::<f64>() / n
}

/// `mu0 + (1 - c sigma^2 / sum n_a (Z_a - mu0)^2)_+ (Z_a - mu0)`.
/// Zero spread gives a factor of zero.
pub fn james_stein(z: &EstimateSet, sigma2: f64, multiplier: JsMultiplier) -> Result<EstimateSet> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Parameter(format!(
            "pooled variance must be finite and >= 0, got {sigma2}"
        )));
    }
    let d = defined(z)?;
    let mu0 = size_weighted_mean(&d);
    let spread: f64 = d.iter().map(|&(_, v, n)| n * (v - mu0) * (v - mu0)).sum();
    let c = multiplier.value(d.len());
    let factor = if spread > 0.0 {
        (1.0 - c * sigma2 / spread).max(0.0)
    } else {
        0.0
    };
    let mut values = vec![None; z.len()];
    for &(a, v, _) in &d {
        values[a] = Some(if factor == 1.0 { v } else { mu0 + factor * (v - mu0) });
    }
    Ok(z.with_method(EstimatorKind::Js, values))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EbFit {
    pub tau2: f64,
    pub mu: f64,
    pub mu0: f64,
    /// `tau^2 / (tau^2 + sigma_a^2)` per defined group.
    pub shrink: Vec<Option<f64>>,
    pub posterior_mean: Vec<Option<f64>>,
    pub posterior_variance: Vec<Option<f64>>,
}

/// Hierarchical-Gaussian empirical Bayes with `w_a = n_a / n`:
///
/// ```text
/// tau^2 = (sum w_a (Z_a - mu0)^2 - sum w_a (1 - w_a) sigma_a^2) / (1 - sum w_a^2), clipped at 0
/// mu    = sum Z_a / (tau^2 + sigma_a^2) / sum 1 / (tau^2 + sigma_a^2)
/// ```
pub fn empirical_bayes(z: &EstimateSet, variance: &VarianceModel) -> Result<EbFit> {
    let d = defined(z)?;
    let s2: Vec<f64> = d
        .iter()
        .map(|&(a, _, _)| {
            variance
                .group_variance(a)
                .ok_or_else(|| Error::Estimation(format!("no pooled variance for group {a}")))
        })
        .collect::<Result<_>>()?;
    let n: f64 = d.iter().map(|x| x.2).sum();
    let w: Vec<f64> = d.iter().map(|x| x.2 / n).collect();
    let mu0 = size_weighted_mean(&d);
    let mut num = 0.0;
    let mut sw2 = 0.0;
    for (k, &(_, v, _)) in d.iter().enumerate() {
        num += w[k] * (v - mu0) * (v - mu0) - w[k] * (1.0 - w[k]) * s2[k];
        sw2 += w[k] * w[k];
    }
    let tau2 = if sw2 < 1.0 { (num / (1.0 - sw2)).max(0.0) } else { 0.0 };

    let mut sz = 0.0;
    let mut si = 0.0;
    for (k, &(_, v, _)) in d.iter().enumerate() {
        let t = tau2 + s2[k];
        if t > 0.0 {
            sz += v / t;
            si += 1.0 / t;
        }
    }
    let mu = if si > 0.0 { sz / si } else { mu0 };

    let mut shrink = vec![None; z.len()];
    let mut mean = vec![None; z.len()];
    let mut var = vec![None; z.len()];
    for (k, &(a, v, _)) in d.iter().enumerate() {
        let t = tau2 + s2[k];
        let f = if t > 0.0 { tau2 / t } else { 0.0 };
        shrink[a] = Some(f);
        mean[a] = Some(mu + f * (v - mu));
        var[a] = Some(f * s2[k]);
    }
    Ok(EbFit {
        tau2,
        mu,
        mu0,
        shrink,
        posterior_mean: mean,
        posterior_variance: var,
    })
}

pub fn eb_estimates(fit: &EbFit, template: &EstimateSet) -> EstimateSet {
    template.with_method(EstimatorKind::Eb, fit.posterior_mean.clone())
}

/// Posterior-mean plus/minus normal quantile times posterior sd. These are
/// credible intervals under the fitted prior; frequentist calibration is
/// not guaranteed.
pub fn eb_credible_set(fit: &EbFit, level: f64) -> Result<IntervalSet> {
    let intervals = fit
        .posterior_mean
        .iter()
        .zip(&fit.posterior_variance)
        .map(|(m, v)| match (m, v) {
            (Some(m), Some(v)) => normal_interval(*m, v.sqrt(), 1.0 - level).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(IntervalSet {
        method: CiMethod::EbCredible,
        level,
        intervals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupKey;
    use crate::variance::pooled_variance;

    fn set(values: &[Option<f64>], sizes: &[usize]) -> EstimateSet {
        EstimateSet {
            method: EstimatorKind::Standard,
            metric: "mean".into(),
            keys: (0..values.len()).map(|i| GroupKey::new([format!("g{i}")])).collect(),
            values: values.to_vec(),
            sizes: sizes.to_vec(),
        }
    }

    #[test]
    fn js_hand_example() {
        // mu0 = (10*.2 + 20*.5 + 30*.3 + 40*.6)/100 = .45
        // spread = 10*.0625 + 20*.0025 + 30*.0225 + 40*.0225 = 2.25
        // factor = 1 - 4 * .1 / 2.25
        let z = set(&[Some(0.2), Some(0.5), Some(0.3), Some(0.6)], &[10, 20, 30, 40]);
        let js = james_stein(&z, 0.1, JsMultiplier::Groups).unwrap();
        let f = 1.0 - 0.4 / 2.25;
        for (o, v) in js.values.iter().zip([0.2, 0.5, 0.3, 0.6]) {
            assert!((o.unwrap() - (0.45 + f * (v - 0.45))).abs() < 1e-14);
        }
        let js = james_stein(&z, 0.1, JsMultiplier::GroupsMinusThree).unwrap();
        let f = 1.0 - 0.1 / 2.25;
        assert!((js.values[0].unwrap() - (0.45 + f * (0.2 - 0.45))).abs() < 1e-14);
    }

    #[test]
    fn js_degenerate_cases() {
        let z = set(&[Some(0.3), Some(0.3), None], &[4, 9, 0]);
        let js = james_stein(&z, 0.5, JsMultiplier::Groups).unwrap();
        assert_eq!(js.values, vec![Some(0.3), Some(0.3), None]);
        let z = set(&[Some(0.1), Some(0.7)], &[4, 9]);
        assert_eq!(james_stein(&z, 0.0, JsMultiplier::Groups).unwrap().values, z.values);
        assert_eq!(james_stein(&z, 0.3, JsMultiplier::Fixed(0.0)).unwrap().values, z.values);
        let one = set(&[Some(0.1), None], &[4, 0]);
        assert!(matches!(
            james_stein(&one, 0.1, JsMultiplier::Groups),
            Err(Error::Estimation(_))
        ));
    }

    #[test]
    fn eb_zero_prior_variance_collapses() {
        let z = set(&[Some(0.3), Some(0.31), Some(0.29)], &[10, 10, 10]);
        let vm = pooled_variance(&[Some(0.05); 3], &[10, 10, 10]).unwrap();
        let fit = empirical_bayes(&z, &vm).unwrap();
        assert_eq!(fit.tau2, 0.0);
        for m in fit.posterior_mean.iter().flatten() {
            assert!((m - fit.mu).abs() < 1e-15);
        }
    }

    #[test]
    fn eb_precise_group_keeps_its_estimate() {
        let z = set(&[Some(0.1), Some(0.9), Some(0.5)], &[1_000_000_000, 2, 3]);
        let vm = pooled_variance(&[Some(0.0), Some(0.01), Some(0.02)], &[1_000_000_000, 2, 3]).unwrap();
        let vm = VarianceModel { sigma2: 0.05, ..vm };
        let fit = empirical_bayes(&z, &vm).unwrap();
        assert!(fit.tau2 > 0.0);
        assert!((fit.posterior_mean[0].unwrap() - 0.1).abs() < 1e-6);
    }

    #[test]
    fn eb_credible_interval_uses_posterior_sd() {
        let z = set(&[Some(0.1), Some(0.9), Some(0.5), None], &[5, 8, 3, 0]);
        let vm = pooled_variance(&[Some(0.01), Some(0.01), Some(0.01), None], &[5, 8, 3, 0]).unwrap();
        let fit = empirical_bayes(&z, &vm).unwrap();
        let ci = eb_credible_set(&fit, 0.95).unwrap();
        assert!(ci.intervals[3].is_none());
        let iv = ci.intervals[1].unwrap();
        let sd = fit.posterior_variance[1].unwrap().sqrt();
        assert!((iv.width() - 2.0 * 1.959963984540054 * sd).abs() < 1e-12);
        assert!(fit.posterior_variance[1].unwrap() <= vm.group_variance(1).unwrap());
    }
}
