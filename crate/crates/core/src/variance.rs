//! Bootstrap and pooled variance estimates of the standard estimator, and
//! the three confidence-interval constructions built from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::GroupedDataset;
use crate::error::{Error, Result};
use crate::metrics::{MetricConfig, Observation};
use crate::numerics::rng::{self, tags};
use crate::numerics::{normal_quantile, sample_variance, sorted_quantile};

pub const DEFAULT_VARIANCE_REPLICATES: usize = 1000;
pub const DEFAULT_PERCENTILE_REPLICATES: usize = 2000;

/// Relative floor applied to per-group variances used as regression weights.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Metric values over `replicates` resamples (with replacement, same size)
/// of `obs`; resamples on which the metric is undefined are dropped.
///
/// Replicate `r` of group `group` draws from the stream
/// `(seed, tag, group, r)`, so the output does not depend on scheduling.
pub fn bootstrap_replicates(
    obs: &[Observation],
    metric: &MetricConfig,
    replicates: usize,
    seed: u64,
    tag: u64,
    group: u64,
) -> Vec<f64> {
    let n = obs.len();
    if n == 0 {
        return Vec::new();
    }
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[tag, group, r as u64]);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            metric.evaluate_indexed(obs, &idx)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Bootstrap variance of the metric on one group; `None` when fewer than
/// two resamples are defined.
pub fn bootstrap_group_variance(
    obs: &[Observation],
    metric: &MetricConfig,
    replicates: usize,
    seed: u64,
    group: u64,
) -> Result<Option<f64>> {
    if replicates < 2 {
        return Err(Error::Parameter(format!(
            "bootstrap needs at least 2 replicates, got {replicates}"
        )));
    }
    if obs.is_empty() {
        return Ok(None);
    }
    let values = bootstrap_replicates(obs, metric, replicates, seed, tags::BOOTSTRAP_VARIANCE, group);
    Ok(sample_variance(&values))
}

/// Bootstrap variances for every group (empty groups get `None`).
pub fn bootstrap_variances(
    data: &GroupedDataset,
    metric: &MetricConfig,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    data.groups()
        .iter()
        .enumerate()
        .map(|(g, recs)| {
            let obs = metric.observations(recs)?;
            bootstrap_group_variance(&obs, metric, replicates, seed, g as u64)
        })
        .collect()
}

/// Pooled variance model `sigma_a^2 = sigma^2 / n_a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceModel {
    /// Per-group bootstrap variances.
    pub boot: Vec<Option<f64>>,
    pub sizes: Vec<usize>,
    /// Pooled scale `sigma^2`.
    pub sigma2: f64,
    pub replicates: usize,
    pub seed: u64,
}

impl VarianceModel {
    /// Pooled variance `sigma^2 / n_a`, or `None` for empty groups.
    pub fn group_variance(&self, group: usize) -> Option<f64> {
        let n = self.sizes[group];
        (n > 0).then(|| self.sigma2 / n as f64)
    }

    pub fn group_variances(&self) -> Vec<Option<f64>> {
        (0..self.sizes.len()).map(|g| self.group_variance(g)).collect()
    }

    /// Inverse-variance regression weights `1 / sigma_a^2`, with the
    /// variance floored at `VARIANCE_FLOOR * sigma^2`. When the pooled scale
    /// is zero the weights fall back to `n_a`, its scale-free limit. Empty
    /// groups get weight zero.
    pub fn weights(&self) -> Vec<f64> {
        self.sizes
            .iter()
            .map(|&n| {
                if n == 0 {
                    0.0
                } else if self.sigma2 > 0.0 {
                    let v = (self.sigma2 / n as f64).max(VARIANCE_FLOOR * self.sigma2);
                    1.0 / v
                } else {
                    n as f64
                }
            })
            .collect()
    }

    /// Variance model with the same pooled scale evaluated at other sizes.
    pub fn at_sizes(&self, sizes: Vec<usize>) -> VarianceModel {
        VarianceModel {
            boot: vec![None; sizes.len()],
            sizes,
            sigma2: self.sigma2,
            replicates: self.replicates,
            seed: self.seed,
        }
    }
}

/// Pools per-group bootstrap variances:
/// `sigma^2 = sum_a n_a (n_a v_a) / sum_a n_a` over groups with a defined
/// bootstrap variance.
pub fn pooled_variance(boot: &[Option<f64>], sizes: &[usize]) -> Result<VarianceModel> {
    if boot.len() != sizes.len() {
        return Err(Error::Parameter(
            "bootstrap variances and sizes differ in length".into(),
        ));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (v, &n) in boot.iter().zip(sizes) {
        if let (Some(v), true) = (v, n > 0) {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::Numeric(format!("invalid bootstrap variance {v}")));
            }
            let n = n as f64;
            num += n * (n * v);
            den += n;
        }
    }
    if den == 0.0 {
        return Err(Error::Estimation("no group has a defined bootstrap variance".into()));
    }
    Ok(VarianceModel {
        boot: boot.to_vec(),
        sizes: sizes.to_vec(),
        sigma2: num / den,
        replicates: 0,
        seed: 0,
    })
}

/// Bootstraps every group and pools the result.
pub fn estimate_variance_model(
    data: &GroupedDataset,
    metric: &MetricConfig,
    replicates: usize,
    seed: u64,
) -> Result<VarianceModel> {
    let boot = bootstrap_variances(data, metric, replicates, seed)?;
    let mut model = pooled_variance(&boot, &data.sizes())?;
    model.replicates = replicates;
    model.seed = seed;
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    PooledNormal,
    NaiveNormal,
    Percentile,
    Rblpr,
    EbCredible,
}

impl CiMethod {
    pub fn name(self) -> &'static str {
        match self {
            CiMethod::PooledNormal => "pooled_normal",
            CiMethod::NaiveNormal => "naive_normal",
            CiMethod::Percentile => "percentile",
            CiMethod::Rblpr => "rblpr",
            CiMethod::EbCredible => "eb_credible",
        }
    }
}

impl fmt::Display for CiMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CiMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pooled_normal" => CiMethod::PooledNormal,
            "naive_normal" => CiMethod::NaiveNormal,
            "percentile" => CiMethod::Percentile,
            "rblpr" => CiMethod::Rblpr,
            "eb_credible" => CiMethod::EbCredible,
            _ => return Err(Error::Config(format!("unknown interval method `{s}`"))),
        })
    }
}

/// Intervals for every group at one confidence level; `None` marks groups
/// with insufficient data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalSet {
    pub method: CiMethod,
    pub level: f64,
    pub intervals: Vec<Option<Interval>>,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Parameter(format!("significance level {alpha} outside (0, 1]")));
    }
    Ok(())
}

/// `[center + q_{alpha/2} sd, center + q_{1-alpha/2} sd]`.
pub fn normal_interval(center: f64, sd: f64, alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    if !(sd >= 0.0) {
        return Err(Error::Parameter(format!("standard deviation {sd} is negative")));
    }
    let q = normal_quantile(1.0 - alpha / 2.0)?;
    Ok(Interval {
        lower: center - q * sd,
        upper: center + q * sd,
    })
}

/// Normal interval around `Z_a` with the pooled standard deviation.
pub fn pooled_normal_ci(z: f64, pooled_sd: f64, alpha: f64) -> Result<Interval> {
    normal_interval(z, pooled_sd, alpha)
}

/// Normal interval around `Z_a` with the group's own bootstrap standard
/// deviation.
pub fn naive_normal_ci(z: f64, boot_sd: f64, alpha: f64) -> Result<Interval> {
    normal_interval(z, boot_sd, alpha)
}

/// Percentile interval from an ascending-sorted bootstrap sample.
pub fn percentile_interval(sorted: &[f64], alpha: f64) -> Result<Interval> {
    check_alpha(alpha)?;
    if sorted.len() < 2 {
        return Err(Error::Estimation(format!(
            "percentile interval needs at least 2 defined resamples, got {}",
            sorted.len()
        )));
    }
    Ok(Interval {
        lower: sorted_quantile(sorted, alpha / 2.0),
        upper: sorted_quantile(sorted, 1.0 - alpha / 2.0),
    })
}

/// Bootstrap percentile interval of the metric on one group.
pub fn bootstrap_percentile_ci(
    obs: &[Observation],
    metric: &MetricConfig,
    replicates: usize,
    alpha: f64,
    seed: u64,
    group: u64,
) -> Result<Interval> {
    check_alpha(alpha)?;
    if obs.is_empty() {
        return Err(Error::Estimation("percentile interval of an empty group".into()));
    }
    let mut values = bootstrap_replicates(obs, metric, replicates, seed, tags::BOOTSTRAP_PERCENTILE, group);
    values.sort_by(|a, b| a.total_cmp(b));
    percentile_interval(&values, alpha)
}

/// Sorted percentile-bootstrap samples per group, for building intervals at
/// several levels from one set of resamples. Empty groups yield an empty
/// sample.
pub fn percentile_samples(
    data: &GroupedDataset,
    metric: &MetricConfig,
    replicates: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    data.groups()
        .iter()
        .enumerate()
        .map(|(g, recs)| {
            let obs = metric.observations(recs)?;
            let mut v = bootstrap_replicates(&obs, metric, replicates, seed, tags::BOOTSTRAP_PERCENTILE, g as u64);
            v.sort_by(|a, b| a.total_cmp(b));
            Ok(v)
        })
        .collect()
}

/// Pooled-normal intervals for all groups with a defined estimate.
pub fn pooled_normal_set(z: &[Option<f64>], model: &VarianceModel, level: f64) -> Result<IntervalSet> {
    let alpha = 1.0 - level;
    let intervals = z
        .iter()
        .enumerate()
        .map(|(g, z)| match (z, model.group_variance(g)) {
            (Some(z), Some(v)) => pooled_normal_ci(*z, v.sqrt(), alpha).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(IntervalSet {
        method: CiMethod::PooledNormal,
        level,
        intervals,
    })
}

/// Naive-normal intervals from per-group bootstrap variances.
pub fn naive_normal_set(z: &[Option<f64>], model: &VarianceModel, level: f64) -> Result<IntervalSet> {
    let alpha = 1.0 - level;
    let intervals = z
        .iter()
        .zip(&model.boot)
        .map(|(z, v)| match (z, v) {
            (Some(z), Some(v)) => naive_normal_ci(*z, v.sqrt(), alpha).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;
    Ok(IntervalSet {
        method: CiMethod::NaiveNormal,
        level,
        intervals,
    })
}

/// Percentile intervals from precomputed sorted samples.
pub fn percentile_set(samples: &[Vec<f64>], level: f64) -> Result<IntervalSet> {
    let alpha = 1.0 - level;
    let intervals = samples
        .iter()
        .map(|s| {
            if s.len() < 2 {
                Ok(None)
            } else {
                percentile_interval(s, alpha).map(Some)
            }
        })
        .collect::<Result<_>>()?;
    Ok(IntervalSet {
        method: CiMethod::Percentile,
        level,
        intervals,
    })
}
