//! Repeated-draw benchmark of estimators and interval methods against a
//! population's ground truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::population::{sample_evaluation_dataset, Population};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::metrics::{standard_estimates, EstimateSet, EstimatorKind, MetricConfig};
use crate::numerics::rng::{derive_seed, tags};
use crate::regression::{fit_structured, rblpr_ci_levels, SrConfig};
use crate::shrinkage::{eb_credible_set, empirical_bayes, james_stein, JsMultiplier};
use crate::variance::{
    estimate_variance_model, naive_normal_set, percentile_samples, percentile_set, pooled_normal_set, CiMethod,
    IntervalSet, DEFAULT_PERCENTILE_REPLICATES,
};

pub const BUCKETS: [&str; 3] = ["all", "small", "large"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub draws: usize,
    pub sample_size: usize,
    pub estimators: Vec<EstimatorKind>,
    pub ci_methods: Vec<CiMethod>,
    pub levels: Vec<f64>,
    /// Groups with at most this many sampled records are "small".
    pub small_threshold: usize,
    pub features: FeatureSpec,
    pub sr: SrConfig,
    pub js_multiplier: JsMultiplier,
    pub percentile_replicates: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            draws: 20,
            sample_size: 5000,
            estimators: vec![
                EstimatorKind::Standard,
                EstimatorKind::Sr,
                EstimatorKind::Js,
                EstimatorKind::Eb,
            ],
            ci_methods: vec![
                CiMethod::PooledNormal,
                CiMethod::NaiveNormal,
                CiMethod::Percentile,
                CiMethod::Rblpr,
            ],
            levels: vec![0.9, 0.95, 0.99],
            small_threshold: 25,
            features: FeatureSpec {
                explanatory: vec!["number_diagnoses".into()],
                ..FeatureSpec::default()
            },
            sr: SrConfig::default(),
            js_multiplier: JsMultiplier::default(),
            percentile_replicates: DEFAULT_PERCENTILE_REPLICATES,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::Config("benchmark needs at least one draw".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("benchmark needs at least one estimator".into()));
        }
        if let Some(e) = self
            .estimators
            .iter()
            .find(|e| matches!(e, EstimatorKind::Truth | EstimatorKind::Lpr))
        {
            return Err(Error::Config(format!("estimator `{e}` cannot be benchmarked")));
        }
        if self.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(Error::Config("confidence levels must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub estimator: EstimatorKind,
    pub bucket: String,
    /// `None` for the aggregate over all draws.
    pub draw: Option<usize>,
    pub mae: Option<f64>,
    pub mse: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverageRow {
    pub method: CiMethod,
    pub level: f64,
    pub bucket: String,
    pub coverage: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WidthRow {
    pub method: CiMethod,
    pub level: f64,
    pub bucket: String,
    /// Mean of width over the pooled-normal width at the same level.
    pub mean_relative_width: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    pub draw: usize,
    pub method: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub metric: String,
    pub draws: usize,
    pub sample_size: usize,
    pub population_size: usize,
    pub seed: u64,
    pub small_threshold: usize,
    pub errors: Vec<ErrorRow>,
    pub draw_errors: Vec<ErrorRow>,
    pub coverage: Vec<CoverageRow>,
    pub width: Vec<WidthRow>,
    pub selected_lambdas: Vec<Option<f64>>,
    pub failures: Vec<Failure>,
}

impl BenchmarkReport {
    fn error_row(&self, estimator: EstimatorKind, bucket: &str, draw: Option<usize>) -> Option<&ErrorRow> {
        let rows = if draw.is_some() {
            &self.draw_errors
        } else {
            &self.errors
        };
        rows.iter()
            .find(|r| r.estimator == estimator && r.bucket == bucket && r.draw == draw)
    }

    pub fn mae(&self, estimator: EstimatorKind, bucket: &str) -> Option<f64> {
        self.error_row(estimator, bucket, None)?.mae
    }

    pub fn mse(&self, estimator: EstimatorKind, bucket: &str) -> Option<f64> {
        self.error_row(estimator, bucket, None)?.mse
    }

    pub fn draw_mae(&self, estimator: EstimatorKind, bucket: &str, draw: usize) -> Option<f64> {
        self.error_row(estimator, bucket, Some(draw))?.mae
    }

    pub fn coverage(&self, method: CiMethod, level: f64, bucket: &str) -> Option<f64> {
        self.coverage
            .iter()
            .find(|r| r.method == method && r.level == level && r.bucket == bucket)?
            .coverage
    }

    pub fn relative_width(&self, method: CiMethod, level: f64, bucket: &str) -> Option<f64> {
        self.width
            .iter()
            .find(|r| r.method == method && r.level == level && r.bucket == bucket)?
            .mean_relative_width
    }
}

struct DrawOutcome {
    sizes: Vec<usize>,
    estimates: Vec<(EstimatorKind, Vec<Option<f64>>)>,
    intervals: Vec<IntervalSet>,
    /// Pooled-normal intervals per level, the width reference.
    reference: Vec<IntervalSet>,
    lambda: Option<f64>,
    failures: Vec<Failure>,
}

fn run_draw(
    population: &Population,
    metric: &MetricConfig,
    config: &BenchmarkConfig,
    seed: u64,
    draw: usize,
) -> Result<DrawOutcome> {
    let s = derive_seed(seed, &[tags::BENCHMARK_DRAW, draw as u64]);
    let data = sample_evaluation_dataset(population, config.sample_size, s)?;
    let z = standard_estimates(&data, metric)?;
    let vm = estimate_variance_model(&data, metric, config.sr.variance_replicates, s)?;
    let mut failures = Vec::new();
    let mut fail = |method: &str, e: Error| {
        failures.push(Failure {
            draw,
            method: method.to_string(),
            message: e.to_string(),
        })
    };

    let needs_sr = config.estimators.contains(&EstimatorKind::Sr) || config.ci_methods.contains(&CiMethod::Rblpr);
    let sr = if needs_sr {
        match fit_structured(&data, &z, &vm, &config.features, metric, &config.sr, s) {
            Ok(r) => Some(r),
            Err(e) => {
                fail("sr", e);
                None
            }
        }
    } else {
        None
    };
    let eb = empirical_bayes(&z, &vm);

    let mut estimates = Vec::new();
    for &kind in &config.estimators {
        let r: Result<EstimateSet> = match kind {
            EstimatorKind::Standard => Ok(z.clone()),
            EstimatorKind::Sr => match &sr {
                Some(r) => Ok(r.estimates.clone()),
                None => continue,
            },
            EstimatorKind::Js => james_stein(&z, vm.sigma2, config.js_multiplier),
            EstimatorKind::Eb => match &eb {
                Ok(f) => Ok(crate::shrinkage::eb_estimates(f, &z)),
                Err(e) => Err(Error::Estimation(e.to_string())),
            },
            EstimatorKind::Lpr | EstimatorKind::Truth => unreachable!("rejected by validate"),
        };
        match r {
            Ok(e) => estimates.push((kind, e.values)),
            Err(e) => fail(kind.name(), e),
        }
    }

    let reference = config
        .levels
        .iter()
        .map(|&l| pooled_normal_set(&z.values, &vm, l))
        .collect::<Result<Vec<_>>>()?;
    let mut intervals = Vec::new();
    for &method in &config.ci_methods {
        let r: Result<Vec<IntervalSet>> = match method {
            CiMethod::PooledNormal => Ok(reference.clone()),
            CiMethod::NaiveNormal => config
                .levels
                .iter()
                .map(|&l| naive_normal_set(&z.values, &vm, l))
                .collect(),
            CiMethod::Percentile => percentile_samples(&data, metric, config.percentile_replicates, s)
                .and_then(|samples| config.levels.iter().map(|&l| percentile_set(&samples, l)).collect()),
            CiMethod::Rblpr => match &sr {
                Some(r) => rblpr_ci_levels(
                    &r.features.values,
                    &z.values,
                    &vm.weights(),
                    r.fit.lambda,
                    config.sr.lambda_ridge,
                    config.sr.rblpr_replicates,
                    &config.levels,
                    derive_seed(s, &[tags::RBLPR]),
                    &config.sr.lasso,
                ),
                None => continue,
            },
            CiMethod::EbCredible => match &eb {
                Ok(f) => config.levels.iter().map(|&l| eb_credible_set(f, l)).collect(),
                Err(e) => Err(Error::Estimation(e.to_string())),
            },
        };
        match r {
            Ok(sets) => intervals.extend(sets),
            Err(e) => fail(method.name(), e),
        }
    }
    Ok(DrawOutcome {
        sizes: data.sizes(),
        estimates,
        intervals,
        reference,
        lambda: sr.map(|r| r.fit.lambda),
        failures,
    })
}

#[derive(Clone, Copy, Default)]
struct Acc {
    abs: f64,
    sq: f64,
    n: usize,
}

/// Runs `config.draws` independent sample-and-estimate rounds and
/// aggregates errors by group-size bucket. Groups absent from a draw and
/// groups without a defined truth are not scored.
pub fn run_benchmark(
    population: &Population,
    truth: &EstimateSet,
    metric: &MetricConfig,
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<BenchmarkReport> {
    config.validate()?;
    let outcomes: Vec<DrawOutcome> = (0..config.draws)
        .into_par_iter()
        .map(|d| run_draw(population, metric, config, seed, d))
        .collect::<Result<_>>()?;

    let buckets_of = |n: usize| -> Vec<usize> {
        if n == 0 {
            vec![]
        } else if n <= config.small_threshold {
            vec![0, 1]
        } else {
            vec![0, 2]
        }
    };

    let mut total = vec![[Acc::default(); 3]; config.estimators.len()];
    let mut draw_errors = Vec::new();
    let nl = config.levels.len();
    let nm = config.ci_methods.len();
    // per method, level, bucket: (covered, count, ratio sum, ratio count)
    let mut cov = vec![vec![[(0usize, 0usize, 0.0f64, 0usize); 3]; nl]; nm];
    let mut failures = Vec::new();
    let mut lambdas = Vec::new();

    for (d, out) in outcomes.iter().enumerate() {
        for (e, &kind) in config.estimators.iter().enumerate() {
            let mut acc = [Acc::default(); 3];
            if let Some((_, values)) = out.estimates.iter().find(|(k, _)| *k == kind) {
                for a in 0..values.len() {
                    if let (Some(v), Some(t)) = (values[a], truth.values[a]) {
                        for b in buckets_of(out.sizes[a]) {
                            acc[b].abs += (v - t).abs();
                            acc[b].sq += (v - t) * (v - t);
                            acc[b].n += 1;
                        }
                    }
                }
            }
            for b in 0..3 {
                draw_errors.push(error_row(kind, b, Some(d), acc[b]));
                total[e][b].abs += acc[b].abs;
                total[e][b].sq += acc[b].sq;
                total[e][b].n += acc[b].n;
            }
        }
        for set in &out.intervals {
            let m = config.ci_methods.iter().position(|&x| x == set.method).unwrap();
            let l = config.levels.iter().position(|&x| x == set.level).unwrap();
            let reference = &out.reference[l];
            for a in 0..set.intervals.len() {
                let (Some(iv), Some(t)) = (set.intervals[a], truth.values[a]) else {
                    continue;
                };
                for b in buckets_of(out.sizes[a]) {
                    let c = &mut cov[m][l][b];
                    c.0 += iv.contains(t) as usize;
                    c.1 += 1;
                    if let Some(r) = reference.intervals[a] {
                        if r.width() > 0.0 {
                            c.2 += iv.width() / r.width();
                            c.3 += 1;
                        }
                    }
                }
            }
        }
        failures.extend(out.failures.iter().cloned());
        lambdas.push(out.lambda);
    }

    let errors = config
        .estimators
        .iter()
        .enumerate()
        .flat_map(|(e, &kind)| (0..3).map(move |b| (e, kind, b)))
        .map(|(e, kind, b)| error_row(kind, b, None, total[e][b]))
        .collect();
    let mut coverage = Vec::new();
    let mut width = Vec::new();
    for (m, &method) in config.ci_methods.iter().enumerate() {
        for (l, &level) in config.levels.iter().enumerate() {
            for (b, bucket) in BUCKETS.iter().enumerate() {
                let c = cov[m][l][b];
                coverage.push(CoverageRow {
                    method,
                    level,
                    bucket: bucket.to_string(),
                    coverage: (c.1 > 0).then(|| c.0 as f64 / c.1 as f64),
                    count: c.1,
                });
                width.push(WidthRow {
                    method,
                    level,
                    bucket: bucket.to_string(),
                    mean_relative_width: (c.3 > 0).then(|| c.2 / c.3 as f64),
                    count: c.3,
                });
            }
        }
    }
    Ok(BenchmarkReport {
        model: population.model.clone(),
        metric: metric.name().to_string(),
        draws: config.draws,
        sample_size: config.sample_size,
        population_size: population.len(),
        seed,
        small_threshold: config.small_threshold,
        errors,
        draw_errors,
        coverage,
        width,
        selected_lambdas: lambdas,
        failures,
    })
}

fn error_row(estimator: EstimatorKind, bucket: usize, draw: Option<usize>, acc: Acc) -> ErrorRow {
    ErrorRow {
        estimator,
        bucket: BUCKETS[bucket].to_string(),
        draw,
        mae: (acc.n > 0).then(|| acc.abs / acc.n as f64),
        mse: (acc.n > 0).then(|| acc.sq / acc.n as f64),
        count: acc.n,
    }
}
