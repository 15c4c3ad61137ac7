//! Synthetic base populations, ground truth and stratified sampling.

use std::sync::Arc;

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Emission, SynthModel};
use crate::data::{AttributeSchema, EvalRecord, GroupKey, GroupedDataset};
use crate::error::{Error, Result};
use crate::metrics::{standard_estimate, EstimateSet, EstimatorKind, MetricConfig, MetricKind};
use crate::numerics::rng::{derive_seed, stream, tags};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalAttribute {
    pub name: String,
    pub labels: Vec<String>,
    pub shares: Vec<f64>,
    /// Additive effect of each label on the covariate's group mean.
    #[serde(default)]
    pub covariate_effects: Vec<f64>,
}

/// Integer covariate `1 + Binomial(trials, p_a)` whose group means are
/// attribute effects plus a fixed per-group jitter, rescaled to the given
/// population mean and spread.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateProfile {
    pub name: String,
    pub trials: u64,
    pub mean: f64,
    /// Size-weighted standard deviation of the group means.
    pub spread: f64,
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseProfile {
    pub attributes: Vec<MarginalAttribute>,
    /// Explicit group shares in schema order; defaults to the product of
    /// the marginals.
    #[serde(default)]
    pub group_shares: Option<Vec<f64>>,
    pub covariate: CovariateProfile,
}

fn marginal(name: &str, labels: &[&str], shares: &[f64], effects: &[f64]) -> MarginalAttribute {
    MarginalAttribute {
        name: name.into(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
        shares: shares.to_vec(),
        covariate_effects: effects.to_vec(),
    }
}

impl Default for BaseProfile {
    /// 4 x 4 x 2 hospital-like profile with a few large groups and many
    /// small ones. The covariate spread is chosen so that the explanatory
    /// model's predictions have a standard deviation near 0.44.
    fn default() -> Self {
        BaseProfile {
            attributes: vec![
                marginal(
                    "race",
                    &["African American", "Hispanic", "white", "other"],
                    &[0.19, 0.01, 0.75, 0.05],
                    &[0.3, -0.2, 0.0, -0.4],
                ),
                marginal(
                    "age",
                    &["20-40", "40-60", "60-80", "80-100"],
                    &[0.05, 0.27, 0.48, 0.20],
                    &[-1.5, -0.5, 0.5, 1.0],
                ),
                marginal("gender", &["male", "female"], &[0.47, 0.53], &[0.1, -0.1]),
            ],
            group_shares: None,
            covariate: CovariateProfile {
                name: "number_diagnoses".into(),
                trials: 15,
                mean: 7.5,
                spread: 1.912,
                jitter: 0.3,
            },
        }
    }
}

impl BaseProfile {
    pub fn schema(&self) -> Result<AttributeSchema> {
        AttributeSchema::new(self.attributes.iter().map(|a| (a.name.clone(), a.labels.clone())))
    }

    /// Group shares in schema order, normalized to sum to one.
    pub fn shares(&self, schema: &AttributeSchema) -> Result<Vec<f64>> {
        let raw: Vec<f64> = match &self.group_shares {
            Some(s) => {
                if s.len() != schema.num_groups() {
                    return Err(Error::Config(format!(
                        "{} group shares given for {} groups",
                        s.len(),
                        schema.num_groups()
                    )));
                }
                s.clone()
            }
            None => {
                for a in &self.attributes {
                    if a.shares.len() != a.labels.len() {
                        return Err(Error::Config(format!(
                            "attribute `{}`: shares and labels differ",
                            a.name
                        )));
                    }
                }
                schema
                    .groups()
                    .iter()
                    .map(|k| {
                        k.labels()
                            .iter()
                            .zip(&self.attributes)
                            .map(|(l, a)| a.shares[a.labels.iter().position(|x| **x == **l).unwrap()])
                            .product()
                    })
                    .collect()
            }
        };
        if raw.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config("group shares must be finite and >= 0".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("group shares sum to zero".into()));
        }
        Ok(raw.iter().map(|s| s / total).collect())
    }

    /// Designed covariate mean per group; independent of any seed.
    pub fn covariate_means(&self, schema: &AttributeSchema, shares: &[f64]) -> Vec<f64> {
        let c = &self.covariate;
        let raw: Vec<f64> = schema
            .groups()
            .iter()
            .enumerate()
            .map(|(g, k)| {
                let effect: f64 = k
                    .labels()
                    .iter()
                    .zip(&self.attributes)
                    .map(|(l, a)| {
                        let i = a.labels.iter().position(|x| **x == **l).unwrap();
                        a.covariate_effects.get(i).copied().unwrap_or(0.0)
                    })
                    .sum();
                let u = (derive_seed(0x6a09_e667_f3bc_c908, &[g as u64]) >> 11) as f64 / (1u64 << 53) as f64;
                effect + c.jitter * (2.0 * u - 1.0)
            })
            .collect();
        let m: f64 = raw.iter().zip(shares).map(|(r, s)| r * s).sum();
        let v: f64 = raw.iter().zip(shares).map(|(r, s)| s * (r - m) * (r - m)).sum();
        let sd = v.sqrt();
        raw.iter()
            .map(|r| {
                if sd > 0.0 {
                    c.mean + c.spread * (r - m) / sd
                } else {
                    c.mean
                }
            })
            .collect()
    }
}

/// Largest-remainder apportionment of `total` by `shares`; ties go to the
/// lower index.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || sum <= 0.0 {
        return vec![0; shares.len()];
    }
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Records stored column-wise, contiguous by group in schema order.
#[derive(Clone, Debug)]
pub struct Population {
    schema: AttributeSchema,
    starts: Vec<usize>,
    covariate_name: Arc<str>,
    covariate: Vec<f64>,
    y_hat: Vec<f64>,
    outcome: Vec<bool>,
    /// Model mean per group.
    pub model_means: Vec<f64>,
    pub model: String,
    labels: [Arc<str>; 2],
}

impl Population {
    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.y_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_hat.is_empty()
    }

    pub fn num_groups(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.starts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn group_range(&self, g: usize) -> std::ops::Range<usize> {
        self.starts[g]..self.starts[g + 1]
    }

    pub fn covariate_name(&self) -> &str {
        &self.covariate_name
    }

    pub fn y_hat(&self) -> &[f64] {
        &self.y_hat
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.starts.partition_point(|&s| s <= i) - 1
    }

    pub fn record(&self, i: usize) -> EvalRecord {
        let key = self.schema.groups()[self.group_of(i)].clone();
        self.make_record(key, i)
    }

    fn make_record(&self, key: GroupKey, i: usize) -> EvalRecord {
        EvalRecord::new(key)
            .with_outcome(self.labels[self.outcome[i] as usize].clone())
            .with_value(self.y_hat[i])
            .with_score(self.y_hat[i])
            .with_covariate(self.covariate_name.clone(), self.covariate[i])
    }

    pub fn group_records(&self, g: usize) -> Vec<EvalRecord> {
        let key = &self.schema.groups()[g];
        self.group_range(g).map(|i| self.make_record(key.clone(), i)).collect()
    }

    pub fn to_dataset(&self) -> Result<GroupedDataset> {
        GroupedDataset::from_groups(
            self.schema.clone(),
            (0..self.num_groups()).map(|g| self.group_records(g)).collect(),
        )
    }

    /// Mean and population standard deviation of `y_hat`.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.len() as f64;
        let m = self.y_hat.iter().sum::<f64>() / n;
        let v = self.y_hat.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n;
        (m, v.sqrt())
    }
}

fn feature_value(
    name: &str,
    key: &GroupKey,
    schema: &AttributeSchema,
    covariate: &str,
    covariate_mean: f64,
) -> Result<f64> {
    if let Some(rest) = name.strip_prefix("attr:") {
        let (attr, label) = rest
            .split_once('=')
            .ok_or_else(|| Error::Spec(format!("malformed feature `{name}`")))?;
        let i = schema
            .attribute_index(attr)
            .ok_or_else(|| Error::Spec(format!("unknown attribute in `{name}`")))?;
        if !schema.attributes()[i].domain.iter().any(|l| &**l == label) {
            return Err(Error::Spec(format!("unknown label in `{name}`")));
        }
        return Ok((&*key.labels()[i] == label) as u8 as f64);
    }
    if let Some(rest) = name.strip_prefix("expl:") {
        if rest == covariate {
            return Ok(covariate_mean);
        }
        return Err(Error::Spec(format!("unknown covariate in `{name}`")));
    }
    if let Some(rest) = name.strip_prefix("grp:") {
        return Ok((key.to_string() == rest) as u8 as f64);
    }
    Err(Error::Spec(format!("feature `{name}` cannot drive a synthetic model")))
}

/// Draws a population of `size` records. Group sizes follow the profile's
/// shares; each record gets the covariate, a prediction `y_hat` from the
/// model and a binary outcome `Bernoulli(0.08 + 0.3 * clamp(y_hat, 0, 1))`.
pub fn generate_population(profile: &BaseProfile, model: &SynthModel, size: usize, seed: u64) -> Result<Population> {
    if size == 0 {
        return Err(Error::Parameter("population size must be positive".into()));
    }
    model.validate()?;
    let schema = profile.schema()?;
    let shares = profile.shares(&schema)?;
    let design = profile.covariate_means(&schema, &shares);
    let sizes = largest_remainder(&shares, size);
    let cov = &profile.covariate;
    let trials = cov.trials;

    struct Block {
        x: Vec<f64>,
        y: Vec<f64>,
        o: Vec<bool>,
        mu: f64,
    }
    let blocks: Vec<Block> = (0..schema.num_groups())
        .into_par_iter()
        .map(|g| -> Result<Block> {
            let key = &schema.groups()[g];
            let mut rng = stream(seed, &[tags::POPULATION, g as u64]);
            let p = ((design[g] - 1.0) / trials as f64).clamp(0.0, 1.0);
            let binom = Binomial::new(trials, p).map_err(|e| Error::Spec(e.to_string()))?;
            let x: Vec<f64> = (0..sizes[g]).map(|_| 1.0 + binom.sample(&mut rng) as f64).collect();
            let xbar = if x.is_empty() {
                design[g]
            } else {
                x.iter().sum::<f64>() / x.len() as f64
            };
            let mu = model.mean(|f| feature_value(f, key, &schema, &cov.name, xbar))?;
            let y: Vec<f64> = match model.emission {
                Emission::Bernoulli => {
                    if !(0.0..=1.0).contains(&mu) {
                        return Err(Error::Spec(format!(
                            "model `{}` gives mean {mu} outside [0, 1] for group {key}",
                            model.name
                        )));
                    }
                    (0..sizes[g])
                        .map(|_| if rng.random::<f64>() < mu { 1.0 } else { 0.0 })
                        .collect()
                }
                Emission::Normal { variance } => {
                    let d = Normal::new(mu, variance.sqrt()).map_err(|e| Error::Spec(e.to_string()))?;
                    (0..sizes[g]).map(|_| d.sample(&mut rng)).collect()
                }
            };
            let o = y
                .iter()
                .map(|v| rng.random::<f64>() < 0.08 + 0.3 * v.clamp(0.0, 1.0))
                .collect();
            Ok(Block { x, y, o, mu })
        })
        .collect::<Result<_>>()?;

    let mut starts = vec![0];
    let mut covariate = Vec::with_capacity(size);
    let mut y_hat = Vec::with_capacity(size);
    let mut outcome = Vec::with_capacity(size);
    let mut model_means = Vec::with_capacity(blocks.len());
    for b in blocks {
        covariate.extend(b.x);
        y_hat.extend(b.y);
        outcome.extend(b.o);
        model_means.push(b.mu);
        starts.push(y_hat.len());
    }
    Ok(Population {
        schema,
        starts,
        covariate_name: Arc::from(cov.name.as_str()),
        covariate,
        y_hat,
        outcome,
        model_means,
        model: model.name.clone(),
        labels: [Arc::from("0"), Arc::from("1")],
    })
}

/// Per-group metric on the whole population.
pub fn compute_ground_truth(population: &Population, metric: &MetricConfig) -> Result<EstimateSet> {
    let values = (0..population.num_groups())
        .into_par_iter()
        .map(|g| {
            let r = population.group_range(g);
            if metric.kind == MetricKind::Mean {
                Ok((!r.is_empty()).then(|| population.y_hat[r.clone()].iter().sum::<f64>() / r.len() as f64))
            } else {
                standard_estimate(&population.group_records(g), metric)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateSet {
        method: EstimatorKind::Truth,
        metric: metric.name().to_string(),
        keys: population.schema.groups().to_vec(),
        values,
        sizes: population.sizes(),
    })
}

/// Proportional per-group sample sizes for a sample of `size`.
pub fn allocate(group_sizes: &[usize], size: usize) -> Result<Vec<usize>> {
    let total: usize = group_sizes.iter().sum();
    if size > total {
        return Err(Error::Sampling(format!(
            "sample size {size} exceeds population size {total}"
        )));
    }
    let shares: Vec<f64> = group_sizes.iter().map(|&n| n as f64).collect();
    let alloc = largest_remainder(&shares, size);
    if let Some(g) = (0..alloc.len()).find(|&g| alloc[g] > group_sizes[g]) {
        return Err(Error::Sampling(format!(
            "group {g} needs {} records but has {}",
            alloc[g], group_sizes[g]
        )));
    }
    Ok(alloc)
}

/// Stratified sample without replacement, proportional to group sizes.
pub fn sample_evaluation_dataset(population: &Population, size: usize, seed: u64) -> Result<GroupedDataset> {
    let alloc = allocate(&population.sizes(), size)?;
    let groups: Vec<Vec<EvalRecord>> = (0..population.num_groups())
        .into_par_iter()
        .map(|g| {
            let r = population.group_range(g);
            let key = &population.schema.groups()[g];
            let mut rng = stream(seed, &[tags::SAMPLE, g as u64]);
            let mut idx = index::sample(&mut rng, r.len(), alloc[g]).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|i| population.make_record(key.clone(), r.start + i))
                .collect()
        })
        .collect();
    GroupedDataset::from_groups(population.schema.clone(), groups)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[1.0, 1.0], 10), vec![5, 5]);
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.5, 0.3, 0.2], 7), vec![4, 2, 1]);
        let a = largest_remainder(&[0.19, 0.01, 0.75, 0.05], 1234);
        assert_eq!(a.iter().sum::<usize>(), 1234);
    }

    #[test]
    fn default_profile_has_32_groups() {
        let p = BaseProfile::default();
        let s = p.schema().unwrap();
        assert_eq!(s.num_groups(), 32);
        let shares = p.shares(&s).unwrap();
        assert!((shares.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m = p.covariate_means(&s, &shares);
        let mean: f64 = m.iter().zip(&shares).map(|(m, s)| m * s).sum();
        let sd = m
            .iter()
            .zip(&shares)
            .map(|(x, s)| s * (x - mean).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((mean - 7.5).abs() < 1e-9);
        assert!((sd - 1.912).abs() < 1e-9);
        assert!(m.iter().all(|&x| x > 1.0 && x < 16.0));
    }

    #[test]
    fn model_age_population() {
        let m = SynthModel::builtin("model_age").unwrap();
        let pop = generate_population(&BaseProfile::default(), &m, 20_000, 4).unwrap();
        assert_eq!(pop.len(), 20_000);
        for (g, k) in pop.schema().groups().iter().enumerate() {
            let expect = if &*k.labels()[1] == "40-60" { 0.05 } else { 0.35 };
            assert!((pop.model_means[g] - expect).abs() < 1e-15);
        }
        let i = pop.group_range(5).start;
        assert_eq!(pop.group_of(i), 5);
        assert_eq!(pop.record(i).attrs, pop.schema().groups()[5]);
    }

    #[test]
    fn population_is_deterministic() {
        let m = SynthModel::builtin("model_expl").unwrap();
        let a = generate_population(&BaseProfile::default(), &m, 5_000, 9).unwrap();
        let b = generate_population(&BaseProfile::default(), &m, 5_000, 9).unwrap();
        assert_eq!(a.y_hat(), b.y_hat());
        let c = generate_population(&BaseProfile::default(), &m, 5_000, 10).unwrap();
        assert_ne!(a.y_hat(), c.y_hat());
    }

    #[test]
    fn bernoulli_mean_out_of_range_is_spec_error() {
        let mut m = SynthModel::builtin("model_age").unwrap();
        m.intercept = 1.2;
        let r = generate_population(&BaseProfile::default(), &m, 1000, 1);
        assert!(matches!(r, Err(Error::Spec(_))));
        assert!(generate_population(&BaseProfile::default(), &m, 0, 1).is_err());
    }

    #[test]
    fn full_sample_is_identity() {
        let m = SynthModel::builtin("model_age").unwrap();
        let pop = generate_population(&BaseProfile::default(), &m, 3_000, 2).unwrap();
        let s = sample_evaluation_dataset(&pop, 3_000, 5).unwrap();
        assert_eq!(s.sizes(), pop.sizes());
        let truth = compute_ground_truth(&pop, &MetricConfig::mean()).unwrap();
        let z = crate::metrics::standard_estimates(&s, &MetricConfig::mean()).unwrap();
        assert_eq!(truth.values, z.values);
        assert!(matches!(
            sample_evaluation_dataset(&pop, 3_001, 5),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn allocation_is_proportional() {
        assert_eq!(allocate(&[50, 50], 10).unwrap(), vec![5, 5]);
        assert_eq!(allocate(&[10, 30], 40).unwrap(), vec![10, 30]);
    }
}
