//! Performance metrics and the standard per-group estimator.
//!
//! A metric maps a set of records to an optional value; `None` means the
//! metric is undefined on that set (for example FNR on a group without
//! positives). Records are first reduced to compact [`Observation`]s so that
//! bootstrap resampling can re-evaluate a metric cheaply.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{EvalRecord, GroupKey, GroupedDataset, Prediction};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Sel,
    Acc,
    Fnr,
    Fpr,
    Ppv,
    Auc,
    Mean,
    Wer,
}

impl MetricKind {
    pub const ALL: [MetricKind; 8] = [
        MetricKind::Sel,
        MetricKind::Acc,
        MetricKind::Fnr,
        MetricKind::Fpr,
        MetricKind::Ppv,
        MetricKind::Auc,
        MetricKind::Mean,
        MetricKind::Wer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Sel => "sel",
            MetricKind::Acc => "acc",
            MetricKind::Fnr => "fnr",
            MetricKind::Fpr => "fpr",
            MetricKind::Ppv => "ppv",
            MetricKind::Auc => "auc",
            MetricKind::Mean => "mean",
            MetricKind::Wer => "wer",
        }
    }

    /// Confusion-matrix metrics are computed from the decision `score >= r`.
    pub fn needs_threshold(self) -> bool {
        matches!(
            self,
            MetricKind::Sel | MetricKind::Acc | MetricKind::Fnr | MetricKind::Fpr | MetricKind::Ppv
        )
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricConfig {
    pub kind: MetricKind,
    /// Decision threshold `r`; a record is selected iff `score >= r`.
    pub threshold: Option<f64>,
    pub positive_label: String,
    /// Give tied (negative, positive) pairs half credit in AUC. Off by
    /// default: a tie is not a correctly ordered pair.
    pub auc_tie_half: bool,
}

impl MetricConfig {
    pub fn new(kind: MetricKind, threshold: Option<f64>) -> Result<Self> {
        match (kind.needs_threshold(), threshold) {
            (true, None) => Err(Error::Config(format!("metric `{kind}` needs a threshold"))),
            (false, Some(_)) => Err(Error::Config(format!("metric `{kind}` takes no threshold"))),
            (_, Some(r)) if !r.is_finite() => Err(Error::Config(format!("threshold {r} is not finite"))),
            _ => Ok(MetricConfig {
                kind,
                threshold,
                positive_label: "1".into(),
                auc_tie_half: false,
            }),
        }
    }

    pub fn mean() -> Self {
        MetricConfig::new(MetricKind::Mean, None).unwrap()
    }

    pub fn with_positive_label(mut self, label: impl Into<String>) -> Self {
        self.positive_label = label.into();
        self
    }

    pub fn with_auc_tie_half(mut self, on: bool) -> Self {
        self.auc_tie_half = on;
        self
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn is_positive(&self, label: &str) -> bool {
        if label == self.positive_label {
            return true;
        }
        match (label.trim().parse::<f64>(), self.positive_label.trim().parse::<f64>()) {
            (Ok(a), Ok(b)) => a == b,
            _ => false,
        }
    }

    fn score_of(&self, i: usize, r: &EvalRecord) -> Result<f64> {
        r.score()
            .ok_or_else(|| Error::Data(format!("record {i} lacks a numeric score required by `{}`", self.kind)))
    }

    fn outcome_of(&self, i: usize, r: &EvalRecord) -> Result<bool> {
        r.outcome
            .as_deref()
            .map(|y| self.is_positive(y))
            .ok_or_else(|| Error::Data(format!("record {i} lacks an outcome required by `{}`", self.kind)))
    }

    /// Reduces records to the per-record quantities this metric needs.
    pub fn observations(&self, records: &[EvalRecord]) -> Result<Vec<Observation>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| self.observation(i, r))
            .collect()
    }

    fn observation(&self, i: usize, r: &EvalRecord) -> Result<Observation> {
        Ok(match self.kind {
            MetricKind::Sel => {
                let s = self.score_of(i, r)?;
                Observation {
                    value: self.decide(s),
                    actual: false,
                }
            }
            MetricKind::Acc | MetricKind::Fnr | MetricKind::Fpr | MetricKind::Ppv => {
                let s = self.score_of(i, r)?;
                Observation {
                    value: self.decide(s),
                    actual: self.outcome_of(i, r)?,
                }
            }
            MetricKind::Auc => Observation {
                value: self.score_of(i, r)?,
                actual: self.outcome_of(i, r)?,
            },
            MetricKind::Mean => {
                let v = r
                    .record_value
                    .or_else(|| r.score())
                    .ok_or_else(|| Error::Data(format!("record {i} has neither a record value nor a score")))?;
                Observation {
                    value: v,
                    actual: false,
                }
            }
            MetricKind::Wer => {
                let v = match (r.record_value, &r.prediction, &r.outcome) {
                    (Some(v), _, _) => v,
                    (None, Some(Prediction::Text(h)), Some(reference)) => {
                        let hyp: Vec<&str> = h.split_whitespace().collect();
                        let rf: Vec<&str> = reference.split_whitespace().collect();
                        wer(&hyp, &rf).map_err(|e| Error::Data(format!("record {i}: {e}")))?
                    }
                    _ => {
                        return Err(Error::Data(format!(
                            "record {i} needs a record value or a transcript pair for `wer`"
                        )))
                    }
                };
                Observation {
                    value: v,
                    actual: false,
                }
            }
        })
    }

    fn decide(&self, score: f64) -> f64 {
        let r = self.threshold.expect("validated at construction");
        if score >= r {
            1.0
        } else {
            0.0
        }
    }

    /// Evaluates the metric on observations.
    pub fn evaluate(&self, obs: &[Observation]) -> Option<f64> {
        self.evaluate_iter(obs.iter())
    }

    /// Evaluates the metric on the observations selected by `indices`
    /// (with repetition, as in a bootstrap resample).
    pub fn evaluate_indexed(&self, obs: &[Observation], indices: &[usize]) -> Option<f64> {
        self.evaluate_iter(indices.iter().map(|&i| &obs[i]))
    }

    fn evaluate_iter<'a>(&self, it: impl Iterator<Item = &'a Observation>) -> Option<f64> {
        match self.kind {
            MetricKind::Auc => {
                let mut neg = Vec::new();
                let mut pos = Vec::new();
                for o in it {
                    if o.actual {
                        pos.push(o.value);
                    } else {
                        neg.push(o.value);
                    }
                }
                auc_from_scores(&neg, &pos, self.auc_tie_half)
            }
            kind => {
                // (numerator, denominator) counts of the conditional rate
                let mut num = 0.0;
                let mut den = 0.0;
                for o in it {
                    let selected = o.value > 0.5;
                    match kind {
                        MetricKind::Sel => {
                            den += 1.0;
                            if selected {
                                num += 1.0;
                            }
                        }
                        MetricKind::Acc => {
                            den += 1.0;
                            if selected == o.actual {
                                num += 1.0;
                            }
                        }
                        MetricKind::Fnr => {
                            if o.actual {
                                den += 1.0;
                                if !selected {
                                    num += 1.0;
                                }
                            }
                        }
                        MetricKind::Fpr => {
                            if !o.actual {
                                den += 1.0;
                                if selected {
                                    num += 1.0;
                                }
                            }
                        }
                        MetricKind::Ppv => {
                            if selected {
                                den += 1.0;
                                if o.actual {
                                    num += 1.0;
                                }
                            }
                        }
                        MetricKind::Mean | MetricKind::Wer => {
                            den += 1.0;
                            num += o.value;
                        }
                        MetricKind::Auc => unreachable!(),
                    }
                }
                (den > 0.0).then(|| num / den)
            }
        }
    }
}

/// The per-record quantity a metric consumes: the decision (0/1) for
/// confusion-matrix metrics, the score for AUC, the value for mean and WER.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub value: f64,
    pub actual: bool,
}

/// Metric value on a group's empirical distribution.
pub fn standard_estimate(group: &[EvalRecord], metric: &MetricConfig) -> Result<Option<f64>> {
    Ok(metric.evaluate(&metric.observations(group)?))
}

/// Fraction of (negative, positive) pairs with a strictly smaller negative
/// score; `None` when either class is empty.
pub fn auc(records: &[EvalRecord], positive_label: &str) -> Result<Option<f64>> {
    let m = MetricConfig::new(MetricKind::Auc, None)?.with_positive_label(positive_label);
    standard_estimate(records, &m)
}

/// AUC from class-separated scores.
pub fn auc_from_scores(negatives: &[f64], positives: &[f64], tie_half: bool) -> Option<f64> {
    if negatives.is_empty() || positives.is_empty() {
        return None;
    }
    let mut neg = negatives.to_vec();
    neg.sort_by(|a, b| a.total_cmp(b));
    let mut ordered = 0.0f64;
    let mut ties = 0.0f64;
    for &p in positives {
        let below = neg.partition_point(|&x| x < p);
        ordered += below as f64;
        if tie_half {
            let upto = neg.partition_point(|&x| x <= p);
            ties += (upto - below) as f64;
        }
    }
    let pairs = negatives.len() as f64 * positives.len() as f64;
    Some((ordered + 0.5 * ties) / pairs)
}

/// Word error rate: minimal word-level edit distance (unit costs) divided by
/// the reference length.
pub fn wer<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("word error rate of an empty reference".into()));
    }
    let m = hypothesis.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for j in 1..=m {
            let sub = prev[j - 1] + usize::from(hypothesis[j - 1].as_ref() != r.as_ref());
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m] as f64 / reference.len() as f64)
}

/// Arithmetic mean of record values (scores when a record has no value).
pub fn mean_value(group: &[EvalRecord]) -> Result<Option<f64>> {
    standard_estimate(group, &MetricConfig::mean())
}

/// Threshold `r` such that the fraction of scores with `score >= r` is as
/// close to `fraction` as possible without exceeding it when ties straddle
/// the cut.
pub fn calibrate_threshold(scores: &[f64], fraction: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Parameter("cannot calibrate a threshold on no scores".into()));
    }
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Parameter(format!(
            "selection fraction {fraction} outside [0, 1]"
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite score".into()));
    }
    let mut desc = scores.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let k = (fraction * desc.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(next_up(desc[0]));
    }
    let candidate = desc[k - 1];
    let selected = desc.partition_point(|&s| s >= candidate);
    if selected <= k {
        return Ok(candidate);
    }
    // ties would select too many: move the cut to the next distinct larger score
    match desc.iter().rev().find(|&&s| s > candidate) {
        Some(&s) => Ok(s),
        None => Ok(next_up(desc[0])),
    }
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    let bits = x.to_bits();
    if x > 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Which estimator produced an [`EstimateSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Standard,
    Sr,
    Js,
    Eb,
    Lpr,
    Truth,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Standard => "standard",
            EstimatorKind::Sr => "sr",
            EstimatorKind::Js => "js",
            EstimatorKind::Eb => "eb",
            EstimatorKind::Lpr => "lpr",
            EstimatorKind::Truth => "truth",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => EstimatorKind::Standard,
            "sr" => EstimatorKind::Sr,
            "js" => EstimatorKind::Js,
            "eb" => EstimatorKind::Eb,
            "lpr" => EstimatorKind::Lpr,
            "truth" => EstimatorKind::Truth,
            _ => return Err(Error::Config(format!("unknown estimator `{s}`"))),
        })
    }
}

/// Per-group estimates in schema order, with group sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSet {
    pub method: EstimatorKind,
    pub metric: String,
    pub keys: Vec<GroupKey>,
    pub values: Vec<Option<f64>>,
    pub sizes: Vec<usize>,
}

impl EstimateSet {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn num_defined(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn with_method(&self, method: EstimatorKind, values: Vec<Option<f64>>) -> EstimateSet {
        EstimateSet {
            method,
            metric: self.metric.clone(),
            keys: self.keys.clone(),
            values,
            sizes: self.sizes.clone(),
        }
    }
}

/// Standard estimates `Z_a` for every group of a dataset.
pub fn standard_estimates(data: &GroupedDataset, metric: &MetricConfig) -> Result<EstimateSet> {
    let values = data
        .groups()
        .iter()
        .map(|g| standard_estimate(g, metric))
        .collect::<Result<Vec<_>>>()?;
    Ok(EstimateSet {
        method: EstimatorKind::Standard,
        metric: metric.name().to_string(),
        keys: data.keys().to_vec(),
        values,
        sizes: data.sizes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupKey;

    fn rec(y: &str, s: f64) -> EvalRecord {
        EvalRecord::new(GroupKey::new(["g"])).with_outcome(y).with_score(s)
    }

    fn conf(kind: MetricKind, r: f64) -> MetricConfig {
        MetricConfig::new(kind, Some(r)).unwrap()
    }

    #[test]
    fn threshold_presence_is_enforced() {
        assert!(MetricConfig::new(MetricKind::Sel, None).is_err());
        assert!(MetricConfig::new(MetricKind::Auc, Some(0.5)).is_err());
        assert!(MetricConfig::new(MetricKind::Mean, None).is_ok());
    }

    #[test]
    fn perfect_classifier_accuracy() {
        let g = vec![rec("1", 0.9), rec("0", 0.1), rec("1", 0.6), rec("0", 0.4)];
        assert_eq!(standard_estimate(&g, &conf(MetricKind::Acc, 0.5)).unwrap(), Some(1.0));
    }

    #[test]
    fn selection_rate_counts_closed_threshold() {
        let g = vec![rec("0", 0.1), rec("0", 0.3), rec("1", 0.9)];
        let v = standard_estimate(&g, &conf(MetricKind::Sel, 0.25)).unwrap().unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        // score equal to r is selected
        let g = vec![rec("0", 0.25)];
        assert_eq!(standard_estimate(&g, &conf(MetricKind::Sel, 0.25)).unwrap(), Some(1.0));
    }

    #[test]
    fn fnr_without_positives_is_undefined() {
        let g = vec![rec("0", 0.1), rec("0", 0.8)];
        assert_eq!(standard_estimate(&g, &conf(MetricKind::Fnr, 0.5)).unwrap(), None);
        assert_eq!(standard_estimate(&g, &conf(MetricKind::Fpr, 0.5)).unwrap(), Some(0.5));
    }

    #[test]
    fn ppv_undefined_without_selection() {
        let g = vec![rec("1", 0.1)];
        assert_eq!(standard_estimate(&g, &conf(MetricKind::Ppv, 0.5)).unwrap(), None);
    }

    #[test]
    fn missing_fields_are_data_errors() {
        let g = vec![EvalRecord::new(GroupKey::new(["g"])).with_score(0.3)];
        assert!(matches!(
            standard_estimate(&g, &conf(MetricKind::Fnr, 0.5)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[rec("0", 0.2), rec("1", 0.7)], "1").unwrap(), Some(1.0));
        assert_eq!(auc(&[rec("0", 0.5), rec("1", 0.5)], "1").unwrap(), Some(0.0));
        assert_eq!(auc(&[rec("1", 0.5)], "1").unwrap(), None);
        let half = MetricConfig::new(MetricKind::Auc, None)
            .unwrap()
            .with_auc_tie_half(true);
        assert_eq!(
            standard_estimate(&[rec("0", 0.5), rec("1", 0.5)], &half).unwrap(),
            Some(0.5)
        );
    }

    #[test]
    fn wer_examples() {
        let r = ["the", "cat", "sat", "down"];
        assert_eq!(wer(&r, &r).unwrap(), 0.0);
        assert_eq!(wer(&["the", "dog", "sat", "down"], &r).unwrap(), 0.25);
        assert_eq!(wer(&Vec::<&str>::new(), &r).unwrap(), 1.0);
        assert!(wer(&r, &Vec::<&str>::new()).is_err());
    }

    #[test]
    fn wer_metric_from_transcripts() {
        let g = vec![EvalRecord::new(GroupKey::new(["g"]))
            .with_outcome("a b c d")
            .with_text("a x c d")];
        let m = MetricConfig::new(MetricKind::Wer, None).unwrap();
        assert_eq!(standard_estimate(&g, &m).unwrap(), Some(0.25));
    }

    #[test]
    fn mean_examples() {
        let g: Vec<_> = [0.1, 0.3]
            .iter()
            .map(|&v| EvalRecord::new(GroupKey::new(["g"])).with_value(v))
            .collect();
        assert!((mean_value(&g).unwrap().unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(mean_value(&[]).unwrap(), None);
    }

    #[test]
    fn threshold_calibration() {
        let s: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let r = calibrate_threshold(&s, 0.2).unwrap();
        assert_eq!(s.iter().filter(|&&x| x >= r).count(), 2);
        // ties at the cut select fewer
        let s = [0.9, 0.5, 0.5, 0.5, 0.1];
        let r = calibrate_threshold(&s, 0.4).unwrap();
        assert_eq!(s.iter().filter(|&&x| x >= r).count(), 1);
        let r = calibrate_threshold(&s, 0.0).unwrap();
        assert_eq!(s.iter().filter(|&&x| x >= r).count(), 0);
    }
}
