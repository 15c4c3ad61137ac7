//! JSON run configuration and CSV ingestion.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{aggregate_to_units, stratify, AttributeSchema, EvalRecord, GroupKey, GroupedDataset};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::gof::GofLadder;
use crate::metrics::{EstimatorKind, MetricConfig, MetricKind};
use crate::regression::SrConfig;
use crate::shrinkage::JsMultiplier;
use crate::synth::{BaseProfile, BenchmarkConfig, ModelChoice};
use crate::variance::{CiMethod, DEFAULT_PERCENTILE_REPLICATES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeConfig {
    pub name: String,
    /// CSV column; defaults to `name`.
    #[serde(default)]
    pub column: Option<String>,
    pub labels: Vec<String>,
}

impl AttributeConfig {
    fn column(&self) -> &str {
        self.column.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnConfig {
    pub outcome: Option<String>,
    /// Numeric prediction score.
    pub score: Option<String>,
    /// Text prediction, e.g. a transcript.
    pub text: Option<String>,
    /// Precomputed per-record value.
    pub value: Option<String>,
    pub unit: Option<String>,
    pub covariates: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    pub kind: MetricKind,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub positive_label: Option<String>,
    #[serde(default)]
    pub auc_tie_half: bool,
}

impl MetricSpec {
    pub fn build(&self) -> Result<MetricConfig> {
        let mut m = MetricConfig::new(self.kind, self.threshold)?.with_auc_tie_half(self.auc_tie_half);
        if let Some(l) = &self.positive_label {
            m = m.with_positive_label(l.clone());
        }
        Ok(m)
    }
}

impl Default for MetricSpec {
    fn default() -> Self {
        MetricSpec {
            kind: MetricKind::Mean,
            threshold: None,
            positive_label: None,
            auc_tie_half: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntervalConfig {
    pub methods: Vec<CiMethod>,
    pub levels: Vec<f64>,
    pub percentile_replicates: usize,
}

impl Default for IntervalConfig {
    fn default() -> Self {
        IntervalConfig {
            methods: vec![CiMethod::PooledNormal],
            levels: vec![0.95],
            percentile_replicates: DEFAULT_PERCENTILE_REPLICATES,
        }
    }
}

/// A named preset or an explicit ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LadderChoice {
    Preset(String),
    Explicit(GofLadder),
}

impl LadderChoice {
    pub fn resolve(&self) -> Result<GofLadder> {
        match self {
            LadderChoice::Preset(p) => match p.as_str() {
                "sensitive" => Ok(GofLadder::sensitive()),
                "age_race" => Ok(GofLadder::age_race()),
                _ => Err(Error::Config(format!("unknown ladder preset `{p}`"))),
            },
            LadderChoice::Explicit(l) => Ok(l.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub model: ModelChoice,
    pub size: usize,
    #[serde(default)]
    pub profile: BaseProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub model: ModelChoice,
    #[serde(default = "default_population_size")]
    pub population_size: usize,
    #[serde(default)]
    pub profile: BaseProfile,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub run: BenchmarkConfig,
}

fn default_population_size() -> usize {
    100_000
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV, relative paths resolved against the config file.
    pub input: Option<PathBuf>,
    pub attributes: Vec<AttributeConfig>,
    pub columns: ColumnConfig,
    /// Collapse records to one per unit before evaluation.
    pub aggregate_units: bool,
    pub metrics: Vec<MetricSpec>,
    pub estimators: Vec<EstimatorKind>,
    pub intervals: IntervalConfig,
    pub features: FeatureSpec,
    pub sr: SrConfig,
    pub js_multiplier: JsMultiplier,
    pub gof: Option<LadderChoice>,
    pub benchmark: Option<BenchmarkSection>,
    pub synth: Option<SynthConfig>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Requested estimators; an empty list means standard, sr, js and eb.
    pub fn estimator_list(&self) -> Vec<EstimatorKind> {
        if self.estimators.is_empty() {
            vec![
                EstimatorKind::Standard,
                EstimatorKind::Sr,
                EstimatorKind::Js,
                EstimatorKind::Eb,
            ]
        } else {
            self.estimators.clone()
        }
    }

    pub fn metric_configs(&self) -> Result<Vec<MetricConfig>> {
        if self.metrics.is_empty() {
            return Err(Error::Config("at least one metric is required".into()));
        }
        self.metrics.iter().map(MetricSpec::build).collect()
    }

    pub fn schema(&self) -> Result<AttributeSchema> {
        if self.attributes.is_empty() {
            return Err(Error::Config("no attributes declared".into()));
        }
        AttributeSchema::new(self.attributes.iter().map(|a| (a.name.clone(), a.labels.clone())))
    }

    pub fn input_path(&self, base: &Path) -> Result<PathBuf> {
        let p = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Config("no input file configured".into()))?;
        Ok(if p.is_absolute() { p.clone() } else { base.join(p) })
    }

    /// Reads and stratifies the input CSV.
    pub fn load_dataset(&self, base: &Path) -> Result<GroupedDataset> {
        let schema = self.schema()?;
        let file = std::fs::File::open(self.input_path(base)?)?;
        let records = read_records(file, &self.attributes, &self.columns)?;
        let records = if self.aggregate_units {
            aggregate_to_units(&records)?
        } else {
            records
        };
        stratify(records, &schema)
    }
}

fn parse_num(s: &str, column: &str, row: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Data(format!("row {row}: column `{column}` has non-numeric value `{s}`")))
}

/// Parses CSV rows into records. Every configured column must be present in
/// the header.
pub fn read_records<R: std::io::Read>(
    reader: R,
    attributes: &[AttributeConfig],
    columns: &ColumnConfig,
) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: BTreeMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let find = |name: &str| {
        header
            .get(name)
            .copied()
            .ok_or_else(|| Error::ColumnNotFound(name.to_string()))
    };
    let attr_idx: Vec<usize> = attributes.iter().map(|a| find(a.column())).collect::<Result<_>>()?;
    let opt = |c: &Option<String>| c.as_deref().map(find).transpose();
    let outcome = opt(&columns.outcome)?;
    let score = opt(&columns.score)?;
    let text = opt(&columns.text)?;
    let value = opt(&columns.value)?;
    let unit = opt(&columns.unit)?;
    if score.is_some() && text.is_some() {
        return Err(Error::Config(
            "configure either a score or a text prediction column, not both".into(),
        ));
    }
    let covs: Vec<(String, usize)> = columns
        .covariates
        .iter()
        .map(|c| Ok((c.clone(), find(c)?)))
        .collect::<Result<_>>()?;

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let mut r = EvalRecord::new(GroupKey::new(attr_idx.iter().map(|&i| get(i).to_string())));
        if let Some(i) = outcome {
            r = r.with_outcome(get(i));
        }
        if let Some(i) = score {
            r = r.with_score(parse_num(get(i), columns.score.as_deref().unwrap(), row + 1)?);
        }
        if let Some(i) = text {
            r = r.with_text(get(i));
        }
        if let Some(i) = value {
            r = r.with_value(parse_num(get(i), columns.value.as_deref().unwrap(), row + 1)?);
        }
        if let Some(i) = unit {
            r = r.with_unit(get(i));
        }
        for (name, i) in &covs {
            r = r.with_covariate(name.as_str(), parse_num(get(*i), name, row + 1)?);
        }
        out.push(r);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs() -> Vec<AttributeConfig> {
        vec![AttributeConfig {
            name: "sex".into(),
            column: Some("gender".into()),
            labels: vec!["f".into(), "m".into()],
        }]
    }

    #[test]
    fn reads_declared_columns() {
        let csv = "gender,y,s,n\nf,1,0.7,3\nm,0,0.2,5\n";
        let cols = ColumnConfig {
            outcome: Some("y".into()),
            score: Some("s".into()),
            covariates: vec!["n".into()],
            ..Default::default()
        };
        let recs = read_records(csv.as_bytes(), &attrs(), &cols).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].score(), Some(0.2));
        assert_eq!(recs[1].covariates.get("n"), Some(5.0));
        assert_eq!(recs[0].outcome.as_deref(), Some("1"));
    }

    #[test]
    fn missing_column_is_reported_by_name() {
        let cols = ColumnConfig {
            score: Some("prob".into()),
            ..Default::default()
        };
        let e = read_records("gender,s\nf,1\n".as_bytes(), &attrs(), &cols).unwrap_err();
        assert_eq!(e.to_string(), "column not found: prob");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn bad_number_is_data_error() {
        let cols = ColumnConfig {
            score: Some("s".into()),
            ..Default::default()
        };
        let e = read_records("gender,s\nf,abc\n".as_bytes(), &attrs(), &cols).unwrap_err();
        assert!(matches!(e, Error::Data(_)));
    }

    #[test]
    fn empty_estimator_list_means_all_four() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c.estimator_list().len(), 4);
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }
}
