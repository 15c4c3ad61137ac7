//! Group-level feature vectors for structured regression and
//! goodness-of-fit models.
//!
//! Column names are stable identifiers used in configs and reports:
//! `grp:<group>`, `attr:<name>=<value>`, `expl:<covariate>`, `rate:y=<label>`
//! and `int:<colA>*<colB>`. Patterns ending in `*` match every column with
//! that prefix.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{GroupKey, GroupedDataset};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IndicatorSelection {
    All(bool),
    Subset(Vec<String>),
}

impl Default for IndicatorSelection {
    fn default() -> Self {
        IndicatorSelection::All(true)
    }
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    #[serde(default = "yes")]
    pub group_identity: bool,
    #[serde(default)]
    pub attribute_indicators: IndicatorSelection,
    /// Covariates aggregated by their group mean.
    #[serde(default)]
    pub explanatory: Vec<String>,
    /// Outcome domain; one rate column per label.
    #[serde(default)]
    pub outcome_rates: Vec<String>,
    /// Pairs of column patterns whose matches are multiplied elementwise.
    #[serde(default)]
    pub interactions: Vec<[String; 2]>,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            group_identity: true,
            attribute_indicators: IndicatorSelection::All(true),
            explanatory: Vec::new(),
            outcome_rates: Vec::new(),
            interactions: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    GroupIdentity,
    Attribute,
    Explanatory,
    OutcomeRate,
    Interaction,
}

impl ColumnKind {
    /// Coarse type: sensitive, explanatory or interaction.
    pub fn category(self) -> &'static str {
        match self {
            ColumnKind::GroupIdentity | ColumnKind::Attribute => "sensitive",
            ColumnKind::Explanatory | ColumnKind::OutcomeRate => "explanatory",
            ColumnKind::Interaction => "interaction",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// One row per group (schema order), one column per feature.
#[derive(Clone, Debug)]
pub struct FeatureMatrix {
    pub keys: Vec<GroupKey>,
    pub columns: Vec<FeatureColumn>,
    pub values: DMatrix<f64>,
}

pub fn matches_pattern(name: &str, pattern: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => name.starts_with(prefix),
        None => name == pattern,
    }
}

impl FeatureMatrix {
    pub fn num_groups(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Indices of columns matching any of `patterns`, in matrix order.
    /// Every pattern must match at least one column.
    pub fn select(&self, patterns: &[String]) -> Result<Vec<usize>> {
        for p in patterns {
            if !self.columns.iter().any(|c| matches_pattern(&c.name, p)) {
                return Err(Error::Spec(format!("pattern `{p}` matches no feature column")));
            }
        }
        Ok((0..self.columns.len())
            .filter(|&j| patterns.iter().any(|p| matches_pattern(&self.columns[j].name, p)))
            .collect())
    }

    /// Matrix restricted to the given columns.
    pub fn submatrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.values.nrows(), cols.len(), |i, j| self.values[(i, cols[j])])
    }

    /// Copy with columns of the given kinds removed.
    pub fn without_kind(&self, kind: ColumnKind) -> FeatureMatrix {
        let keep: Vec<usize> = (0..self.columns.len())
            .filter(|&j| self.columns[j].kind != kind)
            .collect();
        FeatureMatrix {
            keys: self.keys.clone(),
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            values: self.submatrix(&keep),
        }
    }
}

fn outcome_matches(label: &str, target: &str) -> bool {
    if label == target {
        return true;
    }
    matches!((label.trim().parse::<f64>(), target.trim().parse::<f64>()), (Ok(a), Ok(b)) if a == b)
}

/// Builds the feature matrix for every group of the dataset.
///
/// Data-derived columns of empty groups are filled with the population-wide
/// value so that predictions remain defined for them.
pub fn build_features(data: &GroupedDataset, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    if data.is_empty() {
        return Err(Error::Data("cannot build features on an empty dataset".into()));
    }
    let schema = data.schema();
    let keys = data.keys().to_vec();
    let rows = keys.len();
    let mut columns: Vec<FeatureColumn> = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();

    if spec.group_identity {
        for (g, key) in keys.iter().enumerate() {
            columns.push(FeatureColumn {
                name: format!("grp:{key}"),
                kind: ColumnKind::GroupIdentity,
            });
            cols.push((0..rows).map(|r| if r == g { 1.0 } else { 0.0 }).collect());
        }
    }

    let attrs: Vec<usize> = match &spec.attribute_indicators {
        IndicatorSelection::All(true) => (0..schema.num_attributes()).collect(),
        IndicatorSelection::All(false) => Vec::new(),
        IndicatorSelection::Subset(names) => names
            .iter()
            .map(|n| {
                schema
                    .attribute_index(n)
                    .ok_or_else(|| Error::Config(format!("unknown attribute `{n}` in feature spec")))
            })
            .collect::<Result<_>>()?,
    };
    for &i in &attrs {
        let attr = &schema.attributes()[i];
        for v in &attr.domain {
            columns.push(FeatureColumn {
                name: format!("attr:{}={v}", attr.name),
                kind: ColumnKind::Attribute,
            });
            cols.push(
                keys.iter()
                    .map(|k| if &k.labels()[i] == v { 1.0 } else { 0.0 })
                    .collect(),
            );
        }
    }

    for cov in &spec.explanatory {
        let mut total = 0.0;
        let mut count = 0usize;
        let mut means = vec![None; rows];
        for (g, recs) in data.groups().iter().enumerate() {
            if recs.is_empty() {
                continue;
            }
            let mut s = 0.0;
            for r in recs {
                let v = r
                    .covariates
                    .get(cov)
                    .ok_or_else(|| Error::Data(format!("covariate `{cov}` missing in group {}", keys[g])))?;
                s += v;
            }
            total += s;
            count += recs.len();
            means[g] = Some(s / recs.len() as f64);
        }
        let overall = total / count as f64;
        columns.push(FeatureColumn {
            name: format!("expl:{cov}"),
            kind: ColumnKind::Explanatory,
        });
        cols.push(means.into_iter().map(|m| m.unwrap_or(overall)).collect());
    }

    if !spec.outcome_rates.is_empty() {
        let labels = &spec.outcome_rates;
        let mut counts = vec![vec![0usize; labels.len()]; rows];
        let mut totals = vec![0usize; labels.len()];
        for (g, recs) in data.groups().iter().enumerate() {
            for r in recs {
                let y = r
                    .outcome
                    .as_deref()
                    .ok_or_else(|| Error::Data(format!("outcome missing in group {}", keys[g])))?;
                let l = labels
                    .iter()
                    .position(|l| outcome_matches(y, l))
                    .ok_or_else(|| Error::Data(format!("outcome `{y}` is not in the declared outcome domain")))?;
                counts[g][l] += 1;
                totals[l] += 1;
            }
        }
        let n = data.len() as f64;
        for (l, label) in labels.iter().enumerate() {
            columns.push(FeatureColumn {
                name: format!("rate:y={label}"),
                kind: ColumnKind::OutcomeRate,
            });
            let overall = totals[l] as f64 / n;
            cols.push(
                (0..rows)
                    .map(|g| {
                        let size = data.group(g).len();
                        if size == 0 {
                            overall
                        } else {
                            counts[g][l] as f64 / size as f64
                        }
                    })
                    .collect(),
            );
        }
    }

    let base = columns.len();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    for [pa, pb] in &spec.interactions {
        let left: Vec<usize> = (0..base).filter(|&j| matches_pattern(&columns[j].name, pa)).collect();
        let right: Vec<usize> = (0..base).filter(|&j| matches_pattern(&columns[j].name, pb)).collect();
        if left.is_empty() || right.is_empty() {
            return Err(Error::Config(format!(
                "interaction operand `{}` matches no declared feature",
                if left.is_empty() { pa } else { pb }
            )));
        }
        for &a in &left {
            for &b in &right {
                if a == b || !seen.insert((a.min(b), a.max(b))) {
                    continue;
                }
                columns.push(FeatureColumn {
                    name: format!("int:{}*{}", columns[a].name, columns[b].name),
                    kind: ColumnKind::Interaction,
                });
                let prod = cols[a].iter().zip(&cols[b]).map(|(x, y)| x * y).collect();
                cols.push(prod);
            }
        }
    }

    let values = DMatrix::from_fn(rows, cols.len(), |i, j| cols[j][i]);
    Ok(FeatureMatrix { keys, columns, values })
}
