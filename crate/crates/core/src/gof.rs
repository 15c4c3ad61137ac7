//! Nested-model F-tests on group-level estimates.
//!
//! Each model is an intercept plus a set of feature columns, fit by
//! weighted least squares with weights `1 / sigma_a^2`. Degrees of freedom
//! are numerical ranks, so linearly dependent columns are fine.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnKind, FeatureMatrix};
use crate::numerics::{f_sf, weighted_least_squares};

pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GofModelSpec {
    pub name: String,
    /// Column names or `prefix*` patterns; empty for intercept only.
    #[serde(default)]
    pub columns: Vec<String>,
}

impl GofModelSpec {
    pub fn new<S: Into<String>>(name: impl Into<String>, columns: impl IntoIterator<Item = S>) -> Self {
        GofModelSpec {
            name: name.into(),
            columns: columns.into_iter().map(Into::into).collect(),
        }
    }

    /// Resolved column indices, rejecting group-identity columns.
    pub fn resolve(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        let cols = features.select(&self.columns).map_err(|e| match e {
            Error::Spec(m) => Error::Spec(format!("model `{}`: {m}", self.name)),
            e => e,
        })?;
        if let Some(&j) = cols
            .iter()
            .find(|&&j| features.columns[j].kind == ColumnKind::GroupIdentity)
        {
            return Err(Error::Spec(format!(
                "model `{}` uses group-identity column `{}`",
                self.name, features.columns[j].name
            )));
        }
        Ok(cols)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub full: String,
    pub reduced: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GofLadder {
    pub models: Vec<GofModelSpec>,
    pub comparisons: Vec<Comparison>,
}

impl GofLadder {
    fn model(&self, name: &str) -> Result<&GofModelSpec> {
        self.models
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Spec(format!("unknown model `{name}` in ladder")))
    }

    /// Explanatory, sensitive-attribute and outcome-by-attribute models:
    /// expl vs null, sens vs null, expl+sens vs expl, expl+sens+y.sens vs
    /// expl+sens. The last model needs outcome-rate by attribute
    /// interactions in the feature spec.
    pub fn sensitive() -> GofLadder {
        GofLadder {
            models: vec![
                GofModelSpec::new("null", Vec::<String>::new()),
                GofModelSpec::new("expl", ["expl:*"]),
                GofModelSpec::new("sens", ["attr:*"]),
                GofModelSpec::new("expl+sens", ["expl:*", "attr:*"]),
                GofModelSpec::new("expl+sens+y.sens", ["expl:*", "attr:*", "int:rate:y=*"]),
            ],
            comparisons: comparisons(&[
                ("expl", "null"),
                ("sens", "null"),
                ("expl+sens", "expl"),
                ("expl+sens+y.sens", "expl+sens"),
            ]),
        }
    }

    /// Seven comparisons over explanatory, age and race columns and their
    /// age by race interactions.
    pub fn age_race() -> GofLadder {
        GofLadder {
            models: vec![
                GofModelSpec::new("null", Vec::<String>::new()),
                GofModelSpec::new("expl", ["expl:*"]),
                GofModelSpec::new("age", ["attr:age=*"]),
                GofModelSpec::new("expl+age", ["expl:*", "attr:age=*"]),
                GofModelSpec::new("expl+rc", ["expl:*", "attr:race=*"]),
                GofModelSpec::new("expl+age+rc", ["expl:*", "attr:age=*", "attr:race=*"]),
                GofModelSpec::new(
                    "expl+age+rc+age.rc",
                    ["expl:*", "attr:age=*", "attr:race=*", "int:attr:age=*"],
                ),
            ],
            comparisons: comparisons(&[
                ("expl", "null"),
                ("age", "null"),
                ("expl+age", "expl"),
                ("expl+rc", "expl"),
                ("expl+age+rc", "expl+age"),
                ("expl+age+rc", "expl+rc"),
                ("expl+age+rc+age.rc", "expl+age+rc"),
            ]),
        }
    }
}

fn comparisons(pairs: &[(&str, &str)]) -> Vec<Comparison> {
    pairs
        .iter()
        .map(|(f, r)| Comparison {
            full: f.to_string(),
            reduced: r.to_string(),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per column.
    pub coefficients: Vec<f64>,
    pub rss: f64,
    /// Numerical rank including the intercept.
    pub rank: usize,
    pub n: usize,
}

/// Weighted least squares of `z` on an intercept plus `x`, over rows with a
/// defined estimate.
pub fn fit_weighted_ols(x: &DMatrix<f64>, z: &[Option<f64>], weights: &[f64]) -> Result<OlsFit> {
    if z.len() != x.nrows() || weights.len() != x.nrows() {
        return Err(Error::Parameter(
            "feature rows, estimates and weights differ in length".into(),
        ));
    }
    let rows: Vec<usize> = (0..z.len()).filter(|&i| z[i].is_some()).collect();
    if rows.is_empty() {
        return Err(Error::Estimation("no group has a defined estimate".into()));
    }
    if rows.iter().any(|&i| !(weights[i] > 0.0)) {
        return Err(Error::Numeric("weights must be positive".into()));
    }
    let p = x.ncols();
    let design = DMatrix::from_fn(rows.len(), p + 1, |r, j| if j == 0 { 1.0 } else { x[(rows[r], j - 1)] });
    let y: Vec<f64> = rows.iter().map(|&i| z[i].unwrap()).collect();
    let w: Vec<f64> = rows.iter().map(|&i| weights[i]).collect();
    let sol = weighted_least_squares(&design, &y, &w)?;
    Ok(OlsFit {
        coefficients: sol.solution.iter().copied().collect(),
        rss: sol.rss,
        rank: sol.rank,
        n: rows.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GofResult {
    pub comparison: String,
    pub rss0: f64,
    pub rss1: f64,
    pub df0: usize,
    pub df1: usize,
    pub f: f64,
    pub p: f64,
    pub n: usize,
}

impl GofResult {
    pub fn numerator_df(&self) -> usize {
        self.df1 - self.df0
    }

    pub fn denominator_df(&self) -> usize {
        self.n - self.df1
    }

    pub fn significant(&self) -> bool {
        self.p < SIGNIFICANCE
    }
}

/// F-test of `reduced` against `full` given resolved column indices.
pub fn f_test_columns(
    name: &str,
    reduced: &[usize],
    full: &[usize],
    features: &FeatureMatrix,
    z: &[Option<f64>],
    weights: &[f64],
) -> Result<GofResult> {
    if let Some(j) = reduced.iter().find(|j| !full.contains(j)) {
        return Err(Error::Spec(format!(
            "{name}: models are not nested, `{}` is missing from the larger model",
            features.columns[*j].name
        )));
    }
    let m0 = fit_weighted_ols(&features.submatrix(reduced), z, weights)?;
    let m1 = fit_weighted_ols(&features.submatrix(full), z, weights)?;
    if m1.rank <= m0.rank {
        return Err(Error::Spec(format!("{name}: the larger model adds no rank")));
    }
    if m1.n <= m1.rank {
        return Err(Error::Inference(format!(
            "{name}: no residual degrees of freedom ({} groups, rank {})",
            m1.n, m1.rank
        )));
    }
    let d1 = (m1.rank - m0.rank) as f64;
    let d2 = (m1.n - m1.rank) as f64;
    // gains at rounding level count as no improvement
    let scale: f64 = z.iter().zip(weights).filter_map(|(z, w)| z.map(|z| w * z * z)).sum();
    let gain = m0.rss - m1.rss;
    let (f, p) = if gain <= 1e-12 * scale {
        (0.0, 1.0)
    } else if m1.rss == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (gain / d1) / (m1.rss / d2);
        (f, f_sf(f, d1, d2)?.clamp(0.0, 1.0))
    };
    Ok(GofResult {
        comparison: name.to_string(),
        rss0: m0.rss,
        rss1: m1.rss,
        df0: m0.rank,
        df1: m1.rank,
        f,
        p,
        n: m1.n,
    })
}

pub fn f_test(
    reduced: &GofModelSpec,
    full: &GofModelSpec,
    features: &FeatureMatrix,
    z: &[Option<f64>],
    weights: &[f64],
) -> Result<GofResult> {
    let name = format!("{} vs {}", full.name, reduced.name);
    let r = reduced.resolve(features)?;
    let f = full.resolve(features)?;
    f_test_columns(&name, &r, &f, features, z, weights)
}

/// Runs every comparison of the ladder in order.
pub fn gof_ladder(
    ladder: &GofLadder,
    features: &FeatureMatrix,
    z: &[Option<f64>],
    weights: &[f64],
) -> Result<Vec<GofResult>> {
    if ladder.comparisons.is_empty() {
        return Err(Error::Spec("empty ladder".into()));
    }
    ladder
        .comparisons
        .iter()
        .map(|c| f_test(ladder.model(&c.reduced)?, ladder.model(&c.full)?, features, z, weights))
        .collect()
}
