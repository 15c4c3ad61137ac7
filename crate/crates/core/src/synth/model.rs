//! Data-generating models for semi-synthetic predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Emission {
    /// `y_hat ~ Bernoulli(mu_a)`.
    Bernoulli,
    /// `y_hat ~ Normal(mu_a, variance)`.
    Normal { variance: f64 },
}

/// `coefficient * product of feature columns`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coefficient: f64,
    pub features: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthModel {
    pub name: String,
    pub intercept: f64,
    pub terms: Vec<Term>,
    pub emission: Emission,
}

pub const BUILTIN_MODELS: [&str; 4] = ["model_age", "model_expl", "model_age_plus_rc", "model_age_times_rc"];

fn term(coefficient: f64, features: &[&str]) -> Term {
    Term {
        coefficient,
        features: features.iter().map(|s| s.to_string()).collect(),
    }
}

impl SynthModel {
    pub fn builtin(name: &str) -> Result<SynthModel> {
        let (intercept, terms, emission) = match name {
            "model_age" => (0.35, vec![term(-0.3, &["attr:age=40-60"])], Emission::Bernoulli),
            "model_expl" => (
                -0.93,
                vec![term(0.16, &["expl:number_diagnoses"])],
                Emission::Normal { variance: 0.1 },
            ),
            "model_age_plus_rc" => (
                0.65,
                vec![term(-0.15, &["attr:age=40-60"]), term(-0.45, &["attr:race=white"])],
                Emission::Bernoulli,
            ),
            "model_age_times_rc" => (
                0.32,
                vec![term(-0.27, &["attr:age=40-60", "attr:race=white"])],
                Emission::Bernoulli,
            ),
            _ => return Err(Error::Config(format!("unknown synthetic model `{name}`"))),
        };
        Ok(SynthModel {
            name: name.to_string(),
            intercept,
            terms,
            emission,
        })
    }

    /// `mu_a` given a lookup from feature column name to its group value.
    pub fn mean(&self, feature: impl Fn(&str) -> Result<f64>) -> Result<f64> {
        let mut mu = self.intercept;
        for t in &self.terms {
            let mut v = t.coefficient;
            for f in &t.features {
                v *= feature(f)?;
            }
            mu += v;
        }
        Ok(mu)
    }

    pub fn validate(&self) -> Result<()> {
        if let Emission::Normal { variance } = self.emission {
            if !(variance >= 0.0 && variance.is_finite()) {
                return Err(Error::Spec(format!("emission variance must be >= 0, got {variance}")));
            }
        }
        if !self.intercept.is_finite() || self.terms.iter().any(|t| !t.coefficient.is_finite()) {
            return Err(Error::Spec("non-finite model coefficient".into()));
        }
        Ok(())
    }
}

/// Model config: a builtin name, or a full custom model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Builtin(String),
    Custom(SynthModel),
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<SynthModel> {
        let m = match self {
            ModelChoice::Builtin(name) => SynthModel::builtin(name)?,
            ModelChoice::Custom(m) => m.clone(),
        };
        m.validate()?;
        Ok(m)
    }
}
