//! Structured regression estimates: a variance-weighted lasso over group
//! features, tuned by cross-validation, with lasso + partial ridge
//! bootstrap intervals.

pub mod cv;
pub mod lasso;
pub mod lpr;

use serde::{Deserialize, Serialize};

pub use cv::{assign_folds, cv_select_lambda, default_grid, CvResult};
pub use lasso::{
    fit_weighted_lasso, lambda_grid, lambda_max, lasso_objective, lasso_path, predict, LassoConfig, LassoFit,
};
pub use lpr::{fit_lpr, rblpr_ci, rblpr_ci_levels, LprFit, DEFAULT_LAMBDA_RIDGE, DEFAULT_RBLPR_REPLICATES};

use crate::data::GroupedDataset;
use crate::error::Result;
use crate::features::{build_features, FeatureMatrix, FeatureSpec};
use crate::metrics::{standard_estimates, EstimateSet, EstimatorKind, MetricConfig};
use crate::variance::{estimate_variance_model, VarianceModel, DEFAULT_VARIANCE_REPLICATES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SrConfig {
    pub folds: usize,
    pub grid_size: usize,
    pub grid_ratio: f64,
    pub variance_replicates: usize,
    pub lambda_ridge: f64,
    pub rblpr_replicates: usize,
    /// Fixed penalty; skips cross-validation when set.
    pub lambda: Option<f64>,
    pub lasso: LassoConfig,
}

impl Default for SrConfig {
    fn default() -> Self {
        SrConfig {
            folds: 10,
            grid_size: 50,
            grid_ratio: 1e-4,
            variance_replicates: DEFAULT_VARIANCE_REPLICATES,
            lambda_ridge: DEFAULT_LAMBDA_RIDGE,
            rblpr_replicates: DEFAULT_RBLPR_REPLICATES,
            lambda: None,
            lasso: LassoConfig::default(),
        }
    }
}

/// Predictions of a fit as an estimate set; defined for every group.
pub fn sr_estimates(fit: &LassoFit, template: &EstimateSet) -> EstimateSet {
    template.with_method(EstimatorKind::Sr, fit.fitted.iter().map(|&v| Some(v)).collect())
}

#[derive(Clone, Debug)]
pub struct SrResult {
    pub standard: EstimateSet,
    pub variance: VarianceModel,
    pub features: FeatureMatrix,
    pub cv: Option<CvResult>,
    pub fit: LassoFit,
    pub estimates: EstimateSet,
}

/// Full pipeline on one dataset: standard estimates, pooled variances,
/// features, penalty selection and the final fit.
pub fn structured_regression(
    data: &GroupedDataset,
    spec: &FeatureSpec,
    metric: &MetricConfig,
    config: &SrConfig,
    seed: u64,
) -> Result<SrResult> {
    let standard = standard_estimates(data, metric)?;
    let variance = estimate_variance_model(data, metric, config.variance_replicates, seed)?;
    fit_structured(data, &standard, &variance, spec, metric, config, seed)
}

/// As [`structured_regression`] with the standard estimates and variance
/// model already computed on `data`.
pub fn fit_structured(
    data: &GroupedDataset,
    standard: &EstimateSet,
    variance: &VarianceModel,
    spec: &FeatureSpec,
    metric: &MetricConfig,
    config: &SrConfig,
    seed: u64,
) -> Result<SrResult> {
    let (standard, variance) = (standard.clone(), variance.clone());
    let features = build_features(data, spec)?;
    let weights = variance.weights();
    let (cv, lambda) = match config.lambda {
        Some(l) => (None, l),
        None => {
            let max = lambda_max(&features.values, &standard.values, &weights, &config.lasso)?;
            let grid = lambda_grid(max, config.grid_size, config.grid_ratio);
            let cv = cv_select_lambda(data, spec, metric, &grid, config, seed)?;
            let l = cv.lambda;
            (Some(cv), l)
        }
    };
    let fit = fit_weighted_lasso(&features.values, &standard.values, &weights, lambda, &config.lasso)?;
    let estimates = sr_estimates(&fit, &standard);
    Ok(SrResult {
        standard,
        variance,
        features,
        cv,
        fit,
        estimates,
    })
}
