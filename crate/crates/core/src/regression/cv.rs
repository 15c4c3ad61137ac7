//! Group-stratified K-fold selection of the lasso penalty.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::lasso::{lambda_grid, lambda_max, lasso_path};
use super::SrConfig;
use crate::data::{EvalRecord, GroupedDataset};
use crate::error::{Error, Result};
use crate::features::{build_features, FeatureSpec};
use crate::metrics::{standard_estimates, MetricConfig};
use crate::numerics::rng::{derive_seed, stream, tags};
use crate::variance::estimate_variance_model;

#[derive(Clone, Debug, Serialize)]
pub struct CvResult {
    /// Strictly decreasing penalty grid.
    pub grid: Vec<f64>,
    pub mean_loss: Vec<f64>,
    pub fold_losses: Vec<Vec<f64>>,
    pub selected_index: usize,
    pub lambda: f64,
    pub folds: usize,
    pub seed: u64,
}

/// Fold label for every record, grouped like `data.groups()`. Records of
/// each group are shuffled and dealt round-robin, continuing the deal
/// across groups so small groups spread over different folds.
pub fn assign_folds(data: &GroupedDataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Folds(format!("need at least 2 folds, got {folds}")));
    }
    if data.len() < folds {
        return Err(Error::Folds(format!(
            "{} records cannot fill {folds} folds",
            data.len()
        )));
    }
    let mut next = 0usize;
    Ok(data
        .groups()
        .iter()
        .enumerate()
        .map(|(g, recs)| {
            let mut order: Vec<usize> = (0..recs.len()).collect();
            order.shuffle(&mut stream(seed, &[tags::CV_FOLDS, g as u64]));
            let mut labels = vec![0; recs.len()];
            for i in order {
                labels[i] = next % folds;
                next += 1;
            }
            labels
        })
        .collect())
}

fn split(data: &GroupedDataset, labels: &[Vec<usize>], fold: usize) -> Result<(GroupedDataset, GroupedDataset)> {
    let mut train: Vec<Vec<EvalRecord>> = Vec::with_capacity(labels.len());
    let mut val: Vec<Vec<EvalRecord>> = Vec::with_capacity(labels.len());
    for (recs, lab) in data.groups().iter().zip(labels) {
        let (mut t, mut v) = (Vec::new(), Vec::new());
        for (r, &l) in recs.iter().zip(lab) {
            if l == fold {
                v.push(r.clone());
            } else {
                t.push(r.clone());
            }
        }
        train.push(t);
        val.push(v);
    }
    Ok((
        GroupedDataset::from_groups(data.schema().clone(), train)?,
        GroupedDataset::from_groups(data.schema().clone(), val)?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn fold_losses(
    data: &GroupedDataset,
    labels: &[Vec<usize>],
    fold: usize,
    spec: &FeatureSpec,
    metric: &MetricConfig,
    grid: &[f64],
    config: &SrConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let diag = |e: Error| Error::Folds(format!("fold {fold}: {e}"));
    let (train, val) = split(data, labels, fold)?;
    let z = standard_estimates(&train, metric)?;
    if z.num_defined() < 2 {
        return Err(Error::Folds(format!(
            "fold {fold}: training portion has {} groups with a defined estimate, need 2",
            z.num_defined()
        )));
    }
    let vm = estimate_variance_model(
        &train,
        metric,
        config.variance_replicates,
        derive_seed(seed, &[tags::CV_VARIANCE, fold as u64]),
    )
    .map_err(diag)?;
    let features = build_features(&train, spec).map_err(diag)?;
    let fits = lasso_path(&features.values, &z.values, &vm.weights(), grid, &config.lasso).map_err(diag)?;

    let zv = standard_estimates(&val, metric)?;
    let wv = vm.at_sizes(val.sizes()).weights();
    Ok(fits
        .iter()
        .map(|fit| {
            (0..zv.len())
                .filter_map(|a| match (z.values[a], zv.values[a]) {
                    (Some(_), Some(v)) => Some(wv[a] * (fit.fitted[a] - v).powi(2)),
                    _ => None,
                })
                .sum()
        })
        .collect())
}

/// Penalty grid from the full-data fit: `grid_size` log-spaced values from
/// the all-zero threshold down to `grid_ratio` of it.
pub fn default_grid(
    data: &GroupedDataset,
    spec: &FeatureSpec,
    metric: &MetricConfig,
    config: &SrConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let z = standard_estimates(data, metric)?;
    let vm = estimate_variance_model(data, metric, config.variance_replicates, seed)?;
    let f = build_features(data, spec)?;
    let max = lambda_max(&f.values, &z.values, &vm.weights(), &config.lasso)?;
    Ok(lambda_grid(max, config.grid_size, config.grid_ratio))
}

/// K-fold cross-validation of the penalty. Each fold recomputes estimates,
/// pooled variances and data-derived features on its training portion and
/// scores `sum_a (n_a^val / sigma^2_train) (mu_a - Z_a^val)^2` over groups
/// defined on both sides. The smallest mean loss wins; ties go to the
/// larger penalty.
pub fn cv_select_lambda(
    data: &GroupedDataset,
    spec: &FeatureSpec,
    metric: &MetricConfig,
    grid: &[f64],
    config: &SrConfig,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty lambda grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Parameter("lambda grid must be strictly decreasing".into()));
    }
    let labels = assign_folds(data, config.folds, seed)?;
    let fold_losses: Vec<Vec<f64>> = (0..config.folds)
        .into_par_iter()
        .map(|k| fold_losses(data, &labels, k, spec, metric, grid, config, seed))
        .collect::<Result<_>>()?;
    let mean_loss: Vec<f64> = (0..grid.len())
        .map(|l| fold_losses.iter().map(|f| f[l]).sum::<f64>() / config.folds as f64)
        .collect();
    let mut best = 0;
    for l in 1..grid.len() {
        if mean_loss[l] < mean_loss[best] {
            best = l;
        }
    }
    Ok(CvResult {
        grid: grid.to_vec(),
        mean_loss,
        fold_losses,
        selected_index: best,
        lambda: grid[best],
        folds: config.folds,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{stratify, AttributeSchema, GroupKey};

    fn data(sizes: &[usize]) -> GroupedDataset {
        let labels: Vec<String> = (0..sizes.len()).map(|i| format!("g{i}")).collect();
        let schema = AttributeSchema::new(vec![("a", labels.clone())]).unwrap();
        let mut recs = Vec::new();
        for (g, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                recs.push(EvalRecord::new(GroupKey::new([labels[g].as_str()])).with_value((i % 3) as f64));
            }
        }
        stratify(recs, &schema).unwrap()
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let d = data(&[7, 1, 1, 13, 2]);
        let a = assign_folds(&d, 4, 9).unwrap();
        assert_eq!(a, assign_folds(&d, 4, 9).unwrap());
        let mut count = [0; 4];
        for l in a.iter().flatten() {
            count[*l] += 1;
        }
        assert!(count.iter().all(|&c| c == 6));
        // within a group the fold sizes differ by at most one
        for g in &a {
            let mut c = [0; 4];
            for &l in g {
                c[l] += 1;
            }
            assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn bad_fold_counts() {
        let d = data(&[2, 1]);
        assert!(matches!(assign_folds(&d, 1, 0), Err(Error::Folds(_))));
        assert!(matches!(assign_folds(&d, 4, 0), Err(Error::Folds(_))));
    }
}
