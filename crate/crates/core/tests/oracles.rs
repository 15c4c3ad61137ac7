//! Worked examples checked against independent oracles.

#![allow(clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use intersect_eval::data::{stratify, AttributeSchema, EvalRecord, GroupKey, GroupedDataset};
use intersect_eval::features::{build_features, FeatureSpec};
use intersect_eval::gof::{f_test, fit_weighted_ols, GofModelSpec};
use intersect_eval::metrics::{standard_estimates, MetricConfig};
use intersect_eval::numerics::linalg::weighted_least_squares;
use intersect_eval::numerics::special::{f_cdf, f_sf};
use intersect_eval::regression::{cv_select_lambda, default_grid, fit_lpr, LassoConfig, SrConfig};
use intersect_eval::synth::{
    compute_ground_truth, generate_population, run_benchmark, sample_evaluation_dataset, BaseProfile, BenchmarkConfig,
    SynthModel,
};
use intersect_eval::variance::{
    bootstrap_percentile_ci, estimate_variance_model, pooled_normal_ci, pooled_variance, CiMethod,
};

fn grid_dataset(mu: &[f64], sizes: &[usize], sd: f64, rng: &mut ChaCha8Rng) -> GroupedDataset {
    let schema =
        AttributeSchema::new([("a", vec!["a0", "a1", "a2", "a3"]), ("b", vec!["b0", "b1", "b2", "b3"])]).unwrap();
    let noise = Normal::new(0.0, sd).unwrap();
    let mut records = Vec::new();
    for (g, key) in schema.groups().to_vec().into_iter().enumerate() {
        for _ in 0..sizes[g] {
            records.push(EvalRecord::new(key.clone()).with_value(mu[g] + noise.sample(rng)));
        }
    }
    stratify(records, &schema).unwrap()
}

#[test]
fn pooled_interval_example() {
    let ci = pooled_normal_ci(0.5, 0.1, 0.05).unwrap();
    assert!(
        (ci.lower - 0.3040).abs() < 5e-5 && (ci.upper - 0.6960).abs() < 5e-5,
        "{ci:?}"
    );
    assert!((ci.lower - (0.5 - 0.1 * 1.959964)).abs() < 1e-7);
}

#[test]
fn pooled_variance_two_group_example() {
    // hand evaluation: (10 * 10 * 0.01 + 40 * 40 * 0.004) / 50
    let vm = pooled_variance(&[Some(0.01), Some(0.004)], &[10, 40]).unwrap();
    assert!((vm.sigma2 - 0.148).abs() < 1e-15);
    assert!((vm.group_variance(0).unwrap() - 0.0148).abs() < 1e-15);
    assert!((vm.group_variance(1).unwrap() - 0.0037).abs() < 1e-15);
}

#[test]
fn percentile_interval_matches_resample_enumeration() {
    let values = [0.0, 0.0, 1.0, 1.0];
    let mut means = Vec::new();
    for i in 0..256usize {
        let idx = [i & 3, (i >> 2) & 3, (i >> 4) & 3, (i >> 6) & 3];
        means.push(idx.iter().map(|&j| values[j]).sum::<f64>() / 4.0);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        let h = p * 255.0;
        let (lo, frac) = (h.floor() as usize, h - h.floor());
        means[lo] + frac * (means[(lo + 1).min(255)] - means[lo])
    };
    let schema = AttributeSchema::new([("g", vec!["x"])]).unwrap();
    let recs: Vec<EvalRecord> = values
        .iter()
        .map(|&v| EvalRecord::new(GroupKey::new(["x"])).with_value(v))
        .collect();
    let data = stratify(recs, &schema).unwrap();
    let metric = MetricConfig::mean();
    let obs = metric.observations(data.group(0)).unwrap();
    let ci = bootstrap_percentile_ci(&obs, &metric, 4096, 0.5, 17, 0).unwrap();
    assert_eq!((ci.lower, ci.upper), (q(0.25), q(0.75)));
    assert_eq!((ci.lower, ci.upper), (0.25, 0.75));
}

fn dense_solve(a: &DMatrix<f64>, z: &[f64], w: &[f64], penalty: &[f64]) -> DVector<f64> {
    let wm = DMatrix::from_diagonal(&DVector::from_column_slice(w));
    let lhs = a.transpose() * &wm * a + DMatrix::from_diagonal(&DVector::from_column_slice(penalty));
    let rhs = a.transpose() * &wm * DVector::from_column_slice(z);
    lhs.lu().solve(&rhs).unwrap()
}

#[test]
fn lpr_matches_dense_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = DMatrix::from_fn(6, 3, |_, _| rng.random::<f64>());
    let z: Vec<f64> = (0..6)
        .map(|i| 0.3 + 0.8 * x[(i, 0)] + 0.1 * rng.random::<f64>())
        .collect();
    let w: Vec<f64> = (0..6).map(|_| 1.0 + 9.0 * rng.random::<f64>()).collect();
    let zo: Vec<Option<f64>> = z.iter().map(|&v| Some(v)).collect();
    let cfg = LassoConfig::default();
    let lambda_ridge = 0.05;
    for lambda in [0.0, 0.05, 0.3, 1.0] {
        let fit = fit_lpr(&x, &zo, &w, lambda, lambda_ridge, &cfg).unwrap();
        // stage 2 on the original scale: ridge weight W * lambda_ridge * s_j^2
        let sw: f64 = w.iter().sum();
        let mut penalty = vec![0.0; 4];
        for j in 0..3 {
            if !fit.active.contains(&j) {
                let m = (0..6).map(|i| w[i] * x[(i, j)]).sum::<f64>() / sw;
                let s2 = (0..6).map(|i| w[i] * (x[(i, j)] - m).powi(2)).sum::<f64>() / sw;
                penalty[j + 1] = sw * lambda_ridge * s2;
            }
        }
        let a = DMatrix::from_fn(6, 4, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let theta = dense_solve(&a, &z, &w, &penalty);
        let fitted = &a * theta;
        for i in 0..6 {
            assert!(
                (fit.fitted[i] - fitted[i]).abs() < 1e-10,
                "lambda {lambda}: {} vs {}",
                fit.fitted[i],
                fitted[i]
            );
        }
    }
}

#[test]
fn ols_on_eight_groups_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let x = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>());
    let z: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
    let w: Vec<f64> = (0..8).map(|_| 0.5 + rng.random::<f64>()).collect();
    let zo: Vec<Option<f64>> = z.iter().map(|&v| Some(v)).collect();
    let fit = fit_weighted_ols(&x, &zo, &w).unwrap();
    let a = DMatrix::from_fn(8, 4, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let theta = dense_solve(&a, &z, &w, &[0.0; 4]);
    let resid = DVector::from_column_slice(&z) - &a * &theta;
    let rss: f64 = (0..8).map(|i| w[i] * resid[i] * resid[i]).sum();
    assert_eq!(fit.rank, 4);
    assert!((fit.rss - rss).abs() < 1e-12);
    for j in 0..4 {
        assert!((fit.coefficients[j] - theta[j]).abs() < 1e-10);
    }
}

#[test]
fn wls_matches_pseudo_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut x = DMatrix::from_fn(10, 6, |_, _| rng.random::<f64>() - 0.5);
    // rank deficient: last column repeats the first two
    for i in 0..10 {
        x[(i, 5)] = x[(i, 0)] + x[(i, 1)];
    }
    let y: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
    let w: Vec<f64> = (0..10).map(|_| 0.2 + rng.random::<f64>()).collect();
    let sol = weighted_least_squares(&x, &y, &w).unwrap();
    let sqrt_w = DMatrix::from_diagonal(&DVector::from_iterator(10, w.iter().map(|v| v.sqrt())));
    let xw = &sqrt_w * &x;
    let yw = &sqrt_w * DVector::from_column_slice(&y);
    let pinv = xw.clone().pseudo_inverse(1e-10).unwrap();
    let beta = pinv * yw;
    assert_eq!(sol.rank, 5);
    for j in 0..6 {
        assert!(
            (sol.solution[j] - beta[j]).abs() < 1e-9,
            "{j}: {} vs {}",
            sol.solution[j],
            beta[j]
        );
    }
}

#[test]
fn f_distribution_reference_point() {
    // integrated density, computed outside the library
    let p = f_cdf(2.5, 3.0, 12.0).unwrap();
    assert!((p - 0.890_845_287_605).abs() < 1e-9, "{p}");
    assert!((f_sf(2.5, 3.0, 12.0).unwrap() + p - 1.0).abs() < 1e-14);
}

fn cv_config() -> SrConfig {
    SrConfig {
        folds: 5,
        grid_size: 20,
        variance_replicates: 100,
        ..SrConfig::default()
    }
}

#[test]
fn cv_prefers_largest_penalty_for_constant_truth() {
    let spec = FeatureSpec::default();
    let metric = MetricConfig::mean();
    let config = cv_config();
    let mut hits = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let sizes: Vec<usize> = (0..16).map(|_| rng.random_range(8..40)).collect();
        let data = grid_dataset(&[0.5; 16], &sizes, 1.0, &mut rng);
        let grid = default_grid(&data, &spec, &metric, &config, seed).unwrap();
        let cv = cv_select_lambda(&data, &spec, &metric, &grid, &config, seed).unwrap();
        hits += (cv.selected_index == 0) as usize;
    }
    assert!(hits > 25, "largest penalty selected in {hits}/50 runs");
}

#[test]
fn cv_prefers_small_penalty_for_heterogeneous_truth() {
    let spec = FeatureSpec::default();
    let metric = MetricConfig::mean();
    let config = cv_config();
    let mut hits = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let mu: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let data = grid_dataset(&mu, &[30; 16], 0.01, &mut rng);
        let grid = default_grid(&data, &spec, &metric, &config, seed).unwrap();
        let cv = cv_select_lambda(&data, &spec, &metric, &grid, &config, seed).unwrap();
        hits += (cv.selected_index >= grid.len() - grid.len() / 10) as usize;
    }
    assert!(hits > 25, "lowest-decile penalty selected in {hits}/50 runs");
}

#[test]
fn cv_loss_has_interior_minimum_on_semi_synthetic_data() {
    let model = SynthModel::builtin("model_age_plus_rc").unwrap();
    let pop = generate_population(&BaseProfile::default(), &model, 100_000, 31).unwrap();
    let spec = FeatureSpec {
        explanatory: vec!["number_diagnoses".into()],
        ..FeatureSpec::default()
    };
    let metric = MetricConfig::mean();
    let config = SrConfig {
        variance_replicates: 200,
        ..SrConfig::default()
    };
    let mut interior = 0;
    for d in 0..5u64 {
        let data = sample_evaluation_dataset(&pop, 5000, 40 + d).unwrap();
        let grid = default_grid(&data, &spec, &metric, &config, d).unwrap();
        let cv = cv_select_lambda(&data, &spec, &metric, &grid, &config, d).unwrap();
        let best = cv.selected_index;
        let l = &cv.mean_loss;
        if best > 0 && best + 1 < l.len() && l[0] > l[best] && l[l.len() - 1] > l[best] {
            interior += 1;
        }
    }
    assert!(interior >= 4, "interior minimum in {interior}/5 draws");
}

#[test]
fn gof_detects_age_effect_on_model_age_data() {
    let model = SynthModel::builtin("model_age").unwrap();
    let pop = generate_population(&BaseProfile::default(), &model, 1_000_000, 51).unwrap();
    let spec = FeatureSpec {
        explanatory: vec!["number_diagnoses".into()],
        ..FeatureSpec::default()
    };
    let metric = MetricConfig::mean();
    let null = GofModelSpec::new("null", Vec::<String>::new());
    let expl = GofModelSpec::new("expl", ["expl:*"]);
    let age = GofModelSpec::new("age", ["attr:age=*"]);
    let (mut s_expl, mut s_age) = (0, 0);
    for d in 0..50u64 {
        let data = sample_evaluation_dataset(&pop, 5000, 500 + d).unwrap();
        let z = standard_estimates(&data, &metric).unwrap();
        let vm = estimate_variance_model(&data, &metric, 300, d).unwrap();
        let x = build_features(&data, &spec).unwrap();
        let w = vm.weights();
        s_expl += (f_test(&null, &expl, &x, &z.values, &w).unwrap().p < 0.05) as usize;
        s_age += (f_test(&null, &age, &x, &z.values, &w).unwrap().p < 0.05) as usize;
    }
    assert!(s_expl > 25, "expl vs null significant in {s_expl}/50");
    assert!(s_age > 25, "age vs null significant in {s_age}/50");
}

#[test]
fn bernoulli_truth_within_three_sd() {
    let model = SynthModel::builtin("model_age").unwrap();
    let pop = generate_population(&BaseProfile::default(), &model, 1_000_000, 52).unwrap();
    let truth = compute_ground_truth(&pop, &MetricConfig::mean()).unwrap();
    let age = pop.schema().attribute_index("age").unwrap();
    for (g, key) in truth.keys.iter().enumerate() {
        let mu = if &*key.labels()[age] == "40-60" { 0.05 } else { 0.35 };
        let n = truth.sizes[g] as f64;
        let got = truth.values[g].unwrap();
        assert!(
            (got - mu).abs() <= 3.0 * (mu * (1.0 - mu) / n).sqrt(),
            "{key:?}: {got} (n = {n})"
        );
    }
}

#[test]
fn quarter_of_groups_are_tiny_at_5000() {
    let model = SynthModel::builtin("model_age").unwrap();
    let pop = generate_population(&BaseProfile::default(), &model, 100_000, 53).unwrap();
    let data = sample_evaluation_dataset(&pop, 5000, 54).unwrap();
    let tiny = data.sizes().iter().filter(|&&n| n < 10).count();
    assert!((6..=10).contains(&tiny), "{tiny} of 32 groups below 10 records");
}

#[test]
fn pooled_normal_benchmark_coverage_on_normal_emission() {
    let model = SynthModel::builtin("model_expl").unwrap();
    let pop = generate_population(&BaseProfile::default(), &model, 100_000, 55).unwrap();
    let metric = MetricConfig::mean();
    let truth = compute_ground_truth(&pop, &metric).unwrap();
    let config = BenchmarkConfig {
        estimators: vec![intersect_eval::metrics::EstimatorKind::Standard],
        ci_methods: vec![CiMethod::PooledNormal],
        levels: vec![0.95],
        ..BenchmarkConfig::default()
    };
    let r = run_benchmark(&pop, &truth, &metric, &config, 56).unwrap();
    let cov = r.coverage(CiMethod::PooledNormal, 0.95, "all").unwrap();
    assert!((cov - 0.95).abs() <= 0.03, "coverage {cov}");
}
