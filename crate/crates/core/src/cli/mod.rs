//! Command-line front end: `evaluate`, `gof`, `benchmark` and `synth`.

pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{GroupKey, GroupedDataset};
use crate::error::{Error, Result};
use crate::features::build_features;
use crate::gof::gof_ladder;
use crate::metrics::{standard_estimates, EstimateSet, EstimatorKind, MetricConfig};
use crate::numerics::rng::{derive_seed, tags};
use crate::regression::{fit_lpr, fit_structured, rblpr_ci_levels, SrResult};
use crate::shrinkage::{eb_credible_set, eb_estimates, empirical_bayes, james_stein};
use crate::synth::{compute_ground_truth, generate_population, run_benchmark, Population};
use crate::variance::{
    estimate_variance_model, naive_normal_set, percentile_samples, percentile_set, pooled_normal_set, CiMethod,
    IntervalSet,
};
use config::RunConfig;
use report::{jnum, num, opt_jnum, opt_num, Format, Writer};

#[derive(Debug, Parser)]
#[command(
    name = "intersect-eval",
    version,
    about = "Disaggregated evaluation across intersectional groups"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value = "both")]
    pub format: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Per-group estimates and intervals for each metric.
    Evaluate,
    /// Goodness-of-fit F-test ladder for each metric.
    Gof,
    /// Repeated draws from a synthetic population, scored against truth.
    Benchmark,
    /// Writes a synthetic population and its per-group truth.
    Synth,
}

/// Parses arguments, runs the command and returns the process exit code.
/// Failures are reported on stderr as a JSON object.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let diag = json!({"error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()});
            eprintln!("{diag}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config = RunConfig::from_json(&text)?;
    let hash: String = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    let base = path.parent().unwrap_or(Path::new("."));
    let out = cli
        .out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(|d| base.join(d)))
        .unwrap_or_else(|| PathBuf::from("out"));
    let writer = Writer::new(&out, cli.format, hash, seed)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Evaluate => evaluate(&config, base, seed, &writer),
        Command::Gof => gof(&config, base, seed, &writer),
        Command::Benchmark => benchmark(&config, seed, &writer),
        Command::Synth => synth(&config, seed, &writer),
    })
}

fn key_cells(key: &GroupKey) -> Vec<String> {
    key.labels().iter().map(|l| l.to_string()).collect()
}

fn key_json(data: &GroupedDataset, key: &GroupKey) -> Value {
    let mut m = serde_json::Map::new();
    for (a, l) in data.schema().attributes().iter().zip(key.labels()) {
        m.insert(a.name.clone(), json!(l.as_ref()));
    }
    Value::Object(m)
}

struct MetricRun {
    estimates: Vec<EstimateSet>,
    intervals: Vec<IntervalSet>,
    summary: Value,
}

fn evaluate_metric(config: &RunConfig, data: &GroupedDataset, metric: &MetricConfig, seed: u64) -> Result<MetricRun> {
    let estimators = config.estimator_list();
    let ci = &config.intervals;
    let z = standard_estimates(data, metric)?;
    let vm = estimate_variance_model(data, metric, config.sr.variance_replicates, seed)?;
    let needs_sr = estimators
        .iter()
        .any(|e| matches!(e, EstimatorKind::Sr | EstimatorKind::Lpr))
        || ci.methods.contains(&CiMethod::Rblpr);
    let sr: Option<SrResult> = if needs_sr {
        Some(fit_structured(
            data,
            &z,
            &vm,
            &config.features,
            metric,
            &config.sr,
            seed,
        )?)
    } else {
        None
    };
    let eb = if estimators.contains(&EstimatorKind::Eb) || ci.methods.contains(&CiMethod::EbCredible) {
        Some(empirical_bayes(&z, &vm)?)
    } else {
        None
    };

    let mut estimates = Vec::new();
    for kind in &estimators {
        estimates.push(match kind {
            EstimatorKind::Standard => z.clone(),
            EstimatorKind::Sr => sr.as_ref().unwrap().estimates.clone(),
            EstimatorKind::Js => james_stein(&z, vm.sigma2, config.js_multiplier)?,
            EstimatorKind::Eb => eb_estimates(eb.as_ref().unwrap(), &z),
            EstimatorKind::Lpr => {
                let r = sr.as_ref().unwrap();
                let lpr = fit_lpr(
                    &r.features.values,
                    &z.values,
                    &vm.weights(),
                    r.fit.lambda,
                    config.sr.lambda_ridge,
                    &config.sr.lasso,
                )?;
                z.with_method(EstimatorKind::Lpr, lpr.fitted.iter().map(|&v| Some(v)).collect())
            }
            EstimatorKind::Truth => return Err(Error::Config("`truth` is only available in benchmarks".into())),
        });
    }

    let mut intervals = Vec::new();
    for method in &ci.methods {
        let sets: Vec<IntervalSet> = match method {
            CiMethod::PooledNormal => ci
                .levels
                .iter()
                .map(|&l| pooled_normal_set(&z.values, &vm, l))
                .collect::<Result<_>>()?,
            CiMethod::NaiveNormal => ci
                .levels
                .iter()
                .map(|&l| naive_normal_set(&z.values, &vm, l))
                .collect::<Result<_>>()?,
            CiMethod::Percentile => {
                let samples = percentile_samples(data, metric, ci.percentile_replicates, seed)?;
                ci.levels
                    .iter()
                    .map(|&l| percentile_set(&samples, l))
                    .collect::<Result<_>>()?
            }
            CiMethod::Rblpr => {
                let r = sr.as_ref().unwrap();
                rblpr_ci_levels(
                    &r.features.values,
                    &z.values,
                    &vm.weights(),
                    r.fit.lambda,
                    config.sr.lambda_ridge,
                    config.sr.rblpr_replicates,
                    &ci.levels,
                    derive_seed(seed, &[tags::RBLPR]),
                    &config.sr.lasso,
                )?
            }
            CiMethod::EbCredible => {
                let f = eb.as_ref().unwrap();
                ci.levels
                    .iter()
                    .map(|&l| eb_credible_set(f, l))
                    .collect::<Result<_>>()?
            }
        };
        intervals.extend(sets);
    }

    let mut summary = json!({
        "metric": metric.name(),
        "threshold": metric.threshold.map(jnum),
        "sigma2": jnum(vm.sigma2),
        "defined_groups": z.num_defined(),
    });
    if let Some(r) = &sr {
        summary["lambda"] = jnum(r.fit.lambda);
        summary["lasso_converged"] = json!(r.fit.converged);
        summary["active_columns"] = json!(r
            .fit
            .active
            .iter()
            .map(|&j| r.features.columns[j].name.clone())
            .collect::<Vec<_>>());
        if let Some(cv) = &r.cv {
            summary["cv"] = json!({
                "folds": cv.folds,
                "grid": cv.grid.iter().map(|&x| jnum(x)).collect::<Vec<_>>(),
                "mean_loss": cv.mean_loss.iter().map(|&x| jnum(x)).collect::<Vec<_>>(),
                "selected_index": cv.selected_index,
            });
        }
    }
    if let Some(f) = &eb {
        summary["eb_tau2"] = jnum(f.tau2);
        summary["eb_mu"] = jnum(f.mu);
    }
    Ok(MetricRun {
        estimates,
        intervals,
        summary,
    })
}

fn evaluate(config: &RunConfig, base: &Path, seed: u64, w: &Writer) -> Result<()> {
    let metrics = config.metric_configs()?;
    let data = config.load_dataset(base)?;
    let attr_names: Vec<String> = data.schema().attributes().iter().map(|a| a.name.clone()).collect();
    let mut docs = Vec::new();
    for metric in &metrics {
        let run = evaluate_metric(config, &data, metric, seed)?;
        let sizes = data.sizes();

        let mut header: Vec<&str> = attr_names.iter().map(String::as_str).collect();
        header.push("n");
        header.extend(run.estimates.iter().map(|e| e.method.name()));
        let rows: Vec<Vec<String>> = (0..data.num_groups())
            .map(|a| {
                let mut r = key_cells(&data.keys()[a]);
                r.push(sizes[a].to_string());
                r.extend(run.estimates.iter().map(|e| opt_num(e.values[a])));
                r
            })
            .collect();
        w.table(&format!("estimates_{}.csv", metric.name()), &header, &rows)?;

        let mut header: Vec<&str> = attr_names.iter().map(String::as_str).collect();
        header.extend(["n", "method", "level", "lower", "upper"]);
        let mut rows = Vec::new();
        for set in &run.intervals {
            for a in 0..data.num_groups() {
                let mut r = key_cells(&data.keys()[a]);
                r.push(sizes[a].to_string());
                r.push(set.method.name().into());
                r.push(num(set.level));
                r.push(opt_num(set.intervals[a].map(|i| i.lower)));
                r.push(opt_num(set.intervals[a].map(|i| i.upper)));
                rows.push(r);
            }
        }
        w.table(&format!("intervals_{}.csv", metric.name()), &header, &rows)?;

        let groups: Vec<Value> = (0..data.num_groups())
            .map(|a| {
                let mut est = serde_json::Map::new();
                for e in &run.estimates {
                    est.insert(e.method.name().into(), opt_jnum(e.values[a]));
                }
                let ivs: Vec<Value> = run
                    .intervals
                    .iter()
                    .map(|s| {
                        json!({
                            "method": s.method.name(),
                            "level": jnum(s.level),
                            "lower": opt_jnum(s.intervals[a].map(|i| i.lower)),
                            "upper": opt_jnum(s.intervals[a].map(|i| i.upper)),
                        })
                    })
                    .collect();
                json!({"group": key_json(&data, &data.keys()[a]), "n": sizes[a], "estimates": est, "intervals": ivs})
            })
            .collect();
        let mut doc = run.summary;
        doc["groups"] = json!(groups);
        docs.push(doc);
    }
    w.document(
        "evaluate.json",
        json!({"command": "evaluate", "records": data.len(), "metrics": docs}),
    )
}

fn gof(config: &RunConfig, base: &Path, seed: u64, w: &Writer) -> Result<()> {
    let ladder = config
        .gof
        .as_ref()
        .ok_or_else(|| Error::Config("no `gof` ladder configured".into()))?
        .resolve()?;
    if ladder.comparisons.is_empty() {
        return Err(Error::Spec("empty ladder".into()));
    }
    let metrics = config.metric_configs()?;
    let data = config.load_dataset(base)?;
    let features = build_features(&data, &config.features)?;
    let mut docs = Vec::new();
    for metric in &metrics {
        let z = standard_estimates(&data, metric)?;
        let vm = estimate_variance_model(&data, metric, config.sr.variance_replicates, seed)?;
        let results = gof_ladder(&ladder, &features, &z.values, &vm.weights())?;
        let rows: Vec<Vec<String>> = results
            .iter()
            .map(|r| {
                vec![
                    r.comparison.clone(),
                    num(r.f),
                    r.numerator_df().to_string(),
                    r.denominator_df().to_string(),
                    num(r.p),
                    r.significant().to_string(),
                    num(r.rss0),
                    num(r.rss1),
                    r.n.to_string(),
                ]
            })
            .collect();
        w.table(
            &format!("gof_{}.csv", metric.name()),
            &[
                "comparison",
                "f",
                "df_num",
                "df_den",
                "p",
                "significant",
                "rss_reduced",
                "rss_full",
                "groups",
            ],
            &rows,
        )?;
        let comps: Vec<Value> = results
            .iter()
            .map(|r| {
                json!({
                    "comparison": r.comparison,
                    "f": jnum(r.f),
                    "df_num": r.numerator_df(),
                    "df_den": r.denominator_df(),
                    "p": jnum(r.p),
                    "significant": r.significant(),
                    "rss_reduced": jnum(r.rss0),
                    "rss_full": jnum(r.rss1),
                    "groups": r.n,
                })
            })
            .collect();
        docs.push(json!({"metric": metric.name(), "sigma2": jnum(vm.sigma2), "comparisons": comps}));
    }
    w.document("gof.json", json!({"command": "gof", "metrics": docs}))
}

fn benchmark(config: &RunConfig, seed: u64, w: &Writer) -> Result<()> {
    let b = config
        .benchmark
        .as_ref()
        .ok_or_else(|| Error::Config("no `benchmark` section configured".into()))?;
    let model = b.model.resolve()?;
    let metric = b.metric.build()?;
    let pop = generate_population(
        &b.profile,
        &model,
        b.population_size,
        derive_seed(seed, &[tags::POPULATION]),
    )?;
    let truth = compute_ground_truth(&pop, &metric)?;
    let report = run_benchmark(&pop, &truth, &metric, &b.run, seed)?;

    let mut rows = Vec::new();
    for r in report.errors.iter().chain(&report.draw_errors) {
        rows.push(vec![
            r.estimator.name().into(),
            r.bucket.clone(),
            r.draw.map(|d| d.to_string()).unwrap_or_else(|| "all".into()),
            opt_num(r.mae),
            opt_num(r.mse),
            r.count.to_string(),
        ]);
    }
    w.table(
        "benchmark_mae.csv",
        &["estimator", "bucket", "draw", "mae", "mse", "count"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = report
        .coverage
        .iter()
        .map(|r| {
            vec![
                r.method.name().into(),
                num(r.level),
                r.bucket.clone(),
                opt_num(r.coverage),
                r.count.to_string(),
            ]
        })
        .collect();
    w.table(
        "benchmark_coverage.csv",
        &["method", "level", "bucket", "coverage", "count"],
        &rows,
    )?;
    let rows: Vec<Vec<String>> = report
        .width
        .iter()
        .map(|r| {
            vec![
                r.method.name().into(),
                num(r.level),
                r.bucket.clone(),
                opt_num(r.mean_relative_width),
                r.count.to_string(),
            ]
        })
        .collect();
    w.table(
        "benchmark_width.csv",
        &["method", "level", "bucket", "mean_relative_width", "count"],
        &rows,
    )?;
    let mut doc = serde_json::to_value(&report)?;
    doc["command"] = json!("benchmark");
    w.document("benchmark.json", doc)
}

fn synth(config: &RunConfig, seed: u64, w: &Writer) -> Result<()> {
    let s = config
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("no `synth` section configured".into()))?;
    let model = s.model.resolve()?;
    let pop = generate_population(&s.profile, &model, s.size, derive_seed(seed, &[tags::POPULATION]))?;
    write_population(&pop, w)?;
    let means = compute_ground_truth(&pop, &MetricConfig::mean())?;
    let sizes = pop.sizes();
    let groups: Vec<Value> = pop
        .schema()
        .groups()
        .iter()
        .enumerate()
        .map(|(g, key)| {
            let mut k = serde_json::Map::new();
            for (a, l) in pop.schema().attributes().iter().zip(key.labels()) {
                k.insert(a.name.clone(), json!(l.as_ref()));
            }
            json!({
                "group": k,
                "n": sizes[g],
                "mu": jnum(pop.model_means[g]),
                "mean_y_hat": opt_jnum(means.values[g]),
            })
        })
        .collect();
    let (mean, sd) = pop.moments();
    w.raw_document(
        "population_truth.json",
        json!({
            "command": "synth",
            "model": serde_json::to_value(&model)?,
            "size": pop.len(),
            "mean_y_hat": jnum(mean),
            "sd_y_hat": jnum(sd),
            "groups": groups,
        }),
    )
}

/// One row per record: attributes, covariate, outcome and `y_hat`.
fn write_population(pop: &Population, w: &Writer) -> Result<()> {
    let mut header: Vec<String> = pop.schema().attributes().iter().map(|a| a.name.clone()).collect();
    header.extend([pop.covariate_name().to_string(), "y".into(), "y_hat".into()]);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = (0..pop.len())
        .map(|i| {
            let r = pop.record(i);
            let mut row = key_cells(&r.attrs);
            let (_, c) = r
                .covariates
                .iter()
                .next()
                .expect("population records carry the covariate");
            row.push(num(c));
            row.push(r.outcome.as_deref().unwrap_or("").to_string());
            row.push(num(pop.y_hat()[i]));
            row
        })
        .collect();
    w.raw_table("population.csv", &header, &rows, true)
}
