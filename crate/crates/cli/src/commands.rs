//! Subcommand implementations.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sinc_core::layers::{analytic_sinc_params, init_params, predict_logits, LayerParams, ModelSpec};
use sinc_core::numerics::Aggregator;
use sinc_core::seeding::rng_for;
use sinc_core::synth::{generate_dataset, save_dataset, Dataset, DatasetConfig, DatasetStats, LabeledGraph};
use sinc_core::train::{
    self, bench_inference, evaluate, make_batches, write_history_csv, Averaging, Confusion, EpochRecord, Metrics,
    RuntimeStats, TrainConfig,
};

use crate::config::ConfigFile;
use crate::results::{append_result, read_results, render_markdown, ResultRow};
use crate::settings::{desk_train_defaults, parse_averaging, MODEL_KEYS, TRAIN_KEYS};
use crate::store::{load_model, load_split, save_model, split_path, ModelFile, Split, MODEL_FORMAT_VERSION};
use crate::{
    BenchArgs, EvalArgs, GenerateArgs, ReportArgs, TrainArgs, UsageError, VerifyArgs, BUILD_ID, EXIT_CHECK, EXIT_OK,
};

pub const DESK_TRAIN_GRAPHS: usize = 1000;
pub const DESK_TEST_GRAPHS: usize = 500;
pub const PAPER_TRAIN_GRAPHS: usize = 4000;
pub const PAPER_TEST_GRAPHS: usize = 1000;
pub const PAPER_EPOCHS: usize = 500;

pub fn unix_time_s() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn usage(e: impl std::fmt::Display) -> anyhow::Error {
    UsageError(e.to_string()).into()
}

/// Train and test configs derived from one base config and seed.
pub fn split_configs(base: &DatasetConfig, num_train: usize, num_test: usize) -> (DatasetConfig, DatasetConfig) {
    (base.split("train", num_train), base.split("test", num_test))
}

#[derive(Serialize)]
struct SplitSummary<'a> {
    split: &'a str,
    path: String,
    stats: &'a DatasetStats,
}

pub fn generate(a: &GenerateArgs) -> Result<u8> {
    let file = ConfigFile::load_optional(a.config.as_deref())?;
    file.check_keys(&["w", "p_edge", "num_graphs", "num_test", "n_min", "n_max", "seed"])?;
    let (train_default, test_default) = if a.paper_scale {
        (PAPER_TRAIN_GRAPHS, PAPER_TEST_GRAPHS)
    } else {
        (DESK_TRAIN_GRAPHS, DESK_TEST_GRAPHS)
    };
    let base = DatasetConfig {
        num_graphs: 0,
        n_min: file.resolve("n_min", a.n_min, 30)?,
        n_max: file.resolve("n_max", a.n_max, 70)?,
        p_edge: file.resolve("p_edge", a.p_edge, 0.3)?,
        weight_bound: file.resolve("w", a.w, 1)?,
        seed: file.resolve("seed", a.seed, 0)?,
    };
    let num_train = file.resolve("num_graphs", a.num_graphs, train_default)?;
    let num_test = file.resolve("num_test", a.num_test, test_default)?;
    let (train_cfg, test_cfg) = split_configs(&base, num_train, num_test);
    train_cfg.validate().map_err(usage)?;
    test_cfg.validate().map_err(usage)?;

    let paths = [
        a.out.join(Split::Train.file_name()),
        a.out.join(Split::Test.file_name()),
    ];
    if !a.force {
        if let Some(p) = paths.iter().find(|p| p.exists()) {
            bail!("{} already exists; pass --force to overwrite", p.display());
        }
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for ((cfg, path), name) in [train_cfg, test_cfg].iter().zip(&paths).zip(["train", "test"]) {
        let data = generate_dataset(cfg)?;
        save_dataset(path, &data).with_context(|| format!("writing {}", path.display()))?;
        print_json(&SplitSummary {
            split: name,
            path: path.display().to_string(),
            stats: &data.stats,
        })?;
    }
    Ok(EXIT_OK)
}

/// A trained and evaluated model.
pub struct CellOutcome {
    pub params: LayerParams,
    pub history: Vec<EpochRecord>,
    pub metrics: Metrics,
    pub train_time_s: f64,
}

/// Trains on `train_set`, evaluates on `test_set` and saves the model
/// (`model.json`, `params.bin`, `history.csv`, `metrics.json`) in `dir`.
pub fn train_and_save(
    spec: &ModelSpec,
    cfg: &TrainConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    dir: &Path,
) -> Result<CellOutcome> {
    let start = Instant::now();
    let outcome = train::train(spec, &train_set.graphs, cfg)?;
    let train_time_s = start.elapsed().as_secs_f64();
    let metrics = evaluate(spec, &outcome.params, &test_set.graphs)?;
    let model = ModelFile {
        format_version: MODEL_FORMAT_VERSION,
        spec: spec.clone(),
        train: Some(cfg.clone()),
        dataset: Some(train_set.config.clone()),
        build_id: BUILD_ID.to_string(),
    };
    save_model(dir, &model, &outcome.params)?;
    write_history_csv(&outcome.history, BufWriter::new(File::create(dir.join("history.csv"))?))?;
    std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&metrics)? + "\n")?;
    Ok(CellOutcome {
        params: outcome.params,
        history: outcome.history,
        metrics,
        train_time_s,
    })
}

/// One training run as written to `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub model: String,
    #[serde(rename = "W")]
    pub w: i64,
    pub p_edge: f64,
    pub seed: u64,
    pub balanced_accuracy: f64,
    pub averaging: Averaging,
    pub metrics: Metrics,
    pub runtime: RuntimeStats,
    pub pos_fraction: f64,
    pub train_time_s: f64,
    pub final_loss: Option<f64>,
    pub build_id: String,
    pub timestamp_s: u64,
}

impl RunReport {
    pub fn row(&self) -> ResultRow {
        ResultRow {
            model: self.model.clone(),
            w: self.w,
            p_edge: self.p_edge,
            seed: self.seed,
            balanced_accuracy: self.balanced_accuracy,
            runtime_mean_s: self.runtime.mean_s,
            runtime_std_s: self.runtime.std_s,
            pos_fraction: self.pos_fraction,
        }
    }
}

pub fn train(a: &TrainArgs) -> Result<u8> {
    let file = ConfigFile::load_optional(a.config.as_deref())?;
    let extra = ["averaging", "bench_runs", "bench_warmup"];
    file.check_keys(&[MODEL_KEYS, TRAIN_KEYS, &extra].concat())?;
    let train_set = load_split(&a.dataset, Split::Train)?;
    let test_set = load_split(&a.dataset, Split::Test)?;
    let spec = a.model.resolve(&file, None, train_set.config.weight_bound)?;
    let seed = file.resolve("seed", a.seed, 0)?;
    let cfg = a.train.resolve(&file, seed, &desk_train_defaults())?;
    let averaging =
        parse_averaging(&file.resolve("averaging", a.averaging.clone(), "micro".to_string())?).map_err(usage)?;
    let runs = file.resolve("bench_runs", a.bench_runs, 5)?;
    let warmup = file.resolve("bench_warmup", a.bench_warmup, 1)?;
    if runs == 0 {
        return Err(usage("bench_runs must be >= 1"));
    }
    if a.out.join("params.bin").exists() && !a.force {
        bail!("{} already holds a model; pass --force to overwrite", a.out.display());
    }

    let cell = train_and_save(&spec, &cfg, &train_set, &test_set, &a.out)?;
    let runtime = bench_inference(&spec, &cell.params, &test_set.graphs, runs, warmup)?;
    let report = RunReport {
        model: spec.kind.name().to_string(),
        w: train_set.config.weight_bound,
        p_edge: train_set.config.p_edge,
        seed,
        balanced_accuracy: cell.metrics.score(averaging),
        averaging,
        metrics: cell.metrics,
        runtime,
        pos_fraction: test_set.stats.pos_fraction,
        train_time_s: cell.train_time_s,
        final_loss: cell.history.last().map(|r| r.loss),
        build_id: BUILD_ID.to_string(),
        timestamp_s: unix_time_s(),
    };
    std::fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let results = a.results.clone().unwrap_or_else(|| a.out.join("results.csv"));
    append_result(&results, &report.row())?;
    print_json(&report)?;
    Ok(EXIT_OK)
}

pub fn eval(a: &EvalArgs) -> Result<u8> {
    let (model, params) = load_model(&a.model_dir)?;
    let data = load_split(&a.dataset, a.split)?;
    let metrics = evaluate(&model.spec, &params, &data.graphs)?;
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&metrics)? + "\n")?;
    }
    print_json(&metrics)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BenchReport<'a> {
    model: &'a str,
    dataset: String,
    runtime: &'a RuntimeStats,
    balanced_accuracy: f64,
}

pub fn bench(a: &BenchArgs) -> Result<u8> {
    let file = ConfigFile::load_optional(a.config.as_deref())?;
    file.check_keys(&[MODEL_KEYS, &["seed", "runs", "warmup"]].concat())?;
    let data = load_split(&a.dataset, a.split)?;
    let (spec, params) = match &a.model_dir {
        Some(dir) => {
            let (m, p) = load_model(dir)?;
            (m.spec, p)
        }
        None => {
            let spec = a.model.resolve(&file, None, data.config.weight_bound)?;
            let seed = file.resolve("seed", a.seed, 0)?;
            let params = init_params(&spec, &mut rng_for(seed, "init"));
            (spec, params)
        }
    };
    let runs = file.resolve("runs", a.runs, 10)?;
    let warmup = file.resolve("warmup", a.warmup, 2)?;
    let runtime = bench_inference(&spec, &params, &data.graphs, runs, warmup).map_err(|e| match e {
        train::TrainError::InvalidConfig(m) => usage(m),
        other => other.into(),
    })?;
    let metrics = evaluate(&spec, &params, &data.graphs)?;
    if let Some(path) = &a.results {
        let seed = a.seed.or(file.get("seed")?).unwrap_or(0);
        append_result(
            path,
            &ResultRow {
                model: spec.kind.name().to_string(),
                w: data.config.weight_bound,
                p_edge: data.config.p_edge,
                seed,
                balanced_accuracy: metrics.balanced_accuracy,
                runtime_mean_s: runtime.mean_s,
                runtime_std_s: runtime.std_s,
                pos_fraction: data.stats.pos_fraction,
            },
        )?;
    }
    print_json(&BenchReport {
        model: spec.kind.name(),
        dataset: split_path(&a.dataset, a.split).display().to_string(),
        runtime: &runtime,
        balanced_accuracy: metrics.balanced_accuracy,
    })?;
    Ok(EXIT_OK)
}

/// Agreement of the closed-form solution with the catalyst labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnalyticReport {
    pub variant: String,
    pub graphs: usize,
    pub nodes: usize,
    pub mismatches: usize,
    /// Prediction (positive) against label (positive).
    pub confusion: Confusion,
    pub mismatched_catalysts: usize,
    /// Mismatched catalysts with two or more neighbors whose weight differs
    /// from the neighborhood sum.
    pub mismatched_catalysts_two_plus_nonmatching: usize,
    pub isolated_nodes: usize,
}

pub fn analytic_check(graphs: &[LabeledGraph], variant: Aggregator) -> Result<AnalyticReport> {
    let (spec, params) = analytic_sinc_params(variant);
    let mut report = AnalyticReport {
        variant: variant.name().to_string(),
        graphs: graphs.len(),
        ..Default::default()
    };
    let mut offset = 0;
    for batch in make_batches(graphs, &spec, 256)? {
        let z = predict_logits(&spec, &params, &batch.graph.graph, &batch.features)?;
        for k in 0..batch.graph.num_graphs() {
            let lg = &graphs[offset + k];
            let base = batch.graph.node_range(k).start;
            for u in 0..lg.graph.num_nodes() {
                let predicted = z.get(base + u, 0) > 0.0;
                let actual = lg.labels[u] == 1;
                report.confusion.record(predicted, actual);
                let nbrs = lg.graph.neighbors(u);
                if nbrs.is_empty() {
                    report.isolated_nodes += 1;
                }
                if predicted != actual {
                    report.mismatches += 1;
                    if actual {
                        report.mismatched_catalysts += 1;
                        let sum: i64 = nbrs.iter().map(|&v| lg.weights[v]).sum();
                        if nbrs.iter().filter(|&&v| lg.weights[v] != sum).count() >= 2 {
                            report.mismatched_catalysts_two_plus_nonmatching += 1;
                        }
                    }
                }
            }
        }
        offset += batch.graph.num_graphs();
    }
    report.nodes = report.confusion.total();
    Ok(report)
}

pub fn verify_analytic(a: &VerifyArgs) -> Result<u8> {
    let graphs = match &a.dataset {
        Some(path) if path.is_dir() => {
            let mut g = load_split(path, Split::Train)?.graphs;
            g.extend(load_split(path, Split::Test)?.graphs);
            g
        }
        Some(path) => load_split(path, Split::Test)?.graphs,
        None => {
            let cfg = DatasetConfig {
                num_graphs: a.num_graphs,
                n_min: a.n_min,
                n_max: a.n_max,
                p_edge: a.p_edge,
                weight_bound: a.w,
                seed: a.seed,
            };
            cfg.validate().map_err(usage)?;
            generate_dataset(&cfg)?.graphs
        }
    };
    let mut failed = false;
    for variant in a.agg.aggregators() {
        let r = analytic_check(&graphs, variant)?;
        if variant == Aggregator::Max && r.mismatches > 0 {
            failed = true;
        }
        print_json(&r)?;
    }
    Ok(if failed { EXIT_CHECK } else { EXIT_OK })
}

pub fn report(a: &ReportArgs) -> Result<u8> {
    let rows = read_results(&a.results)?;
    if rows.is_empty() {
        bail!("{} has no result rows", a.results.display());
    }
    let md = render_markdown(&rows);
    match &a.out {
        Some(path) => std::fs::write(path, md).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{md}"),
    }
    Ok(EXIT_OK)
}
