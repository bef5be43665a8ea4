//! Resumable model x dataset x seed sweeps.
//!
//! Layout under `--out`:
//!
//! ```text
//! plan.json                 resolved plan
//! data/w1_p0.3/             one dataset directory per (W, p_edge)
//! runs/sinc-gcn_w1_p0.3_s0/ one model directory per cell
//! results.csv               one row per completed cell
//! failures.csv              cells that failed in the last invocation
//! results.md                tables rendered from results.csv
//! ```
//!
//! Cells already in `results.csv` are skipped. Training runs on `jobs`
//! threads; each cell is then benchmarked on its own, one at a time.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use sinc_core::layers::{ModelKind, ModelSpec};
use sinc_core::synth::{generate_dataset, save_dataset, Dataset, DatasetConfig};
use sinc_core::train::{bench_inference, Averaging, Metrics, TrainConfig};

use crate::commands::{
    split_configs, train_and_save, DESK_TEST_GRAPHS, DESK_TRAIN_GRAPHS, PAPER_EPOCHS, PAPER_TEST_GRAPHS,
    PAPER_TRAIN_GRAPHS,
};
use crate::config::ConfigFile;
use crate::results::{append_result, format_p, read_results, render_markdown, CellKey, ResultRow};
use crate::settings::{desk_train_defaults, parse_averaging, ModelFlags, MODEL_KEYS, TRAIN_KEYS};
use crate::store::{load_model, load_split, Split};
use crate::{SweepArgs, UsageError, EXIT_CHECK, EXIT_OK};

const PLAN_KEYS: &[&str] = &[
    "models",
    "w",
    "p_edge",
    "seeds",
    "num_train",
    "num_test",
    "n_min",
    "n_max",
    "data_seed",
    "jobs",
    "bench_runs",
    "bench_warmup",
    "averaging",
];

/// A fully resolved sweep.
#[derive(Debug, Clone, Serialize)]
pub struct Plan {
    pub models: Vec<ModelKind>,
    pub bounds: Vec<i64>,
    pub p_edges: Vec<f64>,
    pub seeds: Vec<u64>,
    pub num_train: usize,
    pub num_test: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub data_seed: u64,
    pub jobs: usize,
    pub bench_runs: usize,
    pub bench_warmup: usize,
    pub averaging: Averaging,
    pub train: TrainConfig,
    #[serde(skip)]
    model_flags: ModelFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub model: ModelKind,
    pub bound: i64,
    pub p_edge: f64,
    pub seed: u64,
}

impl Cell {
    pub fn key(&self) -> CellKey {
        CellKey::new(self.model.name(), self.bound, self.p_edge, self.seed)
    }
}

fn non_empty<T>(name: &str, v: Vec<T>) -> Result<Vec<T>> {
    if v.is_empty() {
        bail!(UsageError(format!("`{name}` lists nothing")));
    }
    Ok(v)
}

impl Plan {
    pub fn resolve(a: &SweepArgs) -> Result<Self> {
        let file = ConfigFile::load_optional(a.plan.as_deref())?;
        let model_keys: Vec<&str> = MODEL_KEYS.iter().copied().filter(|k| *k != "model").collect();
        let train_keys: Vec<&str> = TRAIN_KEYS.iter().copied().filter(|k| *k != "seed").collect();
        file.check_keys(&[PLAN_KEYS, &model_keys, &train_keys].concat())?;
        if a.model.model.is_some() {
            return Err(UsageError("sweep takes --models, not --model".into()).into());
        }

        let (num_train, num_test, mut defaults) = if a.paper_scale {
            let cfg = TrainConfig {
                epochs: PAPER_EPOCHS,
                ..desk_train_defaults()
            };
            (PAPER_TRAIN_GRAPHS, PAPER_TEST_GRAPHS, cfg)
        } else {
            (DESK_TRAIN_GRAPHS, DESK_TEST_GRAPHS, desk_train_defaults())
        };
        defaults = a.train.resolve(&file, 0, &defaults)?;

        let mf = &a.model;
        let model_flags = ModelFlags {
            model: None,
            encoding: Some(file.resolve("encoding", mf.encoding.clone(), "scalar".into())?),
            agg: Some(file.resolve("agg", mf.agg, sinc_core::numerics::Aggregator::Sum)?),
            ctx_agg: Some(file.resolve("ctx_agg", mf.ctx_agg, sinc_core::numerics::Aggregator::Sum)?),
            activation: Some(file.resolve("activation", mf.activation, sinc_core::numerics::Activation::Relu)?),
            hidden: Some(file.resolve("hidden", mf.hidden, 16)?),
            learn_eps: Some(file.resolve("learn_eps", mf.learn_eps, false)?),
        };
        let averaging_name = file.resolve("averaging", None, "micro".to_string())?;
        let plan = Plan {
            models: non_empty(
                "models",
                file.resolve_list("models", a.models.clone(), ModelKind::ALL.to_vec())?,
            )?,
            bounds: non_empty("w", file.resolve_list("w", a.w.clone(), vec![1, 2, 3])?)?,
            p_edges: non_empty(
                "p_edge",
                file.resolve_list("p_edge", a.p_edge.clone(), vec![0.3, 0.5, 0.7])?,
            )?,
            seeds: non_empty("seeds", file.resolve_list("seeds", a.seeds.clone(), (0..5).collect())?)?,
            num_train: file.resolve("num_train", a.num_train, num_train)?,
            num_test: file.resolve("num_test", a.num_test, num_test)?,
            n_min: file.get("n_min")?.unwrap_or(30),
            n_max: file.get("n_max")?.unwrap_or(70),
            data_seed: file.get("data_seed")?.unwrap_or(0),
            jobs: file.resolve("jobs", a.jobs, 1)?.max(1),
            bench_runs: file.get("bench_runs")?.unwrap_or(5),
            bench_warmup: file.get("bench_warmup")?.unwrap_or(1),
            averaging: parse_averaging(&averaging_name).map_err(UsageError)?,
            train: defaults,
            model_flags,
        };
        if plan.bench_runs == 0 {
            return Err(UsageError("bench_runs must be >= 1".into()).into());
        }
        for &bound in &plan.bounds {
            for &p in &plan.p_edges {
                let (tr, te) = split_configs(&plan.dataset_base(bound, p), plan.num_train, plan.num_test);
                tr.validate().map_err(|e| UsageError(e.to_string()))?;
                te.validate().map_err(|e| UsageError(e.to_string()))?;
            }
            for &kind in &plan.models {
                plan.spec(kind, bound)?;
            }
        }
        Ok(plan)
    }

    /// Cells in row-major order: dataset config, then model, then seed.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &bound in &self.bounds {
            for &p_edge in &self.p_edges {
                for &model in &self.models {
                    for &seed in &self.seeds {
                        out.push(Cell {
                            model,
                            bound,
                            p_edge,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn spec(&self, kind: ModelKind, bound: i64) -> Result<ModelSpec> {
        self.model_flags.resolve_kind(&ConfigFile::default(), kind, bound)
    }

    pub fn dataset_base(&self, bound: i64, p_edge: f64) -> DatasetConfig {
        DatasetConfig {
            num_graphs: 0,
            n_min: self.n_min,
            n_max: self.n_max,
            p_edge,
            weight_bound: bound,
            seed: self.data_seed,
        }
    }
}

/// Loads the split at `dir`, generating it first if absent.
fn ensure_split(dir: &Path, split: Split, cfg: &DatasetConfig) -> Result<Dataset> {
    let path = dir.join(split.file_name());
    if path.exists() {
        let data = load_split(dir, split)?;
        if data.config != *cfg {
            bail!(
                "{} was generated with a different config ({:?}); use a fresh --out",
                path.display(),
                data.config
            );
        }
        return Ok(data);
    }
    std::fs::create_dir_all(dir)?;
    let data = generate_dataset(cfg)?;
    save_dataset(&path, &data).with_context(|| format!("writing {}", path.display()))?;
    Ok(data)
}

#[derive(Serialize)]
struct Summary {
    cells: usize,
    already_done: usize,
    completed: usize,
    failed: usize,
    results: String,
    report: String,
}

pub fn sweep(a: &SweepArgs) -> Result<u8> {
    let plan = Plan::resolve(a)?;
    let out = &a.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("plan.json"), serde_json::to_string_pretty(&plan)? + "\n")?;
    let results_path = out.join("results.csv");
    let done: HashSet<CellKey> = read_results(&results_path)?.iter().map(ResultRow::key).collect();
    let cells = plan.cells();
    let pending: Vec<&Cell> = cells.iter().filter(|c| !done.contains(&c.key())).collect();

    let mut data: BTreeMap<(i64, String), (Dataset, Dataset)> = BTreeMap::new();
    for c in &pending {
        let key = (c.bound, format_p(c.p_edge));
        if data.contains_key(&key) {
            continue;
        }
        let dir = out.join("data").join(format!("w{}_p{}", c.bound, format_p(c.p_edge)));
        let (tr, te) = split_configs(&plan.dataset_base(c.bound, c.p_edge), plan.num_train, plan.num_test);
        data.insert(
            key,
            (
                ensure_split(&dir, Split::Train, &tr)?,
                ensure_split(&dir, Split::Test, &te)?,
            ),
        );
    }
    let datasets = |c: &Cell| &data[&(c.bound, format_p(c.p_edge))];
    let run_dir = |c: &Cell| -> PathBuf { out.join("runs").join(c.key().slug()) };

    let pool = rayon::ThreadPoolBuilder::new().num_threads(plan.jobs).build()?;
    let total = pending.len();
    let trained: Vec<(&Cell, Result<()>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&c| {
                let dir = run_dir(c);
                if dir.join("metrics.json").exists() {
                    return (c, Ok(()));
                }
                let (tr, te) = datasets(c);
                let r = plan
                    .spec(c.model, c.bound)
                    .and_then(|spec| {
                        let cfg = TrainConfig {
                            seed: c.seed,
                            ..plan.train.clone()
                        };
                        train_and_save(&spec, &cfg, tr, te, &dir)
                    })
                    .map(|cell| {
                        eprintln!(
                            "trained {} in {:.1}s: balanced accuracy {:.4}",
                            c.key().slug(),
                            cell.train_time_s,
                            cell.metrics.score(plan.averaging)
                        );
                    });
                (c, r)
            })
            .collect()
    });

    let mut failures: Vec<(CellKey, String)> = Vec::new();
    let mut completed = 0;
    for (c, trained) in trained {
        let r = trained.and_then(|()| {
            let dir = run_dir(c);
            let (_, te) = datasets(c);
            let (model, params) = load_model(&dir)?;
            let text = std::fs::read_to_string(dir.join("metrics.json"))?;
            let metrics: Metrics = serde_json::from_str(&text)?;
            let runtime = bench_inference(&model.spec, &params, &te.graphs, plan.bench_runs, plan.bench_warmup)?;
            append_result(
                &results_path,
                &ResultRow {
                    model: c.model.name().to_string(),
                    w: c.bound,
                    p_edge: c.p_edge,
                    seed: c.seed,
                    balanced_accuracy: metrics.score(plan.averaging),
                    runtime_mean_s: runtime.mean_s,
                    runtime_std_s: runtime.std_s,
                    pos_fraction: te.stats.pos_fraction,
                },
            )
        });
        match r {
            Ok(()) => completed += 1,
            Err(e) => {
                eprintln!("cell {} failed: {e:#}", c.key().slug());
                failures.push((c.key(), format!("{e:#}")));
            }
        }
    }
    debug_assert_eq!(completed + failures.len(), total);

    let failures_path = out.join("failures.csv");
    if failures.is_empty() {
        if failures_path.exists() {
            std::fs::remove_file(&failures_path)?;
        }
    } else {
        let mut w = csv::Writer::from_path(&failures_path)?;
        w.write_record(["model", "W", "p_edge", "seed", "error"])?;
        for (k, e) in &failures {
            w.write_record([
                k.model.clone(),
                k.w.to_string(),
                k.p_edge.clone(),
                k.seed.to_string(),
                e.clone(),
            ])?;
        }
        w.flush()?;
    }

    let rows = read_results(&results_path)?;
    let report_path = out.join("results.md");
    if !rows.is_empty() {
        std::fs::write(&report_path, render_markdown(&rows))?;
    }
    println!(
        "{}",
        serde_json::to_string(&Summary {
            cells: cells.len(),
            already_done: cells.len() - total,
            completed,
            failed: failures.len(),
            results: results_path.display().to_string(),
            report: report_path.display().to_string(),
        })?
    );
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_CHECK })
}
