//! Command-line driver for the UniqueSignature benchmark: dataset
//! generation, training, evaluation, benchmarking, sweeps and reports.

pub mod commands;
pub mod config;
pub mod results;
pub mod settings;
pub mod store;
pub mod sweep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sinc_core::numerics::Aggregator;

use settings::{ModelFlags, TrainFlags};

/// Exit status of a command that ran to completion.
pub const EXIT_OK: u8 = 0;
/// I/O, data or numerical failure.
pub const EXIT_ERROR: u8 = 1;
/// Invalid flags or config values.
pub const EXIT_USAGE: u8 = 2;
/// The command ran but a check failed: failed sweep cells or analytic mismatches.
pub const EXIT_CHECK: u8 = 3;

/// Git description of the source tree at build time.
pub const BUILD_ID: &str = env!("SINC_BUILD_ID");

/// An error in user input, reported with [`EXIT_USAGE`].
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit code for an error returned by [`run`].
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<UsageError>()) {
        EXIT_USAGE
    } else {
        EXIT_ERROR
    }
}

#[derive(Debug, Parser)]
#[command(name = "sinc", version = BUILD_ID, about = "UniqueSignature benchmark for neighborhood-contextualized GNNs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate train and test splits of a dataset.
    Generate(GenerateArgs),
    /// Train a model, evaluate it on the test split and save it.
    Train(TrainArgs),
    /// Evaluate a saved model.
    Eval(EvalArgs),
    /// Time inference over a dataset split.
    Bench(BenchArgs),
    /// Run a model x dataset x seed grid, resumably.
    Sweep(SweepArgs),
    /// Check the closed-form SINC-GCN solution against the labels.
    VerifyAnalytic(VerifyArgs),
    /// Render results.csv as Markdown tables.
    Report(ReportArgs),
}

pub fn probability(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("{p} is not a probability in [0, 1]"))
    }
}

fn positive_bound(s: &str) -> Result<i64, String> {
    let w: i64 = s.parse().map_err(|e| format!("{e}"))?;
    if w >= 1 {
        Ok(w)
    } else {
        Err(format!("weight bound must be >= 1, got {w}"))
    }
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    /// Key/value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Node weights are drawn from [-W, W].
    #[arg(long, value_parser = positive_bound)]
    pub w: Option<i64>,
    /// Erdos-Renyi edge probability.
    #[arg(long, value_parser = probability)]
    pub p_edge: Option<f64>,
    /// Training graphs (1000, or 4000 with --paper-scale).
    #[arg(long)]
    pub num_graphs: Option<usize>,
    /// Test graphs (500, or 1000 with --paper-scale).
    #[arg(long)]
    pub num_test: Option<usize>,
    #[arg(long)]
    pub n_min: Option<usize>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paper_scale: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite existing split files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (or a single JSONL file used for both splits).
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Seeds initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// micro (pool nodes) or macro (average per-graph scores).
    #[arg(long)]
    pub averaging: Option<String>,
    /// Timed inference passes over the test split.
    #[arg(long)]
    pub bench_runs: Option<usize>,
    #[arg(long)]
    pub bench_warmup: Option<usize>,
    /// Model output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// results.csv to append to (default OUT/results.csv).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Overwrite an existing model in OUT.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model_dir: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// train or test.
    #[arg(long, default_value = "test")]
    pub split: store::Split,
    /// Write the metrics JSON here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory written by `train`; without it a freshly initialized model is timed.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Initialization seed when no model directory is given.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: store::Split,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    /// results.csv to append a row to.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Key/value plan file.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// 4000 train / 1000 test graphs and 500 epochs.
    #[arg(long)]
    pub paper_scale: bool,
    /// Cells trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated model names.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<sinc_core::layers::ModelKind>>,
    /// Comma-separated weight bounds.
    #[arg(long, value_delimiter = ',')]
    pub w: Option<Vec<i64>>,
    /// Comma-separated edge probabilities.
    #[arg(long, value_delimiter = ',')]
    pub p_edge: Option<Vec<f64>>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub num_train: Option<usize>,
    #[arg(long)]
    pub num_test: Option<usize>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory; rerunning with the same directory resumes.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AnalyticVariant {
    Sum,
    Max,
    Both,
}

impl AnalyticVariant {
    pub fn aggregators(self) -> Vec<Aggregator> {
        match self {
            AnalyticVariant::Sum => vec![Aggregator::Sum],
            AnalyticVariant::Max => vec![Aggregator::Max],
            AnalyticVariant::Both => vec![Aggregator::Max, Aggregator::Sum],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, value_parser = positive_bound, default_value_t = 1)]
    pub w: i64,
    #[arg(long, value_parser = probability, default_value_t = 0.3)]
    pub p_edge: f64,
    #[arg(long, default_value_t = 1000)]
    pub num_graphs: usize,
    #[arg(long, default_value_t = 30)]
    pub n_min: usize,
    #[arg(long, default_value_t = 70)]
    pub n_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Verify an existing JSONL file instead of generating graphs.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AnalyticVariant::Both)]
    pub agg: AnalyticVariant,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Write the Markdown here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Runs one command and returns its exit status.
pub fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Sweep(a) => sweep::sweep(&a),
        Command::VerifyAnalytic(a) => commands::verify_analytic(&a),
        Command::Report(a) => commands::report(&a),
    }
}
