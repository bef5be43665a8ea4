//! Model and training options shared by several subcommands.

use clap::Args;
use sinc_core::layers::{Encoding, ModelKind, ModelSpec};
use sinc_core::numerics::{Activation, Aggregator};
use sinc_core::train::{Averaging, PosWeight, TrainConfig};

use crate::config::ConfigFile;
use crate::UsageError;

pub const MODEL_KEYS: &[&str] = &[
    "model",
    "encoding",
    "agg",
    "ctx_agg",
    "activation",
    "hidden",
    "learn_eps",
];
pub const TRAIN_KEYS: &[&str] = &["epochs", "lr", "batch_size", "weight_decay", "pos_weight", "seed"];

#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// gcn, graphsage, gin, gatv2, sir-gcn, sinc-gcn or multi-agg.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Node feature encoding: scalar or one-hot.
    #[arg(long)]
    pub encoding: Option<String>,
    /// SINC-GCN message aggregator.
    #[arg(long)]
    pub agg: Option<Aggregator>,
    /// SINC-GCN context aggregator.
    #[arg(long)]
    pub ctx_agg: Option<Aggregator>,
    /// Per-arc activation of SIR-GCN and SINC-GCN.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// Hidden and output width of the layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Train GIN's epsilon.
    #[arg(long)]
    pub learn_eps: Option<bool>,
}

impl ModelFlags {
    /// Builds the spec; `bound` sizes the one-hot encoding.
    pub fn resolve(
        &self,
        file: &ConfigFile,
        default_model: Option<ModelKind>,
        bound: i64,
    ) -> anyhow::Result<ModelSpec> {
        let kind = match self.model.or(file.get("model")?).or(default_model) {
            Some(k) => k,
            None => return Err(UsageError("--model is required".into()).into()),
        };
        self.resolve_kind(file, kind, bound)
    }

    /// Builds the spec for `kind`, ignoring any `model` setting.
    pub fn resolve_kind(&self, file: &ConfigFile, kind: ModelKind, bound: i64) -> anyhow::Result<ModelSpec> {
        let encoding_name: String = file.resolve("encoding", self.encoding.clone(), "scalar".into())?;
        let encoding = Encoding::parse(&encoding_name, bound).map_err(|e| UsageError(e.to_string()))?;
        let hidden: usize = file.resolve("hidden", self.hidden, 16)?;
        if hidden == 0 {
            return Err(UsageError("hidden width must be positive".into()).into());
        }
        let spec = ModelSpec {
            d_hidden: hidden,
            d_out: hidden,
            agg: file.resolve("agg", self.agg, Aggregator::Sum)?,
            ctx_agg: file.resolve("ctx_agg", self.ctx_agg, Aggregator::Sum)?,
            activation: file.resolve("activation", self.activation, Activation::Relu)?,
            learn_eps: file.resolve("learn_eps", self.learn_eps, false)?,
            ..ModelSpec::new(kind, encoding)
        };
        spec.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Graphs per batch.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// AdamW decoupled weight decay.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Positive-class loss weight: auto or none.
    #[arg(long)]
    pub pos_weight: Option<String>,
}

pub fn parse_pos_weight(s: &str) -> Result<PosWeight, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "auto" => Ok(PosWeight::Auto),
        "none" | "off" => Ok(PosWeight::None),
        other => Err(format!("unknown pos weight `{other}` (valid: auto, none)")),
    }
}

pub fn parse_averaging(s: &str) -> Result<Averaging, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "micro" | "pooled" => Ok(Averaging::Micro),
        "macro" | "per_graph" | "per-graph" => Ok(Averaging::Macro),
        other => Err(format!("unknown averaging `{other}` (valid: micro, macro)")),
    }
}

impl TrainFlags {
    /// `defaults` supplies the epoch count when neither flag nor file sets it.
    pub fn resolve(&self, file: &ConfigFile, seed: u64, defaults: &TrainConfig) -> anyhow::Result<TrainConfig> {
        let pos_name: String = file.resolve("pos_weight", self.pos_weight.clone(), "auto".into())?;
        let mut cfg = TrainConfig {
            epochs: file.resolve("epochs", self.epochs, defaults.epochs)?,
            learning_rate: file.resolve("lr", self.lr, defaults.learning_rate)?,
            batch_size: file.resolve("batch_size", self.batch_size, defaults.batch_size)?,
            pos_weight: parse_pos_weight(&pos_name).map_err(UsageError)?,
            seed,
            ..defaults.clone()
        };
        cfg.adamw.weight_decay = file.resolve("weight_decay", self.weight_decay, defaults.adamw.weight_decay)?;
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

/// Desk scale: 200 epochs; the remaining settings follow the benchmark.
pub fn desk_train_defaults() -> TrainConfig {
    TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    }
}
