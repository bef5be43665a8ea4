//! Training, evaluation and inference benchmarking.

mod metrics;
mod optim;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BatchedGraph, GraphError};
use crate::layers::{self, check_params, encode_features, init_params, LayerError, LayerParams, ModelSpec};
use crate::numerics::{NumericsError, Tape, Tensor};
use crate::seeding::rng_for;
use crate::synth::LabeledGraph;

pub use metrics::{Averaging, Confusion, Metrics};
pub use optim::{AdamW, AdamWConfig, Plateau, PlateauConfig};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error("gradient for `{name}` has shape {grad:?}, parameter is {param:?}")]
    GradShape {
        name: String,
        param: (usize, usize),
        grad: (usize, usize),
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosWeight {
    None,
    /// `(1 - pi) / pi` for the training positive fraction `pi`.
    Auto,
}

impl PosWeight {
    pub fn resolve(self, graphs: &[LabeledGraph]) -> f64 {
        match self {
            PosWeight::None => 1.0,
            PosWeight::Auto => {
                let (pos, total) = graphs.iter().fold((0usize, 0usize), |(p, t), g| {
                    (p + g.labels.iter().filter(|&&y| y == 1).count(), t + g.labels.len())
                });
                if pos == 0 || pos == total {
                    1.0
                } else {
                    (total - pos) as f64 / pos as f64
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adamw: AdamWConfig,
    pub plateau: PlateauConfig,
    pub pos_weight: PosWeight,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 1e-3,
            batch_size: 256,
            adamw: AdamWConfig::default(),
            plateau: PlateauConfig::default(),
            pos_weight: PosWeight::Auto,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.adamw.weight_decay.is_nan() || self.adamw.weight_decay < 0.0 {
            return Err(TrainError::InvalidConfig("weight decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Disjoint union of graphs with stacked features and labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graph: BatchedGraph,
    pub features: Tensor,
    pub labels: Vec<u8>,
    pub targets: Vec<f64>,
}

impl Batch {
    pub fn new(graphs: &[&LabeledGraph], spec: &ModelSpec) -> Result<Self, TrainError> {
        let graph = BatchedGraph::new(graphs.iter().map(|g| &g.graph))?;
        let weights: Vec<i64> = graphs.iter().flat_map(|g| g.weights.iter().copied()).collect();
        let labels: Vec<u8> = graphs.iter().flat_map(|g| g.labels.iter().copied()).collect();
        let features = encode_features(&weights, spec.encoding)?;
        let targets = labels.iter().map(|&y| f64::from(y)).collect();
        Ok(Self {
            graph,
            features,
            labels,
            targets,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }
}

/// Consecutive batches of at most `batch_size` graphs.
pub fn make_batches(graphs: &[LabeledGraph], spec: &ModelSpec, batch_size: usize) -> Result<Vec<Batch>, TrainError> {
    graphs
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::new(&chunk.iter().collect::<Vec<_>>(), spec))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Node-weighted mean training loss.
    pub loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LayerParams,
    pub history: Vec<EpochRecord>,
}

/// Loss and parameter gradients for one batch.
pub fn loss_and_grads(
    spec: &ModelSpec,
    params: &LayerParams,
    batch: &Batch,
    pos_weight: f64,
) -> Result<(f64, LayerParams), TrainError> {
    let mut tape = Tape::new();
    let frozen = spec.frozen();
    let bound = params.bind(&mut tape, frozen);
    let x = tape.constant(batch.features.clone());
    let z = layers::logits(spec, &mut tape, &bound, &batch.graph.graph, x)?;
    let loss = tape.bce_with_logits(z, &batch.targets, pos_weight)?;
    tape.backward(loss)?;
    let mut grads = LayerParams::new();
    for (name, var) in bound.iter() {
        if frozen.contains(&name) {
            continue;
        }
        let g = tape
            .grad(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(var).0, tape.shape(var).1));
        grads.insert(name, g);
    }
    Ok((tape.value(loss).get(0, 0), grads))
}

/// Trains from a seeded initialization.
pub fn train(spec: &ModelSpec, graphs: &[LabeledGraph], cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let params = init_params(spec, &mut rng_for(cfg.seed, "init"));
    train_from(spec, params, graphs, cfg)
}

/// Trains starting from `params`. Graph order is reshuffled every epoch and
/// the final-epoch parameters are returned.
pub fn train_from(
    spec: &ModelSpec,
    mut params: LayerParams,
    graphs: &[LabeledGraph],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if graphs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    cfg.validate()?;
    spec.validate()?;
    check_params(spec, &params)?;
    let pos_weight = cfg.pos_weight.resolve(graphs);
    let mut opt = AdamW::new(cfg.adamw);
    let mut sched = Plateau::new(cfg.plateau, cfg.learning_rate);
    let mut rng = rng_for(cfg.seed, "shuffle");
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let lr = sched.lr();
        let (mut total, mut nodes) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let members: Vec<&LabeledGraph> = chunk.iter().map(|&i| &graphs[i]).collect();
            let batch = Batch::new(&members, spec)?;
            let (loss, grads) = loss_and_grads(spec, &params, &batch, pos_weight)?;
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            opt.step(&mut params, &grads, lr)?;
            total += loss * batch.num_nodes() as f64;
            nodes += batch.num_nodes();
        }
        let loss = total / nodes.max(1) as f64;
        history.push(EpochRecord { epoch, loss, lr });
        sched.update(loss);
    }
    Ok(TrainOutcome { params, history })
}

/// Thresholds logits at 0 and pools confusion counts over all nodes.
pub fn evaluate(spec: &ModelSpec, params: &LayerParams, graphs: &[LabeledGraph]) -> Result<Metrics, TrainError> {
    let mut per_graph = Vec::with_capacity(graphs.len());
    for batch in make_batches(graphs, spec, 256)? {
        let z = layers::predict_logits(spec, params, &batch.graph.graph, &batch.features)?;
        for k in 0..batch.graph.num_graphs() {
            let mut c = Confusion::default();
            for u in batch.graph.node_range(k) {
                c.record(z.get(u, 0) > 0.0, batch.labels[u] == 1);
            }
            per_graph.push(c);
        }
    }
    Ok(Metrics::from_graphs(&per_graph))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    /// Seconds per timed run over the full dataset.
    pub runs_s: Vec<f64>,
    pub mean_s: f64,
    /// Population standard deviation.
    pub std_s: f64,
}

impl RuntimeStats {
    pub fn from_runs(runs_s: Vec<f64>) -> Self {
        let n = runs_s.len().max(1) as f64;
        let mean_s = runs_s.iter().sum::<f64>() / n;
        let var = runs_s.iter().map(|t| (t - mean_s).powi(2)).sum::<f64>() / n;
        Self {
            runs_s,
            mean_s,
            std_s: var.sqrt(),
        }
    }
}

/// Times inference-only forwards over `graphs`, batched once up front.
pub fn bench_inference(
    spec: &ModelSpec,
    params: &LayerParams,
    graphs: &[LabeledGraph],
    runs: usize,
    warmup: usize,
) -> Result<RuntimeStats, TrainError> {
    if runs == 0 {
        return Err(TrainError::InvalidConfig("runs must be >= 1".into()));
    }
    check_params(spec, params)?;
    let batches = make_batches(graphs, spec, 256)?;
    let pass = || -> Result<f64, TrainError> {
        let mut checksum = 0.0;
        for batch in &batches {
            let z = layers::predict_logits(spec, params, &batch.graph.graph, &batch.features)?;
            checksum += z.get(0, 0);
        }
        Ok(checksum)
    };
    for _ in 0..warmup {
        std::hint::black_box(pass()?);
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(pass()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(RuntimeStats::from_runs(times))
}

/// `epoch,loss,lr` rows.
pub fn write_history_csv(history: &[EpochRecord], w: impl Write) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    for rec in history {
        out.serialize(rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{analytic_sinc_params, Encoding, ModelKind};
    use crate::numerics::Aggregator;
    use crate::synth::{generate_dataset, DatasetConfig};

    fn data(n: usize, seed: u64) -> Vec<LabeledGraph> {
        let cfg = DatasetConfig {
            num_graphs: n,
            n_min: 8,
            n_max: 14,
            p_edge: 0.3,
            weight_bound: 1,
            seed,
        };
        generate_dataset(&cfg).unwrap().graphs
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 1e-2,
            ..Default::default()
        }
    }

    #[test]
    fn analytic_params_need_no_training() {
        let (spec, params) = analytic_sinc_params(Aggregator::Max);
        let cfg = DatasetConfig {
            num_graphs: 30,
            n_min: 20,
            n_max: 30,
            p_edge: 0.5,
            weight_bound: 2,
            seed: 1,
        };
        let graphs = generate_dataset(&cfg).unwrap().graphs;
        assert!(graphs.iter().all(|g| g.graph.degrees().iter().all(|&d| d > 0)));
        let out = train_from(&spec, params.clone(), &graphs, &quick(0)).unwrap();
        assert_eq!(out.params, params);
        assert!(out.history.is_empty());
        let m = evaluate(&spec, &out.params, &graphs).unwrap();
        assert_eq!(m.balanced_accuracy, 1.0);
        assert_eq!(m.confusion.fp + m.confusion.fn_, 0);
    }

    #[test]
    fn analytic_params_call_isolated_nodes_positive() {
        // empty max is 0, the same value a matching neighbor produces
        let (spec, params) = analytic_sinc_params(Aggregator::Max);
        let g = crate::graph::Graph::new(3, &[(0, 1)]).unwrap();
        let weights = vec![1, 1, 0];
        let labels = crate::synth::label_catalysts(&g, &weights).unwrap();
        assert_eq!(labels, vec![1, 1, 0]);
        let graphs = vec![LabeledGraph {
            graph: g,
            weights,
            labels,
        }];
        let m = evaluate(&spec, &params, &graphs).unwrap();
        assert_eq!((m.confusion.tp, m.confusion.fp), (2, 1));
    }

    #[test]
    fn zero_lr_freezes_params() {
        let spec = ModelSpec::new(ModelKind::SincGcn, Encoding::Scalar);
        let graphs = data(20, 2);
        let mut cfg = quick(3);
        cfg.learning_rate = 0.0;
        cfg.adamw.weight_decay = 0.0;
        let init = init_params(&spec, &mut rng_for(cfg.seed, "init"));
        let out = train(&spec, &graphs, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.history.len(), 3);
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let graphs = data(24, 3);
        for kind in ModelKind::ALL {
            let spec = ModelSpec::new(kind, Encoding::Scalar);
            let a = train(&spec, &graphs, &quick(4)).unwrap();
            let b = train(&spec, &graphs, &quick(4)).unwrap();
            assert_eq!(a.params, b.params, "{kind}");
            assert_eq!(a.history, b.history);
            assert!(a.history.iter().all(|r| r.loss.is_finite()), "{kind}");
            let mut other = quick(4);
            other.seed = 9;
            assert_ne!(train(&spec, &graphs, &other).unwrap().params, a.params, "{kind}");
        }
    }

    #[test]
    fn sinc_loss_decreases() {
        let graphs = data(40, 4);
        let spec = ModelSpec::new(ModelKind::SincGcn, Encoding::Scalar);
        let out = train(&spec, &graphs, &quick(30)).unwrap();
        let first = out.history.first().unwrap().loss;
        let last = out.history.last().unwrap().loss;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn auto_pos_weight_balances_constant_predictors() {
        let graphs = data(10, 5);
        let pw = PosWeight::Auto.resolve(&graphs);
        let labels: Vec<f64> = graphs
            .iter()
            .flat_map(|g| g.labels.iter().map(|&y| f64::from(y)))
            .collect();
        let loss = |z: f64| {
            let mut tape = Tape::new();
            let v = tape.constant(Tensor::full(labels.len(), 1, z));
            let l = tape.bce_with_logits(v, &labels, pw).unwrap();
            tape.value(l).get(0, 0)
        };
        for z in [0.5, 3.0, 20.0] {
            assert!((loss(z) - loss(-z)).abs() < 1e-9);
        }
        assert_eq!(PosWeight::None.resolve(&graphs), 1.0);
    }

    #[test]
    fn evaluate_is_pure_and_counts_every_node() {
        let graphs = data(15, 6);
        let spec = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        let params = init_params(&spec, &mut rng_for(0, "init"));
        let a = evaluate(&spec, &params, &graphs).unwrap();
        let b = evaluate(&spec, &params, &graphs).unwrap();
        assert_eq!(a, b);
        let nodes: usize = graphs.iter().map(|g| g.labels.len()).sum();
        assert_eq!(a.confusion.total(), nodes);
    }

    #[test]
    fn bench_single_run() {
        let graphs = data(5, 7);
        let spec = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        let params = init_params(&spec, &mut rng_for(0, "init"));
        let stats = bench_inference(&spec, &params, &graphs, 1, 0).unwrap();
        assert_eq!(stats.runs_s.len(), 1);
        assert_eq!(stats.std_s, 0.0);
        assert!(bench_inference(&spec, &params, &graphs, 0, 0).is_err());
    }

    #[test]
    fn nan_loss_names_epoch_and_batch() {
        let graphs = data(20, 8);
        let spec = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        let mut params = init_params(&spec, &mut rng_for(0, "init"));
        params.insert("head.b", Tensor::scalar(f64::NAN));
        let err = train_from(&spec, params, &graphs, &quick(2)).unwrap_err();
        assert!(matches!(err, TrainError::NonFinite { epoch: 1, batch: 1, .. }));
        assert!(err.to_string().contains("epoch 1, batch 1"));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let spec = ModelSpec::new(ModelKind::Gcn, Encoding::Scalar);
        assert!(matches!(train(&spec, &[], &quick(1)), Err(TrainError::EmptyDataset)));
    }

    #[test]
    fn history_csv() {
        let hist = [EpochRecord {
            epoch: 1,
            loss: 0.5,
            lr: 1e-3,
        }];
        let mut buf = Vec::new();
        write_history_csv(&hist, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss,lr\n1,0.5,0.001\n");
    }
}
