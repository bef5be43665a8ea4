//! The UniqueSignature benchmark.
//!
//! Each graph is an Erdős–Rényi draw with integer node weights in
//! `[-W, W]`. A node is a *catalyst* (label 1) when one of its neighbors has
//! a weight equal to the sum of all its neighbors' weights.

mod io;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::seeding::derive_seed;

pub use io::{load_dataset, manifest_path, save_dataset, write_dataset, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} weights, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub num_graphs: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub p_edge: f64,
    pub weight_bound: i64,
    pub seed: u64,
}

impl DatasetConfig {
    /// 30 to 70 nodes per graph.
    pub fn standard(weight_bound: i64, p_edge: f64, num_graphs: usize, seed: u64) -> Self {
        Self {
            num_graphs,
            n_min: 30,
            n_max: 70,
            p_edge,
            weight_bound,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_min == 0 || self.n_min > self.n_max {
            return Err(SynthError::InvalidConfig(format!(
                "node bounds must satisfy 1 <= n_min <= n_max, got [{}, {}]",
                self.n_min, self.n_max
            )));
        }
        if !(self.p_edge > 0.0 && self.p_edge < 1.0) {
            return Err(SynthError::InvalidConfig(format!(
                "p_edge must lie in (0, 1), got {}",
                self.p_edge
            )));
        }
        if self.weight_bound < 1 {
            return Err(SynthError::InvalidConfig(format!(
                "weight bound must be >= 1, got {}",
                self.weight_bound
            )));
        }
        Ok(())
    }

    /// Copy of this config with the seed of the named split.
    pub fn split(&self, tag: &str, num_graphs: usize) -> Self {
        Self {
            num_graphs,
            seed: derive_seed(self.seed, tag),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub weights: Vec<i64>,
    pub labels: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub pos_fraction: f64,
    pub node_count_total: usize,
    pub edge_count_total: usize,
    pub mean_degree: f64,
}

impl DatasetStats {
    pub fn compute(graphs: &[LabeledGraph]) -> Self {
        let nodes: usize = graphs.iter().map(|g| g.graph.num_nodes()).sum();
        let edges: usize = graphs.iter().map(|g| g.graph.num_edges()).sum();
        let positives: usize = graphs
            .iter()
            .map(|g| g.labels.iter().filter(|&&y| y == 1).count())
            .sum();
        let denom = nodes.max(1) as f64;
        Self {
            pos_fraction: positives as f64 / denom,
            node_count_total: nodes,
            edge_count_total: edges,
            mean_degree: 2.0 * edges as f64 / denom,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub graphs: Vec<LabeledGraph>,
    pub stats: DatasetStats,
}

impl Dataset {
    /// Wraps hand-built graphs, recomputing stats.
    pub fn from_graphs(config: DatasetConfig, graphs: Vec<LabeledGraph>) -> Self {
        let stats = DatasetStats::compute(&graphs);
        Self { config, graphs, stats }
    }

    pub fn num_nodes(&self) -> usize {
        self.stats.node_count_total
    }
}

/// G(n, p): every unordered pair independently with probability `p`.
pub fn gen_er_graph<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
    assert!(n >= 1, "graph needs at least one node");
    assert!((0.0..=1.0).contains(&p), "edge probability {p} outside [0, 1]");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_canonical(n, &edges)
}

/// i.i.d. uniform integers in `[-bound, bound]`.
pub fn assign_weights<R: Rng + ?Sized>(n: usize, bound: i64, rng: &mut R) -> Vec<i64> {
    assert!(bound >= 1, "weight bound must be positive");
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Ground-truth catalyst predicate, evaluated exactly per node.
pub fn label_catalysts(graph: &Graph, weights: &[i64]) -> Result<Vec<u8>, SynthError> {
    if weights.len() != graph.num_nodes() {
        return Err(SynthError::LengthMismatch {
            expected: graph.num_nodes(),
            got: weights.len(),
        });
    }
    Ok((0..graph.num_nodes())
        .map(|u| {
            let nbrs = graph.neighbors(u);
            let total: i64 = nbrs.iter().map(|&v| weights[v]).sum();
            u8::from(nbrs.iter().any(|&v| weights[v] == total))
        })
        .collect())
}

fn generate_one(cfg: &DatasetConfig, index: usize) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let n = rng.gen_range(cfg.n_min..=cfg.n_max);
    let graph = gen_er_graph(n, cfg.p_edge, &mut rng);
    let weights = assign_weights(n, cfg.weight_bound, &mut rng);
    let labels = label_catalysts(&graph, &weights).expect("lengths agree");
    LabeledGraph { graph, weights, labels }
}

/// Generates `cfg.num_graphs` labeled graphs; graph `i` uses its own
/// ChaCha stream, so the output does not depend on thread scheduling.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let graphs: Vec<LabeledGraph> = (0..cfg.num_graphs)
        .into_par_iter()
        .map(|i| generate_one(cfg, i))
        .collect();
    Ok(Dataset::from_graphs(cfg.clone(), graphs))
}
