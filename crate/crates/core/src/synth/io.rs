//! JSON Lines persistence: one graph per line plus a sibling manifest.
//!
//! ```text
//! {"n":3,"edges":[[0,1],[1,2]],"w":[1,0,-1],"y":[1,0,1]}
//! ```
//!
//! `train.jsonl` is described by `train.manifest.json`, which holds
//! `{"format_version", "config", "stats"}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{label_catalysts, Dataset, DatasetConfig, DatasetStats, LabeledGraph, SynthError};
use crate::graph::Graph;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    w: Vec<i64>,
    y: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: DatasetConfig,
    stats: DatasetStats,
}

/// `data/train.jsonl` -> `data/train.manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Serializes `dataset` to JSONL and manifest writers.
pub fn write_dataset(dataset: &Dataset, mut lines: impl Write, mut manifest: impl Write) -> Result<(), SynthError> {
    for g in &dataset.graphs {
        let record = GraphRecord {
            n: g.graph.num_nodes(),
            edges: g.graph.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            w: g.weights.clone(),
            y: g.labels.clone(),
        };
        serde_json::to_writer(&mut lines, &record).map_err(std::io::Error::from)?;
        lines.write_all(b"\n")?;
    }
    lines.flush()?;
    let m = Manifest {
        format_version: FORMAT_VERSION,
        config: dataset.config.clone(),
        stats: dataset.stats.clone(),
    };
    serde_json::to_writer_pretty(&mut manifest, &m).map_err(std::io::Error::from)?;
    manifest.write_all(b"\n")?;
    manifest.flush()?;
    Ok(())
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<(), SynthError> {
    let lines = BufWriter::new(File::create(path)?);
    let manifest = BufWriter::new(File::create(manifest_path(path))?);
    write_dataset(dataset, lines, manifest)
}

fn parse_record(line: usize, text: &str) -> Result<LabeledGraph, SynthError> {
    let err = |message: String| SynthError::Parse { line, message };
    let rec: GraphRecord = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    if rec.w.len() != rec.n || rec.y.len() != rec.n {
        return Err(err(format!(
            "expected {} weights and labels, got {} and {}",
            rec.n,
            rec.w.len(),
            rec.y.len()
        )));
    }
    if let Some(bad) = rec.y.iter().find(|&&y| y > 1) {
        return Err(err(format!("label {bad} is not 0 or 1")));
    }
    let edges: Vec<(usize, usize)> = rec.edges.iter().map(|e| (e[0], e[1])).collect();
    let graph = Graph::new(rec.n, &edges).map_err(|e| err(e.to_string()))?;
    let truth = label_catalysts(&graph, &rec.w)?;
    if let Some(u) = (0..rec.n).find(|&u| truth[u] != rec.y[u]) {
        return Err(SynthError::Validation(format!(
            "line {line}: node {u} is labeled {} but the catalyst predicate gives {}",
            rec.y[u], truth[u]
        )));
    }
    Ok(LabeledGraph {
        graph,
        weights: rec.w,
        labels: rec.y,
    })
}

/// Loads and fully re-validates a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset, SynthError> {
    let reader = BufReader::new(File::open(path)?);
    let mut graphs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        graphs.push(parse_record(line_no, &text)?);
    }

    let mpath = manifest_path(path);
    let text = std::fs::read_to_string(&mpath)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| SynthError::Parse {
        line: e.line(),
        message: format!("{}: {e}", mpath.display()),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(SynthError::Validation(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    if manifest.config.num_graphs != graphs.len() {
        return Err(SynthError::Validation(format!(
            "manifest lists {} graphs, file holds {}",
            manifest.config.num_graphs,
            graphs.len()
        )));
    }
    let dataset = Dataset::from_graphs(manifest.config, graphs);
    let (stored, fresh) = (&manifest.stats, &dataset.stats);
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    if stored.node_count_total != fresh.node_count_total
        || stored.edge_count_total != fresh.edge_count_total
        || !close(stored.pos_fraction, fresh.pos_fraction)
        || !close(stored.mean_degree, fresh.mean_degree)
    {
        return Err(SynthError::Validation(format!(
            "manifest stats {stored:?} disagree with recomputed {fresh:?}"
        )));
    }
    Ok(dataset)
}
