//! `results.csv` rows and their Markdown rendering.
//!
//! Columns: `model,W,p_edge,seed,balanced_accuracy,runtime_mean_s,runtime_std_s,pos_fraction`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sinc_core::layers::ModelKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    #[serde(rename = "W")]
    pub w: i64,
    pub p_edge: f64,
    pub seed: u64,
    pub balanced_accuracy: f64,
    pub runtime_mean_s: f64,
    pub runtime_std_s: f64,
    pub pos_fraction: f64,
}

/// Identifies a plan cell.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub model: String,
    pub w: i64,
    pub p_edge: String,
    pub seed: u64,
}

impl CellKey {
    pub fn new(model: &str, w: i64, p_edge: f64, seed: u64) -> Self {
        Self {
            model: model.to_string(),
            w,
            p_edge: format_p(p_edge),
            seed,
        }
    }

    /// Directory-safe name, e.g. `sinc-gcn_w1_p0.3_s0`.
    pub fn slug(&self) -> String {
        format!("{}_w{}_p{}_s{}", self.model, self.w, self.p_edge, self.seed)
    }
}

/// Shortest decimal that round-trips, e.g. `0.3`.
pub fn format_p(p: f64) -> String {
    format!("{p}")
}

impl ResultRow {
    pub fn key(&self) -> CellKey {
        CellKey::new(&self.model, self.w, self.p_edge, self.seed)
    }
}

/// Reads every row; a missing file has none.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("{}: row {}", path.display(), i + 1)))
        .collect()
}

/// Appends `row`, writing the header first when the file is new or empty.
pub fn append_result(path: &Path, row: &ResultRow) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)?;
    w.flush()?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn model_order(name: &str) -> (usize, String) {
    let rank = name
        .parse::<ModelKind>()
        .ok()
        .and_then(|k| ModelKind::ALL.iter().position(|&m| m == k))
        .unwrap_or(usize::MAX);
    (rank, name.to_string())
}

fn display_model(name: &str) -> String {
    name.parse::<ModelKind>()
        .map(|k| k.display_name().to_string())
        .unwrap_or_else(|_| name.to_string())
}

/// Accuracy and runtime tables, models by row and `(W, p_edge)` by column,
/// each cell `mean ± std` over seeds (population std).
pub fn render_markdown(rows: &[ResultRow]) -> String {
    type Column = (i64, String);
    let mut columns: Vec<(Column, f64)> = Vec::new();
    let mut cells: BTreeMap<((usize, String), Column), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let col = (r.w, format_p(r.p_edge));
        if !columns.iter().any(|(c, _)| *c == col) {
            columns.push((col.clone(), r.p_edge));
        }
        cells.entry((model_order(&r.model), col)).or_default().push(r);
    }
    columns.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.1.total_cmp(&b.1)));
    let mut models: Vec<(usize, String)> = cells.keys().map(|(m, _)| m.clone()).collect();
    models.dedup();

    let header = |title: &str| {
        let mut s = format!("| {title} |");
        for ((w, p), _) in &columns {
            s.push_str(&format!(" W={w}, p={p} |"));
        }
        s.push('\n');
        s.push_str(&"|---".repeat(columns.len() + 1));
        s.push_str("|\n");
        s
    };
    let table = |title: &str, cell: &dyn Fn(&[&ResultRow]) -> String| {
        let mut s = header(title);
        for m in &models {
            s.push_str(&format!("| {} |", display_model(&m.1)));
            for (col, _) in &columns {
                let text = cells
                    .get(&(m.clone(), col.clone()))
                    .map_or_else(|| "-".to_string(), |rs| cell(rs));
                s.push_str(&format!(" {text} |"));
            }
            s.push('\n');
        }
        s
    };

    let mut out = String::from("## Test balanced accuracy\n\n");
    let mut acc = header("Model");
    acc.push_str("| %pos |");
    for (col, _) in &columns {
        let fr: Vec<f64> = rows
            .iter()
            .filter(|r| (r.w, format_p(r.p_edge)) == *col)
            .map(|r| r.pos_fraction)
            .collect();
        acc.push_str(&format!(" {:.2} |", mean_std(&fr).0));
    }
    acc.push('\n');
    let body = table("Model", &|rs| {
        let (m, s) = mean_std(&rs.iter().map(|r| r.balanced_accuracy).collect::<Vec<_>>());
        format!("{m:.2} ± {s:.2}")
    });
    acc.push_str(
        body.lines()
            .skip(2)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
            .as_str(),
    );
    out.push_str(&acc);

    out.push_str("\n## Inference runtime (ms per pass over the test set)\n\n");
    out.push_str(&table("Model", &|rs| {
        let (m, s) = mean_std(&rs.iter().map(|r| r.runtime_mean_s * 1e3).collect::<Vec<_>>());
        format!("{m:.2} ± {s:.2}")
    }));
    out
}
