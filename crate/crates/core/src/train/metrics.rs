//! Confusion counts and balanced accuracy.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Self {
        assert_eq!(pred.len(), truth.len(), "prediction/label length mismatch");
        let mut c = Self::default();
        for (&p, &y) in pred.iter().zip(truth) {
            c.record(p == 1, y == 1);
        }
        c
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Mean of the true positive and true negative rates. When only one
    /// class is present, the rate of that class alone; 0 when empty.
    pub fn balanced_accuracy(&self) -> f64 {
        let pos = self.tp + self.fn_;
        let neg = self.tn + self.fp;
        let tpr = (pos > 0).then(|| self.tp as f64 / pos as f64);
        let tnr = (neg > 0).then(|| self.tn as f64 / neg as f64);
        match (tpr, tnr) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => 0.0,
        }
    }

    /// Fraction of nodes predicted positive.
    pub fn positive_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total().max(1) as f64
    }
}

/// How node-level results combine across graphs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Pool all nodes into a single confusion table.
    #[default]
    Micro,
    /// Average per-graph balanced accuracies.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Confusion,
    /// Pooled over all nodes.
    pub balanced_accuracy: f64,
    pub macro_balanced_accuracy: f64,
    pub positive_rate: f64,
}

impl Metrics {
    pub fn from_graphs(per_graph: &[Confusion]) -> Self {
        let mut confusion = Confusion::default();
        for c in per_graph {
            confusion.merge(c);
        }
        let macro_balanced_accuracy = if per_graph.is_empty() {
            0.0
        } else {
            per_graph.iter().map(Confusion::balanced_accuracy).sum::<f64>() / per_graph.len() as f64
        };
        Self {
            confusion,
            balanced_accuracy: confusion.balanced_accuracy(),
            macro_balanced_accuracy,
            positive_rate: confusion.positive_rate(),
        }
    }

    pub fn score(&self, averaging: Averaging) -> f64 {
        match averaging {
            Averaging::Micro => self.balanced_accuracy,
            Averaging::Macro => self.macro_balanced_accuracy,
        }
    }
}
