//! AdamW with decoupled weight decay and a reduce-on-plateau schedule.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::layers::LayerParams;
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// Per-parameter first and second moments plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    moments: Vec<(String, Tensor, Tensor)>,
    t: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            moments: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter named in `grads`; others are untouched.
    pub fn step(&mut self, params: &mut LayerParams, grads: &LayerParams, lr: f64) -> Result<(), TrainError> {
        self.t += 1;
        let c = self.config;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2_sqrt = (1.0 - c.beta2.powi(t)).sqrt();
        let decay = 1.0 - lr * c.weight_decay;
        let step_size = lr / bc1;

        for (name, g) in grads.iter() {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(TrainError::GradShape {
                    name: name.to_string(),
                    param: p.shape(),
                    grad: g.shape(),
                });
            }
            let idx = match self.moments.iter().position(|(n, _, _)| n == name) {
                Some(i) => i,
                None => {
                    let (r, cl) = g.shape();
                    self.moments
                        .push((name.to_string(), Tensor::zeros(r, cl), Tensor::zeros(r, cl)));
                    self.moments.len() - 1
                }
            };
            let (_, m, v) = &mut self.moments[idx];
            let pd = p.data_mut();
            for (((x, &gi), mi), vi) in pd.iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *x *= decay;
                *mi = c.beta1 * *mi + (1.0 - c.beta1) * gi;
                *vi = c.beta2 * *vi + (1.0 - c.beta2) * gi * gi;
                let denom = vi.sqrt() / bc2_sqrt + c.eps;
                *x -= step_size * *mi / denom;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    /// Relative improvement needed to reset the patience counter.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.5,
            patience: 10,
            threshold: 1e-4,
        }
    }
}

/// Halves the learning rate after `patience` epochs without improvement.
#[derive(Debug, Clone)]
pub struct Plateau {
    pub config: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
    decays: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig, lr: f64) -> Self {
        Self {
            config,
            lr,
            best: f64::INFINITY,
            bad_epochs: 0,
            decays: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    /// Records an epoch loss and returns the learning rate for the next epoch.
    pub fn update(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - self.config.threshold) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr *= self.config.factor;
                self.bad_epochs = 0;
                self.decays += 1;
            }
        }
        self.lr
    }
}
