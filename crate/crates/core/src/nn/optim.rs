use serde::{Deserialize, Serialize};

use super::layer::{LayerGrad, LinearLayer};
use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Optimizer hyperparameters shared by every trainer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| (0.0..1.0).contains(&v);
        if !ok(self.momentum) || !ok(self.weight_decay) || !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Input(format!(
                "momentum and weight decay must lie in [0,1), lr must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Cosine-annealed learning rate `base · ½ · (1 + cos(π·step/total))`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> Result<f64> {
    if total == 0 || step > total {
        return Err(Error::Input(format!(
            "step {step} outside schedule of {total} steps"
        )));
    }
    let t = step as f64 / total as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Debug, Clone, PartialEq)]
struct Velocity {
    weight: Matrix,
    bias: Vec<f64>,
}

/// SGD with momentum, L2 weight decay on weights and a cosine schedule.
///
/// Momentum buffers are keyed by a parameter slot index chosen by the caller
/// (one slot per layer of the model being trained).
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    config: SgdConfig,
    total_steps: usize,
    velocity: Vec<Option<Velocity>>,
}

impl SgdState {
    pub fn new(config: SgdConfig, slots: usize, total_steps: usize) -> Result<Self> {
        config.validate()?;
        if total_steps == 0 {
            return Err(Error::Input("schedule needs at least one step".into()));
        }
        Ok(Self {
            config,
            total_steps,
            velocity: vec![None; slots],
        })
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Applies one update to `layer` stored in `slot`:
    /// `v ← μ·v + (g + wd·w)` (no decay on biases), `w ← w − lr(step)·v`.
    pub fn step(
        &mut self,
        slot: usize,
        layer: &mut LinearLayer,
        grad: &LayerGrad,
        step_index: usize,
    ) -> Result<()> {
        if step_index >= self.total_steps {
            return Err(Error::Input(format!(
                "step {step_index} beyond schedule of {}",
                self.total_steps
            )));
        }
        if grad.weight.shape() != layer.weight.shape() || grad.bias.len() != layer.bias.len() {
            return Err(Error::Shape(format!(
                "gradient {:?} does not match parameter {:?}",
                grad.weight.shape(),
                layer.weight.shape()
            )));
        }
        let slot_ref = self
            .velocity
            .get_mut(slot)
            .ok_or_else(|| Error::Shape(format!("no optimizer slot {slot}")))?;
        let v = slot_ref.get_or_insert_with(|| Velocity {
            weight: Matrix::zeros(layer.weight.rows(), layer.weight.cols()),
            bias: vec![0.0; layer.bias.len()],
        });
        if v.weight.shape() != layer.weight.shape() {
            return Err(Error::Shape(format!("optimizer slot {slot} reused for another shape")));
        }
        let lr = cosine_lr(self.config.lr, step_index, self.total_steps)?;
        let (mu, wd) = (self.config.momentum, self.config.weight_decay);
        for ((w, g), vel) in layer
            .weight
            .values_mut()
            .iter_mut()
            .zip(grad.weight.values())
            .zip(v.weight.values_mut())
        {
            *vel = mu * *vel + (g + wd * *w);
            *w -= lr * *vel;
        }
        for ((b, g), vel) in layer.bias.iter_mut().zip(&grad.bias).zip(v.bias.iter_mut()) {
            *vel = mu * *vel + g;
            *b -= lr * *vel;
        }
        Ok(())
    }
}
