use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimiser, schedule and sampling settings. An epoch is `steps_per_epoch`
/// optimiser steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub halve_at_epoch: usize,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// LR patch side.
    pub patch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Random horizontal flips.
    pub flip: bool,
    /// Global gradient-norm clip; off unless set.
    pub grad_clip: Option<f64>,
    /// Validation PSNR on luma (true) or RGB.
    pub val_on_y: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            halve_at_epoch: 150,
            epochs: 300,
            steps_per_epoch: 100,
            batch_size: 16,
            patch_size: 48,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            seed: 0,
            flip: true,
            grad_clip: None,
            val_on_y: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.epochs == 0 || self.halve_at_epoch == 0 || self.halve_at_epoch > self.epochs {
            return bad(format!(
                "need 0 < halve_at_epoch ({}) <= epochs ({})",
                self.halve_at_epoch, self.epochs
            ));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patch_size == 0 {
            return bad("patch_size must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(c) = self.grad_clip {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.epochs * self.steps_per_epoch) as u64
    }

    /// Same schedule shape with a different length: halving stays at the
    /// same fraction of training.
    pub fn with_budget(mut self, epochs: usize, steps_per_epoch: usize) -> Self {
        let frac = self.halve_at_epoch as f64 / self.epochs as f64;
        self.epochs = epochs;
        self.steps_per_epoch = steps_per_epoch;
        self.halve_at_epoch = ((epochs as f64 * frac).round() as usize).clamp(1, epochs);
        self
    }
}

/// Learning rate for `epoch`: constant, then halved once.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if epoch < cfg.halve_at_epoch {
        cfg.lr
    } else {
        cfg.lr / 2.0
    }
}
