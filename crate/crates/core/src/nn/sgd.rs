use serde::{Deserialize, Serialize};

use super::NnError;

/// Momentum SGD with a step learning-rate policy and L2 weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// Base learning rate.
    pub learning_rate: f64,
    /// Multiplicative decay applied every `step_interval` iterations.
    pub gamma: f64,
    pub momentum: f64,
    /// Weight decay `d`; each layer scales it by its decay multiplier `d_l`.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Iterations per decay step.
    pub step_interval: u64,
}

impl Default for SgdConfig {
    /// Learning rate 1e-6, gamma 0.2, momentum 0.8, weight decay 0.005, batch 32.
    fn default() -> Self {
        Self {
            learning_rate: 1e-6,
            gamma: 0.2,
            momentum: 0.8,
            weight_decay: 0.005,
            batch_size: 32,
            step_interval: 10_000,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |what: &str| Err(NnError::Config(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.step_interval == 0 {
            return bad("step interval must be at least 1");
        }
        Ok(())
    }

    /// `base · gamma^⌊t / step_interval⌋`
    pub fn learning_rate_at(&self, iteration: u64) -> f64 {
        let steps = iteration / self.step_interval.max(1);
        self.learning_rate * self.gamma.powi(steps.min(i32::MAX as u64) as i32)
    }
}
