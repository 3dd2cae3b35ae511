//! Adaptive, gradient-free tail tolerance.
//!
//! The tolerance tracks a margin-shifted CVaR: upward moves are smoothed by an
//! EMA while downward moves are applied immediately. The controller only ever
//! sees plain `f64` values read off a finished forward pass, so no gradient can
//! flow through it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub eps_init: f64,
    /// EMA decay applied to upward moves.
    pub beta: f64,
    /// Relative margin: the target is `(1 - margin) * CVaR`.
    pub margin: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            eps_init: 0.5,
            beta: 0.95,
            margin: 0.10,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_init.is_finite() && self.eps_init > 0.0) {
            return Err(Error::Config(format!("eps_init must be > 0, got {}", self.eps_init)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("threshold beta must be in (0,1), got {}", self.beta)));
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err(Error::Config(format!("margin must be in [0,1), got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdController {
    config: ThresholdConfig,
    eps: f64,
}

impl ThresholdController {
    pub fn new(config: ThresholdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            eps: config.eps_init,
            config,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn config(&self) -> &ThresholdConfig {
        &self.config
    }

    /// `eps <- min(beta * eps + (1 - beta) * target, target)` with
    /// `target = (1 - margin) * cvar`.
    pub fn update(&mut self, cvar_detached: f64) -> Result<f64> {
        if !(cvar_detached.is_finite() && cvar_detached >= 0.0) {
            return Err(Error::domain(format!(
                "detached CVaR must be finite and >= 0, got {cvar_detached}"
            )));
        }
        let target = (1.0 - self.config.margin) * cvar_detached;
        let beta = self.config.beta;
        let candidate = beta * self.eps + (1.0 - beta) * target;
        self.eps = candidate.min(target);
        Ok(self.eps)
    }
}
