//! Dynamic penalty weight from detached EMA loss scales.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalancerConfig {
    pub enabled: bool,
    pub beta: f64,
    /// Seed weight `lambda_cfg`; also the static weight when disabled.
    pub lambda_cfg: f64,
    /// Clip bounds; `None` means `lambda_cfg * 1e-3` and `lambda_cfg * 1e3`.
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub delta: f64,
}

impl Default for BalancerConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            beta: 0.9,
            lambda_cfg: 0.03,
            lambda_min: None,
            lambda_max: None,
            delta: 1e-12,
        }
    }
}

impl BalancerConfig {
    pub fn bounds(&self) -> (f64, f64) {
        (
            self.lambda_min.unwrap_or(self.lambda_cfg * 1e-3),
            self.lambda_max.unwrap_or(self.lambda_cfg * 1e3),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if !(self.lambda_cfg.is_finite() && self.lambda_cfg >= 0.0) {
            return Err(Error::Config(format!("lambda_cfg must be >= 0, got {}", self.lambda_cfg)));
        }
        if !(lo <= self.lambda_cfg && self.lambda_cfg <= hi) {
            return Err(Error::Config(format!(
                "lambda_cfg {} outside clip bounds [{lo}, {hi}]",
                self.lambda_cfg
            )));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("balancer beta must be in (0,1), got {}", self.beta)));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("balancer delta must be > 0".into()));
        }
        Ok(())
    }
}

/// EMA scales `S_b` (base loss) and `S_p` (penalty core), both starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBalancer {
    config: BalancerConfig,
    scale_base: f64,
    scale_core: f64,
}

impl LossBalancer {
    pub fn new(config: BalancerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            scale_base: 1.0,
            scale_core: 1.0,
        })
    }

    pub fn scale_base(&self) -> f64 {
        self.scale_base
    }

    pub fn scale_core(&self) -> f64 {
        self.scale_core
    }

    pub fn config(&self) -> &BalancerConfig {
        &self.config
    }

    pub fn update_scales(&mut self, base_detached: f64, core_detached: f64) -> Result<()> {
        for (name, v) in [("base", base_detached), ("core", core_detached)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!("{name} loss must be finite and >= 0, got {v}")));
            }
        }
        let b = self.config.beta;
        self.scale_base = b * self.scale_base + (1.0 - b) * base_detached;
        self.scale_core = b * self.scale_core + (1.0 - b) * core_detached;
        Ok(())
    }

    /// `clip(lambda_cfg * S_b / (S_p + delta), lambda_min, lambda_max)`, or
    /// `lambda_cfg` when balancing is disabled.
    pub fn lambda_p(&self) -> f64 {
        if !self.config.enabled {
            return self.config.lambda_cfg;
        }
        let (lo, hi) = self.config.bounds();
        let raw = self.config.lambda_cfg * self.scale_base / (self.scale_core + self.config.delta);
        raw.clamp(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enabled() -> BalancerConfig {
        BalancerConfig {
            enabled: true,
            ..Default::default()
        }
    }

    #[test]
    fn ema_examples() {
        let mut b = LossBalancer::new(enabled()).unwrap();
        b.update_scales(0.0, 1.0).unwrap();
        assert!((b.scale_base() - 0.9).abs() < 1e-15);
        assert_eq!(b.scale_core(), 1.0);
        let mut b = LossBalancer::new(enabled()).unwrap();
        for _ in 0..400 {
            b.update_scales(0.25, 1.0).unwrap();
        }
        assert!((b.scale_base() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn lambda_examples() {
        let mut b = LossBalancer::new(BalancerConfig {
            enabled: true,
            lambda_min: Some(0.0),
            lambda_max: Some(1e6),
            ..Default::default()
        })
        .unwrap();
        b.scale_core = 0.5;
        assert!((b.lambda_p() - 0.06).abs() < 1e-12);
        b.scale_core = 1.0;
        assert!((b.lambda_p() - 0.03).abs() < 1e-12);

        let mut b = LossBalancer::new(BalancerConfig {
            enabled: true,
            lambda_max: Some(10.0),
            ..Default::default()
        })
        .unwrap();
        for _ in 0..2000 {
            b.update_scales(1.0, 0.0).unwrap();
        }
        assert_eq!(b.lambda_p(), 10.0);
    }

    #[test]
    fn disabled_returns_seed() {
        let mut b = LossBalancer::new(BalancerConfig::default()).unwrap();
        b.update_scales(5.0, 1e-9).unwrap();
        assert_eq!(b.lambda_p(), 0.03);
    }

    #[test]
    fn rejects_negative_losses() {
        let mut b = LossBalancer::new(enabled()).unwrap();
        assert!(b.update_scales(-1.0, 0.0).is_err());
        assert!(b.update_scales(0.0, f64::INFINITY).is_err());
    }
}
