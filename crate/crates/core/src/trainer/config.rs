use serde::{Deserialize, Serialize};

use crate::balancer::BalancerConfig;
use crate::error::{Error, Result};
use crate::model::{Activation, NetworkConfig};
use crate::pde::ProblemKind;
use crate::tail_risk::MeanExcessWeighting;
use crate::threshold::ThresholdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Bulk MSE during warmup, tail penalty added afterwards.
    SmoothFirst,
    /// Tail penalty during warmup, bulk MSE added afterwards.
    StiffFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Vanilla PINN objective.
    None,
    /// `[max(0, CVaR - eps)]^2`.
    Hinge,
    /// Mean of squared excesses `(|r| - eps)_+^2`.
    MeanExcess,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeWeighting {
    Uniform,
    TopK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    AdamW,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW only).
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr: 1e-3,
            lr_min: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup: usize,
    pub schedule: Schedule,
    pub penalty: Penalty,
    pub alpha: f64,
    pub lambda_ic: f64,
    pub lambda_bc: f64,
    /// Weight of the interface losses when they are not bundled with the penalty.
    pub lambda_iface: f64,
    pub me_weighting: MeWeighting,
    /// Drop `L_base` after warmup (ablation objective).
    pub tail_only: bool,
    pub clip_norm: f64,
    pub seed: u64,
    /// Validation rel-L2 cadence in epochs; 0 disables it.
    pub validate_every: usize,
    pub optimizer: OptimizerConfig,
    pub threshold: ThresholdConfig,
    pub balancer: BalancerConfig,
    pub network: NetworkConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_problem(ProblemKind::Poisson2d)
    }
}

impl TrainConfig {
    /// Benchmark defaults for a problem.
    pub fn for_problem(kind: ProblemKind) -> Self {
        let net = |depth, width, activation| NetworkConfig {
            input_dim: 2,
            depth,
            width,
            activation,
            output_activation: false,
            precision: kind.precision(),
        };
        let adam = |lr| OptimizerConfig {
            lr,
            ..OptimizerConfig::default()
        };
        let base = TrainConfig {
            epochs: 15_000,
            warmup: 1000,
            schedule: Schedule::SmoothFirst,
            penalty: Penalty::None,
            alpha: 0.95,
            lambda_ic: 1.0,
            lambda_bc: 1.0,
            lambda_iface: 1.0,
            me_weighting: MeWeighting::Uniform,
            tail_only: false,
            clip_norm: 5.0,
            seed: 0,
            validate_every: 500,
            optimizer: adam(1e-3),
            threshold: ThresholdConfig::default(),
            balancer: BalancerConfig::default(),
            network: net(4, 80, Activation::Tanh),
        };
        match kind {
            ProblemKind::Heat1d => TrainConfig {
                optimizer: adam(9e-3),
                ..base
            },
            ProblemKind::Poisson2d => TrainConfig {
                optimizer: adam(5e-3),
                network: net(6, 64, Activation::Tanh),
                ..base
            },
            ProblemKind::Burgers1d => TrainConfig {
                epochs: 20_000,
                optimizer: adam(5e-3),
                network: NetworkConfig {
                    output_activation: true,
                    ..net(7, 20, Activation::Tanh)
                },
                ..base
            },
            ProblemKind::Kdv1d => TrainConfig {
                epochs: 10_000,
                clip_norm: 1.0,
                optimizer: OptimizerConfig {
                    kind: OptimizerKind::AdamW,
                    lr: 1e-2,
                    weight_decay: 0.01,
                    ..OptimizerConfig::default()
                },
                network: net(4, 128, Activation::Silu),
                ..base
            },
            ProblemKind::Poisson2dJump => TrainConfig {
                warmup: 3000,
                clip_norm: 1.0,
                optimizer: adam(1e-3),
                network: net(6, 64, Activation::Tanh),
                balancer: BalancerConfig {
                    enabled: true,
                    ..BalancerConfig::default()
                },
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && !(self.warmup < self.epochs) {
            return Err(Error::Config(format!(
                "warmup {} must be smaller than epochs {}",
                self.warmup, self.epochs
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        for (name, w) in [
            ("lambda_ic", self.lambda_ic),
            ("lambda_bc", self.lambda_bc),
            ("lambda_iface", self.lambda_iface),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr_min >= 0.0 && o.lr_min <= o.lr) {
            return Err(Error::Config("need 0 <= lr_min <= lr and lr > 0".into()));
        }
        if !(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0 && o.eps > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        if o.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be >= 0".into()));
        }
        self.threshold.validate()?;
        self.balancer.validate()?;
        self.network.validate()
    }

    pub fn mean_excess_weighting(&self) -> MeanExcessWeighting {
        match self.me_weighting {
            MeWeighting::Uniform => MeanExcessWeighting::Uniform,
            MeWeighting::TopK => MeanExcessWeighting::TopK { alpha: self.alpha },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_defaults_validate() {
        for kind in ProblemKind::ALL {
            TrainConfig::for_problem(kind).validate().unwrap();
        }
        let k = TrainConfig::for_problem(ProblemKind::Kdv1d);
        assert_eq!(k.optimizer.kind, OptimizerKind::AdamW);
        assert_eq!(k.clip_norm, 1.0);
        assert!(TrainConfig::for_problem(ProblemKind::Burgers1d).network.output_activation);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = TrainConfig::for_problem(ProblemKind::Heat1d);
        c.warmup = c.epochs;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::for_problem(ProblemKind::Heat1d);
        c.alpha = 1.0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::for_problem(ProblemKind::Heat1d);
        c.clip_norm = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let c = TrainConfig::for_problem(ProblemKind::Poisson2dJump);
        let text = toml::to_string(&c).unwrap();
        let back: TrainConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
    }
}
