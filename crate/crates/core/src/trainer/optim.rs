use std::f64::consts::PI;

use ndarray::Array2;

use super::config::{OptimizerConfig, OptimizerKind};
use crate::real::Real;

/// Cosine annealing from `lr0` at epoch 0 to `lr_min` at `t_max`.
pub fn cosine_lr(epoch: usize, lr0: f64, lr_min: f64, t_max: usize) -> f64 {
    if t_max == 0 {
        return lr0;
    }
    let frac = epoch.min(t_max) as f64 / t_max as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (PI * frac).cos())
}

/// Global L2 norm over all gradient arrays.
pub fn global_norm<T: Real>(grads: &[Array2<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales gradients so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut [Array2<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    let coef = max_norm / (norm + 1e-6);
    if coef < 1.0 {
        let c = T::lit(coef);
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * c);
        }
    }
    norm
}

/// Adam, or AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: OptimizerConfig,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    step: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(config: OptimizerConfig, params: &[Array2<T>]) -> Self {
        Self {
            config,
            m: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Array2<T>], grads: &[Array2<T>], lr: f64) {
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ob1, ob2) = (T::one() - b1, T::one() - b2);
        let step_size = T::lit(lr / bc1);
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(c.eps);
        let decay = match c.kind {
            OptimizerKind::AdamW => T::lit(1.0 - lr * c.weight_decay),
            OptimizerKind::Adam => T::one(),
        };
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(p)
                .and(g)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + ob1 * g;
                    *v = b2 * *v + ob2 * g * g;
                    *p = *p * decay - step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 1e-2, 1e-5, 100), 1e-2);
        assert!((cosine_lr(100, 1e-2, 1e-5, 100) - 1e-5).abs() < 1e-18);
        assert!((cosine_lr(50, 1e-2, 1e-5, 100) - 0.5 * (1e-2 + 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![array![[3.0f64, 4.0]], array![[12.0]]];
        let before = clip_grad_norm(&mut g, 1.0);
        assert_eq!(before, 13.0);
        assert!(global_norm(&g) <= 1.0);
        let mut small = vec![array![[0.1f64]]];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small[0][[0, 0]], 0.1);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = vec![array![[1.0f64, -1.0]]];
        let g = vec![array![[0.5, -2.0]]];
        let mut opt = Adam::new(OptimizerConfig::default(), &p);
        opt.step(&mut p, &g, 0.1);
        assert!((p[0][[0, 0]] - 0.9).abs() < 1e-6);
        assert!((p[0][[0, 1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_decays_weights() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::AdamW,
            weight_decay: 0.1,
            ..OptimizerConfig::default()
        };
        let mut p = vec![array![[2.0f64]]];
        let mut opt = Adam::new(cfg, &p);
        opt.step(&mut p, &[array![[0.0]]], 0.5);
        assert!((p[0][[0, 0]] - 2.0 * 0.95).abs() < 1e-12);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = vec![array![[3.0f64, -2.0]]];
        let mut opt = Adam::new(OptimizerConfig::default(), &p);
        for _ in 0..2000 {
            let g = vec![p[0].mapv(|v| 2.0 * v)];
            opt.step(&mut p, &g, 0.05);
        }
        assert!(p[0].iter().all(|v| v.abs() < 1e-3));
    }
}
