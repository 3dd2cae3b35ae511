//! The two-phase training loop with tail penalties, adaptive threshold and
//! optional loss balancing.

mod config;
mod optim;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    MeWeighting, OptimizerConfig, OptimizerKind, Penalty, Schedule, TrainConfig,
};
pub use optim::{clip_grad_norm, cosine_lr, global_norm, Adam};

use crate::autodiff::{Tape, Var};
use crate::balancer::LossBalancer;
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsBundle};
use crate::model::{Mlp, Model};
use crate::pde::{epoch_seed, ProblemKind, ProblemSpec};
use crate::real::Real;
use crate::tail_risk::{
    cvar_hinge_grad, empirical_cvar, mean_excess_grad, MeanExcessWeighting, ResidualBatch,
};
use crate::threshold::ThresholdController;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub l_base: f64,
    pub l_ic: f64,
    pub l_bc: f64,
    pub l_iface_u: f64,
    pub l_iface_ux: f64,
    pub l_core: f64,
    pub cvar: f64,
    pub eps: f64,
    pub lambda_p: f64,
    pub scale_base: f64,
    pub scale_core: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub val_rel_l2: Option<f64>,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,loss,l_base,l_ic,l_bc,l_iface_u,l_iface_ux,l_core,cvar,eps,lambda_p,scale_base,scale_core,lr,grad_norm,val_rel_l2";

    pub fn csv_row(&self) -> String {
        let val = self.val_rel_l2.map(|v| format!("{v:e}")).unwrap_or_default();
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.epoch,
            self.loss,
            self.l_base,
            self.l_ic,
            self.l_bc,
            self.l_iface_u,
            self.l_iface_ux,
            self.l_core,
            self.cvar,
            self.eps,
            self.lambda_p,
            self.scale_base,
            self.scale_core,
            self.lr,
            self.grad_norm,
            val
        )
    }
}

/// Detached per-term loss values of one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseLosses {
    pub base: f64,
    pub ic: f64,
    pub bc: f64,
    pub iface_u: f64,
    pub iface_ux: f64,
    pub core: f64,
}

/// Multipliers applied to each loss term in one epoch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossWeights {
    pub base: f64,
    pub ic: f64,
    pub bc: f64,
    pub iface: f64,
    pub core: f64,
}

impl LossWeights {
    pub fn combine(&self, l: &PhaseLosses) -> f64 {
        self.base * l.base
            + self.ic * l.ic
            + self.bc * l.bc
            + self.iface * (l.iface_u + l.iface_ux)
            + self.core * l.core
    }
}

/// Term weights for 1-based `epoch`. When `bundle_iface` is set the interface
/// losses share the penalty weight, forming a single penalty term.
pub fn loss_weights(cfg: &TrainConfig, epoch: usize, lambda_p: f64, bundle_iface: bool) -> LossWeights {
    let anchors = LossWeights {
        ic: cfg.lambda_ic,
        bc: cfg.lambda_bc,
        ..LossWeights::default()
    };
    if cfg.penalty == Penalty::None {
        return LossWeights {
            base: 1.0,
            iface: cfg.lambda_iface,
            ..anchors
        };
    }
    let warm = epoch <= cfg.warmup;
    let (base, core) = match (cfg.schedule, warm) {
        (Schedule::SmoothFirst, true) => (1.0, 0.0),
        (Schedule::SmoothFirst, false) => (if cfg.tail_only { 0.0 } else { 1.0 }, lambda_p),
        (Schedule::StiffFirst, true) => (0.0, lambda_p),
        (Schedule::StiffFirst, false) => (if cfg.tail_only { 0.0 } else { 1.0 }, lambda_p),
    };
    let iface = if bundle_iface { core } else { cfg.lambda_iface };
    LossWeights {
        base,
        core,
        iface,
        ..anchors
    }
}

/// Composite objective of one epoch from detached term values.
pub fn epoch_loss(
    cfg: &TrainConfig,
    epoch: usize,
    lambda_p: f64,
    bundle_iface: bool,
    losses: &PhaseLosses,
) -> f64 {
    loss_weights(cfg, epoch, lambda_p, bundle_iface).combine(losses)
}

/// Records the tail penalty of the signed residual `r` as a scalar tape node.
///
/// `eps` enters as a constant, so no gradient flows to it.
pub fn penalty_node<T: Real>(
    tape: &mut Tape<T>,
    r: Var,
    penalty: Penalty,
    alpha: f64,
    eps: f64,
    weighting: MeanExcessWeighting,
) -> Result<Option<(Var, f64)>> {
    let signed: Vec<f64> = tape.value(r).iter().map(|v| v.f64()).collect();
    let batch = ResidualBatch::from_signed(signed.iter().copied())?;
    let (value, grad_mag) = match penalty {
        Penalty::None => return Ok(None),
        Penalty::Hinge => cvar_hinge_grad(&batch, alpha, eps)?,
        Penalty::MeanExcess => mean_excess_grad(&batch, eps, weighting)?,
    };
    let shape = tape.value(r).dim();
    let grad = Array2::from_shape_fn(shape, |(i, _)| {
        let s = if signed[i] < 0.0 { -1.0 } else { 1.0 };
        T::lit(s * grad_mag[i])
    });
    let node = tape.scalar_fn(r, T::lit(value), grad);
    Ok(Some((node, value)))
}

/// Reference values on fixed evaluation points.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub points: Array2<f64>,
    pub reference: Vec<f64>,
}

impl EvalData {
    pub fn for_problem(problem: &ProblemSpec) -> Result<Self> {
        let points = problem.eval_points();
        let reference = problem.reference()?.eval(&points)?.to_vec();
        Ok(Self { points, reference })
    }
}

/// Predictions and residuals of a model on evaluation points.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub pred: Vec<f64>,
    pub abs_residual: Vec<f64>,
    pub abs_error: Vec<f64>,
    pub rel_l2: f64,
    pub l_inf: f64,
}

impl Evaluation {
    pub fn bundle(&self, problem: ProblemKind, method: &str, seed: u64, epoch: usize) -> Result<MetricsBundle> {
        Ok(MetricsBundle {
            problem: problem.to_string(),
            method: method.to_string(),
            seed,
            epoch,
            rel_l2: self.rel_l2,
            l_inf: self.l_inf,
            q95_residual: metrics::quantile(&self.abs_residual, 0.95)?,
            q95_error: metrics::quantile(&self.abs_error, 0.95)?,
            mean_abs_residual: self.abs_residual.iter().sum::<f64>() / self.abs_residual.len() as f64,
            n_points: self.pred.len(),
        })
    }
}

const EVAL_CHUNK: usize = 4096;

fn predict<T: Real>(model: &Model<T>, points: &Array2<f64>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.nrows());
    for chunk in points.axis_chunks_iter(Axis(0), 4 * EVAL_CHUNK) {
        out.extend(model.forward(&chunk.mapv(T::lit))?.iter().map(|v| v.f64()));
    }
    Ok(out)
}

/// Absolute PDE residuals of `model` at `points`, evaluated in chunks.
pub fn residual_magnitudes<T: Real>(
    problem: &ProblemSpec,
    model: &Model<T>,
    points: &Array2<f64>,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.nrows());
    for chunk in points.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let r = problem.residual(&mut tape, &bound, &chunk.to_owned())?;
        out.extend(tape.value(r).iter().map(|v| v.f64().abs()));
    }
    Ok(out)
}

pub fn evaluate<T: Real>(problem: &ProblemSpec, model: &Model<T>, data: &EvalData) -> Result<Evaluation> {
    let pred = predict(model, &data.points)?;
    let abs_residual = residual_magnitudes(problem, model, &data.points)?;
    let abs_error = pred
        .iter()
        .zip(&data.reference)
        .map(|(p, r)| (p - r).abs())
        .collect();
    Ok(Evaluation {
        rel_l2: metrics::rel_l2(&pred, &data.reference)?,
        l_inf: metrics::l_inf(&pred, &data.reference)?,
        pred,
        abs_residual,
        abs_error,
    })
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub records: Vec<EpochRecord>,
}

/// Initial model for a configuration (Xavier weights seeded by `cfg.seed`).
pub fn init_model<T: Real>(problem: &ProblemSpec, cfg: &TrainConfig) -> Result<Model<T>> {
    if cfg.network.precision != T::PRECISION {
        return Err(Error::Config(format!(
            "network precision is {}, trainer instantiated for {}",
            cfg.network.precision,
            T::PRECISION
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Model::new(Mlp::new(cfg.network.clone(), &mut rng)?, problem.trial)
}

/// Runs the training loop. `validation` enables the periodic rel-L2 record;
/// `on_epoch` observes every record as it is produced.
pub fn train<T: Real>(
    problem: &ProblemSpec,
    cfg: &TrainConfig,
    validation: Option<&EvalData>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    problem.validate()?;
    cfg.validate()?;
    let mut model = init_model::<T>(problem, cfg)?;
    let mut threshold = ThresholdController::new(cfg.threshold.clone())?;
    let mut balancer = LossBalancer::new(cfg.balancer)?;
    let mut optimizer = Adam::new(cfg.optimizer.clone(), model.net.params());
    let bundle_iface = problem.kind == ProblemKind::Poisson2dJump;
    let weighting = cfg.mean_excess_weighting();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let samples = problem.sample(epoch_seed(cfg.seed, epoch));
        let mut tape = Tape::<T>::new();
        let bound = model.bind(&mut tape);
        let r = problem.residual(&mut tape, &bound, &samples.interior)?;
        let l_base = tape.mean_square(r);
        let cons = problem.constraint_losses(&mut tape, &bound, &samples)?;
        let scalar = |tape: &Tape<T>, v: Option<Var>| v.map(|v| tape.scalar(v).f64()).unwrap_or(0.0);

        let non_finite = |detail: String| Error::NonFinite {
            epoch,
            record: detail,
        };
        let signed: Vec<f64> = tape.value(r).iter().map(|v| v.f64()).collect();
        let batch = ResidualBatch::from_signed(signed)
            .map_err(|e| non_finite(format!("residual batch rejected: {e}")))?;
        let cvar = empirical_cvar(&batch, cfg.alpha)?.value;
        let eps = threshold.update(cvar)?;

        let core = penalty_node(&mut tape, r, cfg.penalty, cfg.alpha, eps, weighting)?;
        let core_value = core.map(|c| c.1).unwrap_or(0.0);
        let losses = PhaseLosses {
            base: tape.scalar(l_base).f64(),
            ic: scalar(&tape, cons.ic),
            bc: scalar(&tape, cons.bc),
            iface_u: scalar(&tape, cons.iface_u),
            iface_ux: scalar(&tape, cons.iface_ux),
            core: core_value,
        };
        if cfg.penalty != Penalty::None {
            let pen = if bundle_iface {
                losses.core + losses.iface_u + losses.iface_ux
            } else {
                losses.core
            };
            balancer.update_scales(losses.base, pen)?;
        }
        let lambda_p = balancer.lambda_p();
        let w = loss_weights(cfg, epoch, lambda_p, bundle_iface);

        let mut terms = vec![(T::lit(w.base), l_base)];
        let optional = [
            (w.ic, cons.ic),
            (w.bc, cons.bc),
            (w.iface, cons.iface_u),
            (w.iface, cons.iface_ux),
            (w.core, core.map(|c| c.0)),
        ];
        terms.extend(optional.iter().filter_map(|&(wt, v)| v.map(|v| (T::lit(wt), v))));
        let root = tape.weighted_sum(&terms);
        let loss = root.map(|v| tape.scalar(v).f64()).unwrap_or(0.0);

        let lr = cosine_lr(epoch - 1, cfg.optimizer.lr, cfg.optimizer.lr_min, cfg.epochs);
        let mut record = EpochRecord {
            epoch,
            loss,
            l_base: losses.base,
            l_ic: losses.ic,
            l_bc: losses.bc,
            l_iface_u: losses.iface_u,
            l_iface_ux: losses.iface_ux,
            l_core: losses.core,
            cvar,
            eps,
            lambda_p,
            scale_base: balancer.scale_base(),
            scale_core: balancer.scale_core(),
            lr,
            grad_norm: 0.0,
            val_rel_l2: None,
        };
        if !loss.is_finite() {
            return Err(non_finite(record.csv_row()));
        }

        if let Some(root) = root {
            let mut grads_all = tape.backward(root);
            let mut grads: Vec<Array2<T>> = bound
                .params()
                .vars()
                .iter()
                .zip(model.net.params())
                .map(|(v, p)| grads_all.take(*v).unwrap_or_else(|| Array2::zeros(p.dim())))
                .collect();
            record.grad_norm = clip_grad_norm(&mut grads, cfg.clip_norm);
            if !record.grad_norm.is_finite() {
                return Err(non_finite(record.csv_row()));
            }
            optimizer.step(model.net.params_mut(), &grads, lr);
        }

        if let Some(data) = validation {
            if cfg.validate_every > 0 && epoch % cfg.validate_every == 0 {
                let pred = predict(&model, &data.points)?;
                record.val_rel_l2 = Some(metrics::rel_l2(&pred, &data.reference)?);
            }
        }
        log::debug!("{}", record.csv_row());
        on_epoch(&record);
        records.push(record);
    }
    Ok(TrainOutcome { model, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_cfg(kind: ProblemKind, penalty: Penalty) -> (ProblemSpec, TrainConfig) {
        let mut problem = ProblemSpec::new(kind);
        problem.sampler.n_int = 64;
        problem.sampler.n_bnd = problem.sampler.n_bnd.min(32);
        problem.sampler.n_ic = problem.sampler.n_ic.min(32);
        problem.sampler.n_iface = problem.sampler.n_iface.min(32);
        let mut cfg = TrainConfig::for_problem(kind);
        cfg.epochs = 6;
        cfg.warmup = 3;
        cfg.penalty = penalty;
        cfg.network.depth = 2;
        cfg.network.width = 8;
        (problem, cfg)
    }

    fn composite_loss(problem: &ProblemSpec, model: &Model<f64>, seed: u64) -> (f64, Vec<Array2<f64>>) {
        let samples = problem.sample(seed);
        let mut tape = Tape::<f64>::new();
        let bound = model.bind(&mut tape);
        let r = problem.residual(&mut tape, &bound, &samples.interior).unwrap();
        let base = tape.mean_square(r);
        let cons = problem.constraint_losses(&mut tape, &bound, &samples).unwrap();
        let mut terms = vec![(1.0, base)];
        for (w, v) in [(0.7, cons.ic), (1.3, cons.bc), (0.9, cons.iface_u), (1.1, cons.iface_ux)] {
            terms.extend(v.map(|v| (w, v)));
        }
        let root = tape.weighted_sum(&terms).unwrap();
        let mut g = tape.backward(root);
        let grads = bound
            .params()
            .vars()
            .iter()
            .zip(model.net.params())
            .map(|(v, p)| g.take(*v).unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        (tape.scalar(root), grads)
    }

    #[test]
    fn composite_loss_gradient_matches_finite_differences() {
        for kind in ProblemKind::ALL {
            let (mut p, mut cfg) = smoke_cfg(kind, Penalty::None);
            p.sampler.n_int = 16;
            cfg.network.precision = crate::Precision::Double;
            let model = init_model::<f64>(&p, &cfg).unwrap();
            let (_, grads) = composite_loss(&p, &model, 7);
            for (l, g) in grads.iter().enumerate() {
                for idx in [(0, 0), (g.nrows() - 1, g.ncols() - 1)] {
                    let h = 1e-6;
                    let mut plus = model.clone();
                    plus.net.params_mut()[l][idx] += h;
                    let mut minus = model.clone();
                    minus.net.params_mut()[l][idx] -= h;
                    let fd = (composite_loss(&p, &plus, 7).0 - composite_loss(&p, &minus, 7).0) / (2.0 * h);
                    let an = g[idx];
                    assert!(
                        (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                        "{kind:?} layer {l} {idx:?}: analytic {an} fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (p, mut cfg) = smoke_cfg(ProblemKind::Poisson2d, Penalty::Hinge);
        cfg.epochs = 0;
        cfg.warmup = 0;
        let out = train::<f32>(&p, &cfg, None, |_| {}).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.model, init_model::<f32>(&p, &cfg).unwrap());
    }

    #[test]
    fn every_problem_trains_a_few_epochs() {
        for kind in ProblemKind::ALL {
            for penalty in [Penalty::None, Penalty::Hinge, Penalty::MeanExcess] {
                let (p, cfg) = smoke_cfg(kind, penalty);
                let recs = match kind.precision() {
                    crate::Precision::Single => train::<f32>(&p, &cfg, None, |_| {}).unwrap().records,
                    crate::Precision::Double => train::<f64>(&p, &cfg, None, |_| {}).unwrap().records,
                };
                assert_eq!(recs.len(), 6);
                assert!(recs.iter().all(|r| r.loss.is_finite() && r.eps >= 0.0));
            }
        }
    }

    #[test]
    fn precision_mismatch_is_rejected() {
        let (p, cfg) = smoke_cfg(ProblemKind::Kdv1d, Penalty::None);
        assert!(matches!(train::<f32>(&p, &cfg, None, |_| {}), Err(Error::Config(_))));
    }

    #[test]
    fn smooth_first_weights() {
        let mut cfg = TrainConfig::for_problem(ProblemKind::Heat1d);
        cfg.penalty = Penalty::Hinge;
        let w = loss_weights(&cfg, cfg.warmup, 0.03, false);
        assert_eq!((w.base, w.core), (1.0, 0.0));
        let w = loss_weights(&cfg, cfg.warmup + 1, 0.03, false);
        assert_eq!((w.base, w.core), (1.0, 0.03));
        cfg.tail_only = true;
        assert_eq!(loss_weights(&cfg, cfg.warmup + 1, 0.03, false).base, 0.0);
        cfg.schedule = Schedule::StiffFirst;
        let w = loss_weights(&cfg, 1, 0.03, true);
        assert_eq!((w.base, w.core, w.iface), (0.0, 0.03, 0.03));
    }

    #[test]
    fn baseline_is_vanilla_composite() {
        let cfg = TrainConfig::for_problem(ProblemKind::Poisson2dJump);
        let l = PhaseLosses {
            base: 1.0,
            ic: 0.0,
            bc: 2.0,
            iface_u: 0.5,
            iface_ux: 0.25,
            core: 9.0,
        };
        assert_eq!(epoch_loss(&cfg, 10, 0.03, true, &l), 1.0 + 2.0 + 0.75);
    }

    #[test]
    fn inactive_hinge_matches_warmup_composite() {
        let mut cfg = TrainConfig::for_problem(ProblemKind::Poisson2d);
        cfg.penalty = Penalty::Hinge;
        let l = PhaseLosses {
            base: 1.5,
            bc: 0.2,
            core: 0.0,
            ..PhaseLosses::default()
        };
        assert_eq!(
            epoch_loss(&cfg, cfg.warmup + 5, 0.03, false, &l),
            epoch_loss(&cfg, 1, 0.03, false, &l)
        );
    }

    #[test]
    fn csv_row_has_header_arity() {
        let (p, cfg) = smoke_cfg(ProblemKind::Heat1d, Penalty::MeanExcess);
        let out = train::<f32>(&p, &cfg, None, |_| {}).unwrap();
        let cols = EpochRecord::CSV_HEADER.split(',').count();
        assert_eq!(out.records[0].csv_row().split(',').count(), cols);
    }
}
