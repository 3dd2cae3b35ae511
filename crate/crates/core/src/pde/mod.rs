//! The five benchmark problems: residual operators, constraint terms,
//! collocation samplers and reference solutions.
//!
//! Time-dependent problems use coordinates `(x, t)`; the 2-D problems `(x, y)`.

mod reference;
mod sampling;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::{JetSource, TrialSolution};
use crate::real::{Precision, Real};

pub use reference::{
    cole_hopf_burgers, fd_poisson_jump_solver, jump_poisson_exact, ColeHopf, GridField,
    ReferenceOracle,
};
pub use sampling::{epoch_seed, PointPairs, SampleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    #[serde(rename = "heat1d")]
    Heat1d,
    #[serde(rename = "burgers1d")]
    Burgers1d,
    #[serde(rename = "kdv1d")]
    Kdv1d,
    #[serde(rename = "poisson2d")]
    Poisson2d,
    #[serde(rename = "poisson2d_jump")]
    Poisson2dJump,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::Heat1d,
        ProblemKind::Burgers1d,
        ProblemKind::Kdv1d,
        ProblemKind::Poisson2d,
        ProblemKind::Poisson2dJump,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Heat1d => "heat1d",
            ProblemKind::Burgers1d => "burgers1d",
            ProblemKind::Kdv1d => "kdv1d",
            ProblemKind::Poisson2d => "poisson2d",
            ProblemKind::Poisson2dJump => "poisson2d_jump",
        }
    }

    /// Working precision of the benchmark network.
    pub fn precision(self) -> Precision {
        match self {
            ProblemKind::Kdv1d | ProblemKind::Poisson2dJump => Precision::Double,
            _ => Precision::Single,
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown problem '{s}'")))
    }
}

/// Heat diffusivity `1 / (400 pi^2)`, so that `sin(20 pi x) e^{-t}` is exact.
pub const HEAT_DIFFUSIVITY: f64 = 1.0 / (400.0 * PI * PI);
/// Burgers viscosity `0.01 / pi`.
pub const BURGERS_VISCOSITY: f64 = 0.01 / PI;
pub const JUMP_INTERFACE: f64 = 0.5;

/// Collocation counts and the interface-biased mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_int: usize,
    pub n_bnd: usize,
    pub n_ic: usize,
    pub n_iface: usize,
    /// Probability of drawing an interior `x` from the interface band.
    pub iface_bias: f64,
    /// Half-width of the interface band.
    pub iface_band: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_int: 1000,
            n_bnd: 0,
            n_ic: 0,
            n_iface: 0,
            iface_bias: 0.0,
            iface_band: 0.05,
        }
    }
}

/// Points on which trained models are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPoints {
    /// Tensor grid including the domain boundary.
    Grid { nx: usize, ny: usize },
    /// Uniform random points drawn with a fixed seed.
    Random { n: usize },
}

/// A benchmark problem with its sampler and evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    pub trial: TrialSolution,
    pub sampler: SamplerConfig,
    pub eval: EvalPoints,
    /// One-sided offset used to evaluate interface limits `0.5 -/+ delta`.
    pub iface_offset: f64,
}

/// Per-term constraint losses as `1 x 1` tape nodes; `None` is an exact zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstraintLosses {
    pub ic: Option<Var>,
    pub bc: Option<Var>,
    pub iface_u: Option<Var>,
    pub iface_ux: Option<Var>,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind) -> Self {
        let base = SamplerConfig::default();
        let (lower, upper, trial, sampler, eval) = match kind {
            ProblemKind::Heat1d => (
                [0.0, 0.0],
                [1.0, 1.0],
                TrialSolution::HeatHard,
                SamplerConfig { n_int: 5000, ..base },
                EvalPoints::Grid { nx: 101, ny: 101 },
            ),
            ProblemKind::Burgers1d => (
                [-1.0, 0.0],
                [1.0, 1.0],
                TrialSolution::BurgersHard,
                SamplerConfig { n_int: 10_000, ..base },
                EvalPoints::Random { n: 90_000 },
            ),
            ProblemKind::Kdv1d => (
                [-10.0, 0.0],
                [10.0, 1.0],
                TrialSolution::Identity,
                SamplerConfig {
                    n_int: 10_000,
                    n_bnd: 512,
                    n_ic: 512,
                    ..base
                },
                EvalPoints::Grid { nx: 201, ny: 201 },
            ),
            ProblemKind::Poisson2d => (
                [0.0, 0.0],
                [1.0, 1.0],
                TrialSolution::Identity,
                SamplerConfig {
                    n_int: 10_000,
                    n_bnd: 200,
                    ..base
                },
                EvalPoints::Grid { nx: 101, ny: 101 },
            ),
            ProblemKind::Poisson2dJump => (
                [0.0, 0.0],
                [1.0, 1.0],
                TrialSolution::Identity,
                SamplerConfig {
                    n_int: 4096,
                    n_bnd: 2000,
                    n_iface: 2000,
                    iface_bias: 0.3,
                    ..base
                },
                EvalPoints::Grid { nx: 201, ny: 201 },
            ),
        };
        Self {
            kind,
            lower,
            upper,
            trial,
            sampler,
            eval,
            iface_offset: 1e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..2 {
            if !(self.lower[a].is_finite() && self.upper[a].is_finite() && self.lower[a] < self.upper[a])
            {
                return Err(Error::Config(format!(
                    "invalid bounds on axis {a}: [{}, {}]",
                    self.lower[a], self.upper[a]
                )));
            }
        }
        let s = &self.sampler;
        if s.n_int == 0 {
            return Err(Error::Config("n_int must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s.iface_bias) || !(s.iface_band > 0.0) {
            return Err(Error::Config("interface bias must lie in [0, 1] with a positive band".into()));
        }
        if !(self.iface_offset >= 0.0 && self.iface_offset < 0.5) {
            return Err(Error::Config("interface offset must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    /// Highest pure derivative order per axis needed by the residual.
    pub fn residual_orders(&self) -> [usize; 2] {
        match self.kind {
            ProblemKind::Heat1d | ProblemKind::Burgers1d => [2, 1],
            ProblemKind::Kdv1d => [3, 1],
            ProblemKind::Poisson2d | ProblemKind::Poisson2dJump => [2, 2],
        }
    }

    /// Source term of the Poisson problems.
    pub fn source(&self, x: f64, y: f64) -> f64 {
        let ss = (PI * x).sin() * (PI * y).sin();
        match self.kind {
            ProblemKind::Poisson2dJump if x >= JUMP_INTERFACE => -6.0 * PI * PI * ss,
            ProblemKind::Poisson2d | ProblemKind::Poisson2dJump => 2.0 * PI * PI * ss,
            _ => 0.0,
        }
    }

    /// Signed PDE residual at `points` as an `n x 1` node.
    pub fn residual<T: Real, S: JetSource<T> + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        src: &S,
        points: &Array2<f64>,
    ) -> Result<Var> {
        self.check_dim(points)?;
        let pts = points.mapv(T::lit);
        let jet = src.field_jet(tape, &pts, &self.residual_orders())?;
        match self.kind {
            ProblemKind::Heat1d => {
                let ut = jet.d(1, 1)?;
                let uxx = jet.d(0, 2)?;
                let diff = tape.scale(uxx, T::lit(HEAT_DIFFUSIVITY));
                Ok(tape.sub(ut, diff))
            }
            ProblemKind::Burgers1d => {
                let u = jet.value();
                let ut = jet.d(1, 1)?;
                let ux = jet.d(0, 1)?;
                let uxx = jet.d(0, 2)?;
                let adv = tape.mul(u, ux);
                let lhs = tape.add(ut, adv);
                let visc = tape.scale(uxx, T::lit(BURGERS_VISCOSITY));
                Ok(tape.sub(lhs, visc))
            }
            ProblemKind::Kdv1d => {
                let u = jet.value();
                let ut = jet.d(1, 1)?;
                let ux = jet.d(0, 1)?;
                let uxxx = jet.d(0, 3)?;
                let adv = tape.mul(u, ux);
                let adv = tape.scale(adv, T::lit(6.0));
                let lhs = tape.add(ut, adv);
                Ok(tape.add(lhs, uxxx))
            }
            ProblemKind::Poisson2d | ProblemKind::Poisson2dJump => {
                let uxx = jet.d(0, 2)?;
                let uyy = jet.d(1, 2)?;
                let lap = tape.add(uxx, uyy);
                let f = Array2::from_shape_fn((points.nrows(), 1), |(i, _)| {
                    T::lit(-self.source(points[[i, 0]], points[[i, 1]]))
                });
                let neg_lap = tape.neg(lap);
                Ok(tape.add_const(neg_lap, f))
            }
        }
    }

    /// Mean-squared constraint discrepancies on a sample set.
    pub fn constraint_losses<T: Real, S: JetSource<T> + ?Sized>(
        &self,
        tape: &mut Tape<T>,
        src: &S,
        samples: &SampleSet,
    ) -> Result<ConstraintLosses> {
        let mut out = ConstraintLosses::default();
        if let Some((pts, target)) = &samples.initial {
            out.ic = Some(dirichlet_loss(tape, src, pts, target)?);
        }
        if let Some((pts, target)) = &samples.boundary {
            out.bc = Some(dirichlet_loss(tape, src, pts, target)?);
        }
        if let Some(pairs) = &samples.periodic {
            // u, u_x and u_xx must match across the two ends.
            let diffs = pair_differences(tape, src, pairs, 2)?;
            let mut acc = None;
            for d in diffs {
                let l = tape.mean_square(d);
                acc = Some(match acc {
                    Some(a) => tape.add(a, l),
                    None => l,
                });
            }
            out.bc = acc;
        }
        if let Some(pairs) = &samples.interface {
            let diffs = pair_differences(tape, src, pairs, 1)?;
            out.iface_u = Some(tape.mean_square(diffs[0]));
            out.iface_ux = Some(tape.mean_square(diffs[1]));
        }
        Ok(out)
    }

    /// Fresh collocation points, deterministic in `seed`.
    pub fn sample(&self, seed: u64) -> SampleSet {
        sampling::sample(self, seed)
    }

    /// Points on which metrics are computed.
    pub fn eval_points(&self) -> Array2<f64> {
        sampling::eval_points(self)
    }

    /// Builds the independent reference solution for this problem.
    pub fn reference(&self) -> Result<ReferenceOracle> {
        ReferenceOracle::for_problem(self)
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        let tol = 1e-12;
        (0..2).all(|a| p[a] >= self.lower[a] - tol && p[a] <= self.upper[a] + tol)
    }

    fn check_dim(&self, points: &Array2<f64>) -> Result<()> {
        if points.ncols() != 2 {
            return Err(Error::domain(format!(
                "{} expects 2 coordinates, got {}",
                self.kind,
                points.ncols()
            )));
        }
        Ok(())
    }
}

fn dirichlet_loss<T: Real, S: JetSource<T> + ?Sized>(
    tape: &mut Tape<T>,
    src: &S,
    pts: &Array2<f64>,
    target: &Array1<f64>,
) -> Result<Var> {
    let jet = src.field_jet(tape, &pts.mapv(T::lit), &[0, 0])?;
    let g = target.mapv(T::lit).insert_axis(ndarray::Axis(1));
    let d = tape.add_const(jet.value(), g.mapv(|v| -v));
    Ok(tape.mean_square(d))
}

/// `d^k u(minus) - d^k u(plus)` along x for `k = 0..=order`.
fn pair_differences<T: Real, S: JetSource<T> + ?Sized>(
    tape: &mut Tape<T>,
    src: &S,
    pairs: &PointPairs,
    order: usize,
) -> Result<Vec<Var>> {
    let n = pairs.minus.nrows();
    let mut both = Array2::zeros((2 * n, 2));
    both.slice_mut(ndarray::s![0..n, ..]).assign(&pairs.minus);
    both.slice_mut(ndarray::s![n.., ..]).assign(&pairs.plus);
    let jet = src.field_jet(tape, &both.mapv(T::lit), &[order, 0])?;
    (0..=order)
        .map(|k| {
            let d = jet.d(0, k)?;
            let a = tape.rows(d, 0, n);
            let b = tape.rows(d, n, n);
            Ok(tape.sub(a, b))
        })
        .collect()
}

/// The KdV single soliton `(c/2) sech^2(sqrt(c)/2 (x - c t - x0))` with `c = 1`, `x0 = 0`,
/// and its pure derivatives (`axis` 0 is x, 1 is t).
pub fn kdv_soliton(x: f64, t: f64, axis: usize, order: usize) -> f64 {
    let c: f64 = 1.0;
    let k = c.sqrt() / 2.0;
    let xi = k * (x - c * t);
    let th = xi.tanh();
    let s2 = 1.0 - th * th;
    // d^n/dxi^n of sech^2(xi), written through tanh.
    let d = match order {
        0 => s2,
        1 => -2.0 * th * s2,
        2 => s2 * (6.0 * th * th - 2.0),
        3 => s2 * th * (16.0 - 24.0 * th * th),
        _ => f64::NAN,
    };
    let chain = if axis == 0 { k } else { -c * k };
    0.5 * c * chain.powi(order as i32) * d
}
