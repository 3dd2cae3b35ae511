//! Fully-connected networks, hard-constraint trial solutions and the
//! derivative contract used by residual operators.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::autodiff::Activation;
use crate::autodiff::{JetLayout, Tape, Var};
use crate::error::{Error, Result};
use crate::real::{Precision, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    /// Apply `activation` to the output layer as well.
    #[serde(default)]
    pub output_activation: bool,
    pub precision: Precision,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.input_dim == 0 {
            return Err(Error::Config(format!(
                "network needs depth, width and input_dim >= 1 (got {}, {}, {})",
                self.depth, self.width, self.input_dim
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut sizes = vec![self.input_dim];
        sizes.extend(std::iter::repeat_n(self.width, self.depth));
        sizes.push(1);
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Multilayer perceptron with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    config: NetworkConfig,
    /// Alternating weight (`fan_in x fan_out`) and bias (`1 x fan_out`) arrays.
    params: Vec<Array2<T>>,
}

/// Tape handles for a network's parameters.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> Mlp<T> {
    /// Xavier-uniform weights and zero biases.
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![config.input_dim];
        sizes.extend(std::iter::repeat_n(config.width, config.depth));
        sizes.push(1);
        let mut params = Vec::with_capacity(2 * (sizes.len() - 1));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Array2::from_shape_fn((fan_in, fan_out), |_| T::lit(rng.gen_range(-limit..limit)));
            params.push(weights);
            params.push(Array2::zeros((1, fan_out)));
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: NetworkConfig, params: Vec<Array2<T>>) -> Result<Self> {
        config.validate()?;
        let mut sizes = vec![config.input_dim];
        sizes.extend(std::iter::repeat_n(config.width, config.depth));
        sizes.push(1);
        let expected: Vec<(usize, usize)> = sizes
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect();
        let got: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
        if expected != got {
            return Err(Error::Config(format!(
                "parameter shapes {got:?} do not match network {expected:?}"
            )));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[Array2<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<T>] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Records the parameters as leaves on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams {
            vars: self.params.iter().map(|p| tape.leaf(p.clone())).collect(),
        }
    }

    /// Network output and its pure input derivatives as a stacked jet.
    ///
    /// `orders[a]` is the highest derivative order needed along input axis `a`.
    pub fn jet(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        points: &Array2<T>,
        orders: &[usize],
    ) -> Result<(Var, JetLayout)> {
        let (n, d) = points.dim();
        if d != self.config.input_dim || orders.len() != d {
            return Err(Error::domain(format!(
                "expected {} coordinates, got points with {d} and orders {orders:?}",
                self.config.input_dim
            )));
        }
        if let Some(k) = orders.iter().find(|&&k| k > JetLayout::MAX_ORDER) {
            return Err(Error::domain(format!("derivative order {k} is not supported")));
        }
        let layout = JetLayout::new(n, orders.to_vec());
        let mut input = Array2::<T>::zeros((layout.channels() * n, d));
        input.slice_mut(ndarray::s![0..n, ..]).assign(points);
        for (axis, &k) in orders.iter().enumerate() {
            if k > 0 {
                let c = layout.channel(axis, 1);
                input
                    .slice_mut(ndarray::s![c * n..(c + 1) * n, axis])
                    .fill(T::one());
            }
        }
        let mut h = tape.leaf(input);
        let layers = self.params.len() / 2;
        for l in 0..layers {
            let z = tape.matmul(h, bound.vars[2 * l]);
            let z = tape.add_bias(z, bound.vars[2 * l + 1], n);
            h = if l + 1 < layers || self.config.output_activation {
                tape.activation(z, self.config.activation, &layout)
            } else {
                z
            };
        }
        Ok((h, layout))
    }

    /// Plain forward pass without derivatives or a tape.
    pub fn forward(&self, points: &Array2<T>) -> Result<Array1<T>> {
        if points.ncols() != self.config.input_dim {
            return Err(Error::domain(format!(
                "expected {} coordinates, got {}",
                self.config.input_dim,
                points.ncols()
            )));
        }
        let layers = self.params.len() / 2;
        let mut h = points.clone();
        for l in 0..layers {
            let mut z = h.dot(&self.params[2 * l]);
            z += &self.params[2 * l + 1];
            if l + 1 < layers || self.config.output_activation {
                let act = self.config.activation;
                z.mapv_inplace(|v| act.derivatives(v)[0]);
            }
            h = z;
        }
        Ok(h.index_axis_move(Axis(1), 0))
    }
}

/// Algebraic wrappers `u = A(x) N(x) + B(x)` that satisfy initial and
/// boundary data exactly. Coordinates are ordered `(x, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialSolution {
    Identity,
    /// `t x (1 - x) N + sin(20 pi x)`.
    HeatHard,
    /// `t (1 - x^2) N - sin(pi x)`.
    BurgersHard,
}

impl TrialSolution {
    /// `(d^k A / d axis^k, d^k B / d axis^k)` at a point.
    pub fn coefficient_derivs(self, p: &[f64], axis: usize, order: usize) -> (f64, f64) {
        match self {
            TrialSolution::Identity => (if order == 0 { 1.0 } else { 0.0 }, 0.0),
            TrialSolution::HeatHard => {
                let (x, t) = (p[0], p[1]);
                let w = 20.0 * PI;
                let b = sin_deriv(w, x, order);
                match (axis, order) {
                    (_, 0) => (t * x * (1.0 - x), b),
                    (0, 1) => (t * (1.0 - 2.0 * x), b),
                    (0, 2) => (-2.0 * t, b),
                    (0, _) => (0.0, b),
                    (_, 1) => (x * (1.0 - x), 0.0),
                    _ => (0.0, 0.0),
                }
            }
            TrialSolution::BurgersHard => {
                let (x, t) = (p[0], p[1]);
                let b = -sin_deriv(PI, x, order);
                match (axis, order) {
                    (_, 0) => (t * (1.0 - x * x), b),
                    (0, 1) => (-2.0 * t * x, b),
                    (0, 2) => (-2.0 * t, b),
                    (0, _) => (0.0, b),
                    (_, 1) => (1.0 - x * x, 0.0),
                    _ => (0.0, 0.0),
                }
            }
        }
    }

    pub fn input_dim(self) -> Option<usize> {
        match self {
            TrialSolution::Identity => None,
            TrialSolution::HeatHard | TrialSolution::BurgersHard => Some(2),
        }
    }

    /// Wraps plain network values.
    pub fn apply(self, p: &[f64], net: f64) -> f64 {
        let (a, b) = self.coefficient_derivs(p, 0, 0);
        a * net + b
    }
}

/// k-th derivative of `sin(w x)`.
fn sin_deriv(w: f64, x: f64, k: usize) -> f64 {
    let wk = w.powi(k as i32);
    match k % 4 {
        0 => wk * (w * x).sin(),
        1 => wk * (w * x).cos(),
        2 => -wk * (w * x).sin(),
        _ => -wk * (w * x).cos(),
    }
}

/// A scalar field and its pure derivatives, one `n x 1` tape node per channel.
#[derive(Debug, Clone)]
pub struct FieldJet {
    layout: JetLayout,
    blocks: Vec<Var>,
}

impl FieldJet {
    pub fn layout(&self) -> &JetLayout {
        &self.layout
    }

    pub fn value(&self) -> Var {
        self.blocks[0]
    }

    /// The `order`-th pure derivative along `axis`.
    pub fn d(&self, axis: usize, order: usize) -> Result<Var> {
        if order == 0 {
            return Ok(self.blocks[0]);
        }
        match self.layout.orders.get(axis) {
            Some(&k) if order <= k => Ok(self.blocks[self.layout.channel(axis, order)]),
            _ => Err(Error::domain(format!(
                "derivative of order {order} along axis {axis} was not requested"
            ))),
        }
    }
}

/// Anything that can produce a field jet at a batch of points.
pub trait JetSource<T: Real> {
    fn input_dim(&self) -> usize;
    fn field_jet(&self, tape: &mut Tape<T>, points: &Array2<T>, orders: &[usize])
        -> Result<FieldJet>;
}

/// Network plus trial wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub net: Mlp<T>,
    pub trial: TrialSolution,
}

impl<T: Real> Model<T> {
    pub fn new(net: Mlp<T>, trial: TrialSolution) -> Result<Self> {
        if let Some(d) = trial.input_dim() {
            if d != net.config().input_dim {
                return Err(Error::Config(format!(
                    "trial solution needs {d} inputs, network has {}",
                    net.config().input_dim
                )));
            }
        }
        Ok(Self { net, trial })
    }

    /// Binds parameters on a tape for one loss evaluation.
    pub fn bind<'m>(&'m self, tape: &mut Tape<T>) -> BoundModel<'m, T> {
        BoundModel {
            model: self,
            params: self.net.bind(tape),
        }
    }

    /// Wrapped field values.
    pub fn forward(&self, points: &Array2<T>) -> Result<Array1<T>> {
        let net = self.net.forward(points)?;
        if self.trial == TrialSolution::Identity {
            return Ok(net);
        }
        Ok(Array1::from_iter(points.rows().into_iter().zip(net.iter()).map(
            |(p, &v)| {
                let p: Vec<f64> = p.iter().map(|c| c.f64()).collect();
                T::lit(self.trial.apply(&p, v.f64()))
            },
        )))
    }

    /// A single pure derivative of the wrapped field. `multi_index[a]` is the
    /// order along axis `a`; at most one entry may be nonzero.
    pub fn derivative(&self, points: &Array2<T>, multi_index: &[usize]) -> Result<Array1<T>> {
        let nonzero: Vec<usize> = (0..multi_index.len())
            .filter(|&a| multi_index[a] > 0)
            .collect();
        if nonzero.len() > 1 {
            return Err(Error::domain(format!(
                "mixed partial derivatives {multi_index:?} are not supported"
            )));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let jet = bound.field_jet(&mut tape, points, multi_index)?;
        let var = match nonzero.first() {
            Some(&a) => jet.d(a, multi_index[a])?,
            None => jet.value(),
        };
        Ok(tape.value(var).column(0).to_owned())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: Checkpoint::FORMAT.to_string(),
            version: Checkpoint::VERSION,
            precision: T::PRECISION,
            network: self.net.config().clone(),
            trial: self.trial,
            params: self
                .net
                .params()
                .iter()
                .map(|p| Tensor {
                    shape: [p.nrows(), p.ncols()],
                    data: p.iter().map(|v| v.f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.check_header()?;
        if ck.precision != T::PRECISION {
            return Err(Error::Config(format!(
                "checkpoint stores {} precision, requested {}",
                ck.precision,
                T::PRECISION
            )));
        }
        let params = ck
            .params
            .iter()
            .map(|t| {
                Array2::from_shape_vec(
                    (t.shape[0], t.shape[1]),
                    t.data.iter().map(|&v| T::lit(v)).collect(),
                )
                .map_err(|e| Error::Serde(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(Mlp::from_params(ck.network.clone(), params)?, ck.trial)
    }
}

/// A model whose parameters are leaves on a particular tape.
pub struct BoundModel<'m, T> {
    model: &'m Model<T>,
    params: BoundParams,
}

impl<T: Real> BoundModel<'_, T> {
    pub fn params(&self) -> &BoundParams {
        &self.params
    }
}

impl<T: Real> JetSource<T> for BoundModel<'_, T> {
    fn input_dim(&self) -> usize {
        self.model.net.config().input_dim
    }

    fn field_jet(
        &self,
        tape: &mut Tape<T>,
        points: &Array2<T>,
        orders: &[usize],
    ) -> Result<FieldJet> {
        let (stacked, layout) = self.model.net.jet(tape, &self.params, points, orders)?;
        let n = layout.n;
        let raw: Vec<Var> = (0..layout.channels())
            .map(|c| tape.rows(stacked, c * n, n))
            .collect();
        if self.model.trial == TrialSolution::Identity {
            return Ok(FieldJet {
                layout,
                blocks: raw,
            });
        }
        let trial = self.model.trial;
        let coords: Vec<Vec<f64>> = points
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.f64()).collect())
            .collect();
        let coef = |axis: usize, order: usize| -> (Array2<T>, Array2<T>) {
            let mut a = Array2::zeros((n, 1));
            let mut b = Array2::zeros((n, 1));
            for (i, p) in coords.iter().enumerate() {
                let (ai, bi) = trial.coefficient_derivs(p, axis, order);
                a[[i, 0]] = T::lit(ai);
                b[[i, 0]] = T::lit(bi);
            }
            (a, b)
        };
        let mut blocks = vec![raw[0]; layout.channels()];
        let (a0, b0) = coef(0, 0);
        let v = tape.mul_const(raw[0], a0.clone());
        blocks[0] = tape.add_const(v, b0);
        for (axis, &k) in layout.orders.iter().enumerate() {
            let a_derivs: Vec<(Array2<T>, Array2<T>)> = (0..=k).map(|j| coef(axis, j)).collect();
            for order in 1..=k {
                let mut acc: Option<Var> = None;
                for j in 0..=order {
                    let a_j = &a_derivs[j].0;
                    if a_j.iter().all(|v| *v == T::zero()) {
                        continue;
                    }
                    let nj = raw[layout.channel(axis, order - j)];
                    let term = tape.mul_const(nj, a_j * T::lit(binomial(order, j)));
                    acc = Some(match acc {
                        Some(s) => tape.add(s, term),
                        None => term,
                    });
                }
                let b_k = a_derivs[order].1.clone();
                let var = match acc {
                    Some(s) => tape.add_const(s, b_k),
                    None => tape.leaf(b_k),
                };
                blocks[layout.channel(axis, order)] = var;
            }
        }
        Ok(FieldJet { layout, blocks })
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Closed-form field used to exercise residual operators without a network.
pub struct AnalyticField<F> {
    dim: usize,
    /// `f(point, axis, order)` returns the pure derivative (order 0 is the value).
    f: F,
}

impl<F: Fn(&[f64], usize, usize) -> f64> AnalyticField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<T: Real, F: Fn(&[f64], usize, usize) -> f64> JetSource<T> for AnalyticField<F> {
    fn input_dim(&self) -> usize {
        self.dim
    }

    fn field_jet(
        &self,
        tape: &mut Tape<T>,
        points: &Array2<T>,
        orders: &[usize],
    ) -> Result<FieldJet> {
        if points.ncols() != self.dim || orders.len() != self.dim {
            return Err(Error::domain("analytic field dimension mismatch"));
        }
        let layout = JetLayout::new(points.nrows(), orders.to_vec());
        let coords: Vec<Vec<f64>> = points
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.f64()).collect())
            .collect();
        let mut block = |axis: usize, order: usize| {
            let col = Array2::from_shape_fn((coords.len(), 1), |(i, _)| {
                T::lit((self.f)(&coords[i], axis, order))
            });
            tape.leaf(col)
        };
        let mut blocks = vec![block(0, 0)];
        for (axis, &k) in orders.iter().enumerate() {
            for order in 1..=k {
                blocks.push(block(axis, order));
            }
        }
        Ok(FieldJet { layout, blocks })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Self-describing JSON checkpoint; values are stored as f64 regardless of precision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub precision: Precision,
    pub network: NetworkConfig,
    pub trial: TrialSolution,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub const FORMAT: &'static str = "rrapinn-checkpoint";
    pub const VERSION: u32 = 1;

    fn check_header(&self) -> Result<()> {
        if self.format != Self::FORMAT || self.version != Self::VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        ck.check_header()?;
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(act: Activation, out_act: bool, dim: usize) -> NetworkConfig {
        NetworkConfig {
            input_dim: dim,
            depth: 2,
            width: 5,
            activation: act,
            output_activation: out_act,
            precision: Precision::Double,
        }
    }

    fn model(trial: TrialSolution, act: Activation, seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(tiny(act, trial == TrialSolution::BurgersHard, 2), &mut rng).unwrap();
        Model::new(net, trial).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, 2), |_| rng.gen_range(0.05..0.95))
    }

    #[test]
    fn num_params_matches() {
        let cfg = tiny(Activation::Tanh, false, 2);
        let m = Mlp::<f64>::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.num_params(), cfg.num_params());
        assert_eq!(cfg.num_params(), 2 * 5 + 5 + 5 * 5 + 5 + 5 + 1);
    }

    #[test]
    fn jet_value_matches_forward() {
        let m = model(TrialSolution::HeatHard, Activation::Silu, 3);
        let pts = random_points(7, 1);
        let plain = m.forward(&pts).unwrap();
        let via_jet = m.derivative(&pts, &[0, 0]).unwrap();
        for (a, b) in plain.iter().zip(via_jet.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for trial in [
            TrialSolution::Identity,
            TrialSolution::HeatHard,
            TrialSolution::BurgersHard,
        ] {
            for act in [Activation::Tanh, Activation::Silu] {
                let m = model(trial, act, 11);
                let pts = random_points(5, 2);
                for axis in 0..2 {
                    for order in 1..=3 {
                        let mut idx = [0, 0];
                        idx[axis] = order;
                        let exact = m.derivative(&pts, &idx).unwrap();
                        idx[axis] = order - 1;
                        let h = 1e-5;
                        let mut plus = pts.clone();
                        plus.column_mut(axis).mapv_inplace(|v| v + h);
                        let mut minus = pts.clone();
                        minus.column_mut(axis).mapv_inplace(|v| v - h);
                        let fp = m.derivative(&plus, &idx).unwrap();
                        let fm = m.derivative(&minus, &idx).unwrap();
                        for i in 0..pts.nrows() {
                            let fd = (fp[i] - fm[i]) / (2.0 * h);
                            let scale = exact[i].abs().max(1.0);
                            assert!(
                                (fd - exact[i]).abs() / scale < 1e-6,
                                "{trial:?} {act:?} axis {axis} order {order}: {fd} vs {}",
                                exact[i]
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mixed_partials_are_rejected() {
        let m = model(TrialSolution::Identity, Activation::Tanh, 0);
        let pts = random_points(2, 0);
        assert!(matches!(m.derivative(&pts, &[1, 1]), Err(Error::Domain(_))));
        assert!(matches!(m.derivative(&pts, &[4, 0]), Err(Error::Domain(_))));
    }

    #[test]
    fn heat_wrapper_examples() {
        let m = model(TrialSolution::HeatHard, Activation::Tanh, 5);
        let xs = [0.1, 0.33, 0.8];
        let pts = Array2::from_shape_fn((3, 2), |(i, j)| if j == 0 { xs[i] } else { 0.0 });
        let u = m.forward(&pts).unwrap();
        let ux = m.derivative(&pts, &[1, 0]).unwrap();
        let ut = m.derivative(&pts, &[0, 1]).unwrap();
        let net = m.net.forward(&pts).unwrap();
        for i in 0..3 {
            let x = xs[i];
            assert!((u[i] - (20.0 * PI * x).sin()).abs() < 1e-12);
            assert!((ux[i] - 20.0 * PI * (20.0 * PI * x).cos()).abs() < 1e-9);
            assert!((ut[i] - x * (1.0 - x) * net[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn burgers_wrapper_boundary() {
        let m = model(TrialSolution::BurgersHard, Activation::Tanh, 5);
        let pts = ndarray::array![[1.0, 0.3], [-1.0, 0.9], [0.4, 0.0]];
        let u = m.forward(&pts).unwrap();
        assert!(u[0].abs() < 1e-12 && u[1].abs() < 1e-12);
        assert!((u[2] + (PI * 0.4).sin()).abs() < 1e-12);
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let cfg = NetworkConfig {
            input_dim: 2,
            depth: 1,
            width: 4,
            activation: Activation::Tanh,
            output_activation: false,
            precision: Precision::Double,
        };
        let net = Mlp::<f64>::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let mut m = Model::new(net, TrialSolution::HeatHard).unwrap();
        let pts = random_points(6, 4);
        let loss = |m: &Model<f64>, grads: bool| {
            let mut tape = Tape::new();
            let b = m.bind(&mut tape);
            let jet = b.field_jet(&mut tape, &pts, &[2, 1]).unwrap();
            let ut = jet.d(1, 1).unwrap();
            let uxx = jet.d(0, 2).unwrap();
            let r = tape.scale(uxx, 1e-3);
            let r = tape.sub(ut, r);
            let l = tape.mean_square(r);
            let g = grads.then(|| {
                let g = tape.backward(l);
                b.params()
                    .vars()
                    .iter()
                    .map(|v| g.get(*v).unwrap().clone())
                    .collect::<Vec<_>>()
            });
            (tape.scalar(l), g)
        };
        let (_, g) = loss(&m, true);
        let g = g.unwrap();
        let h = 1e-6;
        for p in 0..g.len() {
            for idx in 0..g[p].len() {
                let orig = m.net.params()[p].as_slice().unwrap()[idx];
                m.net.params_mut()[p].as_slice_mut().unwrap()[idx] = orig + h;
                let (lp, _) = loss(&m, false);
                m.net.params_mut()[p].as_slice_mut().unwrap()[idx] = orig - h;
                let (lm, _) = loss(&m, false);
                m.net.params_mut()[p].as_slice_mut().unwrap()[idx] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let an = g[p].as_slice().unwrap()[idx];
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                    "param {p}[{idx}]: fd {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(TrialSolution::BurgersHard, Activation::Tanh, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        m.checkpoint().save(&path).unwrap();
        let back = Model::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(Model::<f32>::from_checkpoint(&m.checkpoint()).is_err());
    }
}
