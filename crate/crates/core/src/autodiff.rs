//! A small reverse-mode tape over dense 2-D arrays.
//!
//! Input-space derivatives of the network are carried forward as Taylor jets:
//! a jet stacks the value block and, for every coordinate axis, the pure
//! directional derivatives up to order 3 into one `(C * n) x width` array.
//! Linear layers act on all blocks with a single matmul (bias only on the
//! value block) and [`Tape::activation`] applies Faà di Bruno's formula in one
//! fused node. Reverse mode over the tape then yields parameter gradients of
//! any loss built from those derivatives.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Smooth activation functions with closed-form derivatives up to order 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Silu,
}

impl Activation {
    /// `[f, f', f'', f''', f'''']` at `z`.
    #[inline]
    pub fn derivatives<T: Real>(self, z: T) -> [T; 5] {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            Activation::Tanh => {
                let h = z.tanh();
                let h2 = h * h;
                let d1 = one - h2;
                let d2 = -two * h * d1;
                let d3 = -two * d1 * (one - T::lit(3.0) * h2);
                let d4 = T::lit(8.0) * h * (two - T::lit(3.0) * h2) * d1;
                [h, d1, d2, d3, d4]
            }
            Activation::Silu => {
                let sg = one / (one + (-z).exp());
                let a = one - two * sg;
                let s1 = sg * (one - sg);
                let s2 = s1 * a;
                let s3 = s2 * a - two * s1 * s1;
                let s4 = s3 * a - T::lit(6.0) * s1 * s2;
                [
                    z * sg,
                    sg + z * s1,
                    two * s1 + z * s2,
                    T::lit(3.0) * s2 + z * s3,
                    T::lit(4.0) * s3 + z * s4,
                ]
            }
        }
    }
}

/// Channel layout of a stacked jet: block 0 is the value, then for each axis
/// its pure derivatives of order `1..=orders[axis]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JetLayout {
    pub n: usize,
    pub orders: Vec<usize>,
}

impl JetLayout {
    pub const MAX_ORDER: usize = 3;

    pub fn new(n: usize, orders: Vec<usize>) -> Self {
        assert!(
            orders.iter().all(|&k| k <= Self::MAX_ORDER),
            "jet order above {}",
            Self::MAX_ORDER
        );
        Self { n, orders }
    }

    pub fn channels(&self) -> usize {
        1 + self.orders.iter().sum::<usize>()
    }

    /// Block index of the `order`-th derivative along `axis` (order 0 is the value).
    pub fn channel(&self, axis: usize, order: usize) -> usize {
        if order == 0 {
            return 0;
        }
        debug_assert!(order <= self.orders[axis]);
        1 + self.orders[..axis].iter().sum::<usize>() + order - 1
    }
}

struct ActivationNode<T> {
    z: Var,
    layout: JetLayout,
    /// f', f'', f''', f'''' evaluated on the value block.
    derivs: [Array2<T>; 4],
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    AddBias { x: Var, bias: Var, rows: usize },
    Activation(Box<ActivationNode<T>>),
    Rows { x: Var, start: usize, len: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Array2<T>),
    MeanSquare(Var),
    Scalar { x: Var, grad: Array2<T> },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

/// Records operations so that gradients of a scalar root can be pulled back.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    /// A leaf: parameters and constants alike. Gradients reach every leaf.
    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// Adds a `1 x w` bias row to the first `rows` rows of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var, rows: usize) -> Var {
        let mut v = self.value(x).clone();
        {
            let b = self.value(bias).row(0).to_owned();
            let mut head = v.slice_mut(s![0..rows, ..]);
            head += &b;
        }
        self.push(v, Op::AddBias { x, bias, rows })
    }

    /// Applies `act` to a stacked jet, propagating derivatives along each axis.
    pub fn activation(&mut self, z: Var, act: Activation, layout: &JetLayout) -> Var {
        let zv = self.value(z);
        let (rows, w) = zv.dim();
        let n = layout.n;
        assert_eq!(rows, layout.channels() * n, "jet layout does not match input rows");
        let block = n * w;
        let zs = zv.as_standard_layout();
        let zs = zs.as_slice().expect("contiguous");

        let mut out = vec![T::zero(); rows * w];
        let mut d = [
            vec![T::zero(); block],
            vec![T::zero(); block],
            vec![T::zero(); block],
            vec![T::zero(); block],
        ];
        for i in 0..block {
            let f = act.derivatives(zs[i]);
            out[i] = f[0];
            d[0][i] = f[1];
            d[1][i] = f[2];
            d[2][i] = f[3];
            d[3][i] = f[4];
        }
        let three = T::lit(3.0);
        for (axis, &k) in layout.orders.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let c1 = layout.channel(axis, 1);
            let z1 = &zs[c1 * block..(c1 + 1) * block];
            for i in 0..block {
                out[c1 * block + i] = d[0][i] * z1[i];
            }
            if k >= 2 {
                let c2 = c1 + 1;
                let z2 = &zs[c2 * block..(c2 + 1) * block];
                for i in 0..block {
                    out[c2 * block + i] = d[1][i] * z1[i] * z1[i] + d[0][i] * z2[i];
                }
                if k >= 3 {
                    let c3 = c1 + 2;
                    let z3 = &zs[c3 * block..(c3 + 1) * block];
                    for i in 0..block {
                        let a = z1[i];
                        out[c3 * block + i] =
                            d[2][i] * a * a * a + three * d[1][i] * a * z2[i] + d[0][i] * z3[i];
                    }
                }
            }
        }
        let to_arr = |v: Vec<T>, r: usize| Array2::from_shape_vec((r, w), v).expect("shape");
        let [d1, d2, d3, d4] = d;
        let node = ActivationNode {
            z,
            layout: layout.clone(),
            derivs: [to_arr(d1, n), to_arr(d2, n), to_arr(d3, n), to_arr(d4, n)],
        };
        self.push(to_arr(out, rows), Op::Activation(Box::new(node)))
    }

    /// Row block `[start, start + len)` of `x`.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x).slice(s![start..start + len, ..]).to_owned();
        self.push(v, Op::Rows { x, start, len })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Array2<T>) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    /// Adds a constant array (recorded as a leaf).
    pub fn add_const(&mut self, a: Var, c: Array2<T>) -> Var {
        let c = self.leaf(c);
        self.add(a, c)
    }

    /// `mean(x^2)` over all entries, as a `1 x 1` node.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().fold(T::zero(), |acc, &e| acc + e * e) / T::lit(v.len() as f64);
        self.push(Array2::from_elem((1, 1), m), Op::MeanSquare(x))
    }

    /// A scalar function of `x` whose value and local gradient were computed
    /// elsewhere (the tail penalties).
    pub fn scalar_fn(&mut self, x: Var, value: T, grad: Array2<T>) -> Var {
        assert_eq!(grad.dim(), self.value(x).dim(), "local gradient shape mismatch");
        self.push(Array2::from_elem((1, 1), value), Op::Scalar { x, grad })
    }

    /// `sum_i w_i * x_i` over `1 x 1` nodes; zero weights are skipped entirely.
    pub fn weighted_sum(&mut self, terms: &[(T, Var)]) -> Option<Var> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            if w == T::zero() {
                continue;
            }
            let term = if w == T::one() { v } else { self.scale(v, w) };
            acc = Some(match acc {
                None => term,
                Some(a) => self.add(a, term),
            });
        }
        acc
    }

    /// Reverse sweep from a `1 x 1` root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddBias { x, bias, rows } => {
                    let gb = g.slice(s![0..*rows, ..]).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *x, g);
                }
                Op::Activation(node) => {
                    let gz = self.activation_backward(node, &g);
                    accumulate(&mut grads, node.z, gz);
                }
                Op::Rows { x, start, len } => {
                    let shape = self.value(*x).dim();
                    let entry = grads[x.0].get_or_insert_with(|| Array2::zeros(shape));
                    let mut dst = entry.slice_mut(s![*start..*start + *len, ..]);
                    dst += &g;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.mapv(|v| -v));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::MulConst(a, c) => accumulate(&mut grads, *a, g * c),
                Op::MeanSquare(x) => {
                    let xv = self.value(*x);
                    let k = g[[0, 0]] * T::lit(2.0) / T::lit(xv.len() as f64);
                    accumulate(&mut grads, *x, xv * k);
                }
                Op::Scalar { x, grad } => accumulate(&mut grads, *x, grad * g[[0, 0]]),
            }
            // Interior gradients are not retained.
        }
        Gradients { grads }
    }

    fn activation_backward(&self, node: &ActivationNode<T>, g: &Array2<T>) -> Array2<T> {
        let zv = self.value(node.z);
        let (rows, w) = zv.dim();
        let layout = &node.layout;
        let block = layout.n * w;
        let zs = zv.as_standard_layout();
        let zs = zs.as_slice().expect("contiguous");
        let gs = g.as_standard_layout();
        let gs = gs.as_slice().expect("contiguous");
        let f1 = node.derivs[0].as_slice().expect("contiguous");
        let f2 = node.derivs[1].as_slice().expect("contiguous");
        let f3 = node.derivs[2].as_slice().expect("contiguous");
        let f4 = node.derivs[3].as_slice().expect("contiguous");
        let two = T::lit(2.0);
        let three = T::lit(3.0);

        let mut gz = vec![T::zero(); rows * w];
        for i in 0..block {
            gz[i] = gs[i] * f1[i];
        }
        for (axis, &k) in layout.orders.iter().enumerate() {
            if k == 0 {
                continue;
            }
            let c1 = layout.channel(axis, 1);
            let off1 = c1 * block;
            for i in 0..block {
                let z1 = zs[off1 + i];
                let g1 = gs[off1 + i];
                let mut g0 = g1 * f2[i] * z1;
                let mut gz1 = g1 * f1[i];
                if k >= 2 {
                    let off2 = off1 + block;
                    let z2 = zs[off2 + i];
                    let g2 = gs[off2 + i];
                    g0 = g0 + g2 * (f3[i] * z1 * z1 + f2[i] * z2);
                    gz1 = gz1 + two * g2 * f2[i] * z1;
                    let mut gz2 = g2 * f1[i];
                    if k >= 3 {
                        let off3 = off2 + block;
                        let z3 = zs[off3 + i];
                        let g3 = gs[off3 + i];
                        g0 = g0
                            + g3 * (f4[i] * z1 * z1 * z1 + three * f3[i] * z1 * z2 + f2[i] * z3);
                        gz1 = gz1 + three * g3 * (f3[i] * z1 * z1 + f2[i] * z2);
                        gz2 = gz2 + three * g3 * f2[i] * z1;
                        gz[off3 + i] = g3 * f1[i];
                    }
                    gz[off2 + i] = gz2;
                }
                gz[off1 + i] = gz1;
                gz[i] = gz[i] + g0;
            }
        }
        Array2::from_shape_vec((rows, w), gz).expect("shape")
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

/// Gradients of a backward sweep, retained for leaves only.
pub struct Gradients<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf; `None` if the leaf does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn activation_derivatives_match_finite_differences() {
        for act in [Activation::Tanh, Activation::Silu] {
            for &z in &[-2.3f64, -0.4, 0.0, 0.7, 1.9] {
                let d = act.derivatives(z);
                let h = 1e-5;
                for k in 0..4 {
                    let fd = (act.derivatives(z + h)[k] - act.derivatives(z - h)[k]) / (2.0 * h);
                    assert!((fd - d[k + 1]).abs() < 1e-7, "{act:?} order {} at {z}", k + 1);
                }
            }
        }
    }

    #[test]
    fn layout_channels() {
        let l = JetLayout::new(5, vec![3, 1]);
        assert_eq!(l.channels(), 5);
        assert_eq!(l.channel(0, 0), 0);
        assert_eq!(l.channel(0, 3), 3);
        assert_eq!(l.channel(1, 1), 4);
    }

    #[test]
    fn elementwise_backward() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = tape.leaf(array![[0.5, -1.0], [2.0, 0.0]]);
        let p = tape.mul(a, b);
        let q = tape.sub(p, a);
        let r = tape.mean_square(q);
        let grads = tape.backward(r);
        // d/da mean((ab - a)^2) = 2 (ab - a)(b - 1) / 4
        let av = tape.value(a);
        let bv = tape.value(b);
        let expected = (av * bv - av) * (bv - 1.0) * 0.5;
        let ga = grads.get(a).unwrap();
        for (x, y) in ga.iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn weighted_sum_skips_zero_weights() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(array![[2.0]]);
        let b = tape.leaf(array![[3.0]]);
        let s = tape.weighted_sum(&[(0.0, a), (2.0, b)]).unwrap();
        assert_eq!(tape.scalar(s), 6.0);
        let g = tape.backward(s);
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap()[[0, 0]], 2.0);
        assert!(tape.weighted_sum(&[(0.0, a)]).is_none());
    }
}
