//! Reference solutions computed independently of the training code path.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};

use super::{kdv_soliton, ProblemKind, ProblemSpec, BURGERS_VISCOSITY, JUMP_INTERFACE};
use crate::error::{Error, Result};

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    for i in 0..order {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = order as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Viscous Burgers solution for `u(x, 0) = -sin(pi x)` via the Cole–Hopf
/// transform, integrated with composite 16-point Gauss–Legendre quadrature.
#[derive(Debug, Clone)]
pub struct ColeHopf {
    pub nu: f64,
    pub panels: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ColeHopf {
    pub const GL_ORDER: usize = 16;
    pub const DEFAULT_PANELS: usize = 64;

    pub fn new(nu: f64, panels: usize) -> Result<Self> {
        if !(nu > 0.0) || panels == 0 {
            return Err(Error::domain("Cole-Hopf needs nu > 0 and at least one panel"));
        }
        let (nodes, weights) = gauss_legendre(Self::GL_ORDER);
        Ok(Self {
            nu,
            panels,
            nodes,
            weights,
        })
    }

    pub fn with_panels(&self, panels: usize) -> Result<Self> {
        Self::new(self.nu, panels)
    }

    pub fn eval(&self, x: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return -(PI * x).sin();
        }
        let nu = self.nu;
        let k = 1.0 / (2.0 * PI * nu);
        // Beyond |eta| = L the integrand is below e^{-40} of its peak.
        let half = ((2.0 * k + 40.0) * 4.0 * nu * t).sqrt();
        let width = 2.0 * half / self.panels as f64;
        let exponent = |eta: f64| -(PI * (x - eta)).cos() * k - eta * eta / (4.0 * nu * t);

        let mut etas = Vec::with_capacity(self.panels * self.nodes.len());
        let mut ws = Vec::with_capacity(etas.capacity());
        for p in 0..self.panels {
            let mid = -half + (p as f64 + 0.5) * width;
            for (z, w) in self.nodes.iter().zip(&self.weights) {
                etas.push(mid + 0.5 * width * z);
                ws.push(0.5 * width * w);
            }
        }
        let es: Vec<f64> = etas.iter().map(|&e| exponent(e)).collect();
        let emax = es.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut num, mut den) = (0.0, 0.0);
        for ((eta, e), w) in etas.iter().zip(&es).zip(&ws) {
            let g = w * (e - emax).exp();
            num += g * (PI * (x - eta)).sin();
            den += g;
        }
        -num / den
    }

    /// Evaluates with this panel count and twice as many, failing if they
    /// disagree by more than `tol`.
    pub fn eval_checked(&self, x: f64, t: f64, tol: f64) -> Result<f64> {
        let coarse = self.eval(x, t);
        let fine = self.with_panels(2 * self.panels)?.eval(x, t);
        if (coarse - fine).abs() > tol {
            return Err(Error::Convergence(format!(
                "Cole-Hopf quadrature at ({x}, {t}) changed by {:e} under panel doubling",
                (coarse - fine).abs()
            )));
        }
        Ok(fine)
    }
}

/// Cole–Hopf reference at `(x, t)` points with the given panel count.
pub fn cole_hopf_burgers(points: &Array2<f64>, panels: usize) -> Result<Array1<f64>> {
    let ch = ColeHopf::new(BURGERS_VISCOSITY, panels)?;
    Ok(points.rows().into_iter().map(|p| ch.eval(p[0], p[1])).collect())
}

/// Nodal values on a uniform tensor grid with bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
    /// `values[[i, j]]` sits at `x_i, y_j`.
    pub values: Array2<f64>,
}

impl GridField {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn node(&self, axis: usize, k: usize) -> f64 {
        let n = self.values.shape()[axis];
        self.lower[axis] + (self.upper[axis] - self.lower[axis]) * k as f64 / (n - 1) as f64
    }

    pub fn interpolate(&self, x: f64, y: f64) -> f64 {
        let locate = |axis: usize, v: f64| {
            let n = self.values.shape()[axis];
            let s = (v - self.lower[axis]) / (self.upper[axis] - self.lower[axis]) * (n - 1) as f64;
            let s = s.clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64)
        };
        let (i, fx) = locate(0, x);
        let (j, fy) = locate(1, y);
        let v = &self.values;
        (1.0 - fx) * (1.0 - fy) * v[[i, j]]
            + fx * (1.0 - fy) * v[[i + 1, j]]
            + (1.0 - fx) * fy * v[[i, j + 1]]
            + fx * fy * v[[i + 1, j + 1]]
    }

    /// Sub-grid taking every `step`-th node.
    pub fn coarsen(&self, step: usize) -> GridField {
        GridField {
            lower: self.lower,
            upper: self.upper,
            values: self.values.slice(ndarray::s![..;step, ..;step]).to_owned(),
        }
    }
}

/// Five-point Dirichlet Poisson solve `-Δu = f` on the unit square with
/// `grid_n` nodes per axis and zero boundary values.
///
/// Uses an orthonormal sine transform in `y` and a tridiagonal solve in `x`
/// per mode, then verifies the discrete residual.
pub fn fd_poisson_solve(grid_n: usize, source: impl Fn(f64, f64) -> f64) -> Result<GridField> {
    if grid_n < 3 {
        return Err(Error::domain("grid needs at least 3 nodes per axis"));
    }
    let m = grid_n - 2;
    let h = 1.0 / (grid_n - 1) as f64;
    let h2 = h * h;
    let coord = |k: usize| k as f64 * h;
    let f = Array2::from_shape_fn((m, m), |(i, j)| source(coord(i + 1), coord(j + 1)));

    let norm = (2.0 / (m + 1) as f64).sqrt();
    let sine = Array2::from_shape_fn((m, m), |(j, k)| {
        norm * (PI * ((j + 1) * (k + 1)) as f64 / (m + 1) as f64).sin()
    });
    let fhat = f.dot(&sine);
    let mut uhat = Array2::<f64>::zeros((m, m));
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    for k in 0..m {
        let lambda = (2.0 - 2.0 * (PI * (k + 1) as f64 / (m + 1) as f64).cos()) / h2;
        let diag = 2.0 / h2 + lambda;
        let off = -1.0 / h2;
        // Thomas algorithm.
        c[0] = off / diag;
        d[0] = fhat[[0, k]] / diag;
        for i in 1..m {
            let denom = diag - off * c[i - 1];
            c[i] = off / denom;
            d[i] = (fhat[[i, k]] - off * d[i - 1]) / denom;
        }
        uhat[[m - 1, k]] = d[m - 1];
        for i in (0..m - 1).rev() {
            uhat[[i, k]] = d[i] - c[i] * uhat[[i + 1, k]];
        }
    }
    let interior = uhat.dot(&sine);

    let mut values = Array2::zeros((grid_n, grid_n));
    values
        .slice_mut(ndarray::s![1..grid_n - 1, 1..grid_n - 1])
        .assign(&interior);

    let mut max_res: f64 = 0.0;
    let mut max_f: f64 = 0.0;
    for i in 1..grid_n - 1 {
        for j in 1..grid_n - 1 {
            let lap = (4.0 * values[[i, j]]
                - values[[i - 1, j]]
                - values[[i + 1, j]]
                - values[[i, j - 1]]
                - values[[i, j + 1]])
                / h2;
            max_res = max_res.max((lap - f[[i - 1, j - 1]]).abs());
            max_f = max_f.max(f[[i - 1, j - 1]].abs());
        }
    }
    if max_res > 1e-10 * max_f.max(f64::MIN_POSITIVE) && max_res > 0.0 {
        return Err(Error::Convergence(format!(
            "finite-difference residual {max_res:e} exceeds tolerance"
        )));
    }
    Ok(GridField {
        lower: [0.0, 0.0],
        upper: [1.0, 1.0],
        values,
    })
}

/// Finite-difference reference for the interface problem. Nodes on the
/// interface take the mean of the two one-sided source values.
pub fn fd_poisson_jump_solver(grid_n: usize) -> Result<GridField> {
    if grid_n < 201 || grid_n % 2 == 0 {
        return Err(Error::domain(format!(
            "jump solver needs an odd grid of at least 201 nodes, got {grid_n}"
        )));
    }
    let spec = ProblemSpec::new(ProblemKind::Poisson2dJump);
    let h = 1.0 / (grid_n - 1) as f64;
    fd_poisson_solve(grid_n, |x, y| {
        if (x - JUMP_INTERFACE).abs() < 0.25 * h {
            let s = (PI * x).sin() * (PI * y).sin();
            0.5 * (2.0 * PI * PI * s - 6.0 * PI * PI * s)
        } else {
            spec.source(x, y)
        }
    })
}

/// Closed-form solution of the interface problem, `g(x) sin(pi y)`.
pub fn jump_poisson_exact(x: f64, y: f64) -> f64 {
    let b = 2.0 / (PI / 2.0).sinh();
    let g = if x < JUMP_INTERFACE {
        (PI * x).sin() - b * (PI * x).sinh()
    } else {
        -3.0 * (PI * x).sin() + b * (PI * (1.0 - x)).sinh()
    };
    g * (PI * y).sin()
}

#[derive(Debug, Clone)]
enum Oracle {
    Heat,
    Kdv,
    Poisson,
    Burgers(ColeHopf),
    Grid(GridField),
}

/// Reference solution for one benchmark.
#[derive(Debug, Clone)]
pub struct ReferenceOracle {
    lower: [f64; 2],
    upper: [f64; 2],
    oracle: Oracle,
}

impl ReferenceOracle {
    /// Grid size of the finite-difference reference for the interface problem.
    pub const JUMP_GRID: usize = 401;

    /// Short description of the solver and its resolution for `kind`.
    pub fn solver_tag(kind: ProblemKind) -> String {
        match kind {
            ProblemKind::Heat1d | ProblemKind::Kdv1d | ProblemKind::Poisson2d => "analytic".into(),
            ProblemKind::Burgers1d => format!("cole_hopf_panels_{}", ColeHopf::DEFAULT_PANELS),
            ProblemKind::Poisson2dJump => format!("fd_grid_{}", Self::JUMP_GRID),
        }
    }

    pub fn for_problem(spec: &ProblemSpec) -> Result<Self> {
        let oracle = match spec.kind {
            ProblemKind::Heat1d => Oracle::Heat,
            ProblemKind::Kdv1d => Oracle::Kdv,
            ProblemKind::Poisson2d => Oracle::Poisson,
            ProblemKind::Burgers1d => {
                Oracle::Burgers(ColeHopf::new(BURGERS_VISCOSITY, ColeHopf::DEFAULT_PANELS)?)
            }
            ProblemKind::Poisson2dJump => Oracle::Grid(fd_poisson_jump_solver(Self::JUMP_GRID)?),
        };
        Ok(Self {
            lower: spec.lower,
            upper: spec.upper,
            oracle,
        })
    }

    pub fn eval(&self, points: &Array2<f64>) -> Result<Array1<f64>> {
        if points.ncols() != 2 {
            return Err(Error::domain("reference points need 2 coordinates"));
        }
        let tol = 1e-12;
        points
            .rows()
            .into_iter()
            .map(|p| {
                let (a, b) = (p[0], p[1]);
                if a < self.lower[0] - tol
                    || a > self.upper[0] + tol
                    || b < self.lower[1] - tol
                    || b > self.upper[1] + tol
                {
                    return Err(Error::domain(format!("point ({a}, {b}) is outside the domain")));
                }
                Ok(match &self.oracle {
                    Oracle::Heat => (20.0 * PI * a).sin() * (-b).exp(),
                    Oracle::Kdv => kdv_soliton(a, b, 0, 0),
                    Oracle::Poisson => (PI * a).sin() * (PI * b).sin(),
                    Oracle::Burgers(ch) => ch.eval(a, b),
                    Oracle::Grid(g) => g.interpolate(a, b),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // Exact up to degree 31.
        let i30: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(30)).sum();
        assert!((i30 - 2.0 / 31.0).abs() < 1e-14);
    }

    #[test]
    fn cole_hopf_initial_condition_and_symmetry() {
        let ch = ColeHopf::new(BURGERS_VISCOSITY, 64).unwrap();
        assert_eq!(ch.eval(0.3, 0.0), -(PI * 0.3).sin());
        for &t in &[0.1, 0.5, 1.0] {
            assert!(ch.eval(0.0, t).abs() < 1e-12);
            let a = ch.eval(0.4, t);
            let b = ch.eval(-0.4, t);
            assert!((a + b).abs() < 1e-10);
            assert!(a.abs() <= 1.0);
        }
        // Small t recovers the initial profile.
        assert!((ch.eval(0.5, 1e-6) + 1.0).abs() < 1e-4);
    }

    #[test]
    fn fd_homogeneous_problem_is_zero() {
        let g = fd_poisson_solve(21, |_, _| 0.0).unwrap();
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_manufactured_solution_second_order() {
        let err = |n: usize| {
            let g = fd_poisson_solve(n, |x, y| 2.0 * PI * PI * (PI * x).sin() * (PI * y).sin())
                .unwrap();
            let mut e: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let (x, y) = (g.node(0, i), g.node(1, j));
                    e = e.max((g.values[[i, j]] - (PI * x).sin() * (PI * y).sin()).abs());
                }
            }
            e
        };
        let (e1, e2) = (err(33), err(65));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.1, "order {order}");
    }

    #[test]
    fn jump_exact_solution_is_c1() {
        let h = 1e-7;
        let y = 0.37;
        let l = jump_poisson_exact(0.5 - h, y);
        let r = jump_poisson_exact(0.5 + h, y);
        assert!((l - r).abs() < 1e-5);
        let dl = (jump_poisson_exact(0.5 - h, y) - jump_poisson_exact(0.5 - 2.0 * h, y)) / h;
        let dr = (jump_poisson_exact(0.5 + 2.0 * h, y) - jump_poisson_exact(0.5 + h, y)) / h;
        assert!((dl - dr).abs() < 1e-4);
        assert!(jump_poisson_exact(0.0, y).abs() < 1e-14);
        assert!(jump_poisson_exact(1.0, y).abs() < 1e-14);
    }

    #[test]
    fn jump_solver_rejects_bad_grids() {
        assert!(fd_poisson_jump_solver(200).is_err());
        assert!(fd_poisson_jump_solver(101).is_err());
    }

    #[test]
    fn oracle_rejects_outside_points() {
        let spec = ProblemSpec::new(ProblemKind::Heat1d);
        let o = spec.reference().unwrap();
        assert!(o.eval(&ndarray::array![[1.5, 0.5]]).is_err());
        let v = o.eval(&ndarray::array![[0.025, 0.0]]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_is_exact_for_bilinear_fields() {
        let n = 11;
        let values = Array2::from_shape_fn((n, n), |(i, j)| {
            let (x, y) = (i as f64 / 10.0, j as f64 / 10.0);
            1.0 + 2.0 * x - y + 3.0 * x * y
        });
        let g = GridField {
            lower: [0.0, 0.0],
            upper: [1.0, 1.0],
            values,
        };
        let (x, y) = (0.437, 0.912);
        assert!((g.interpolate(x, y) - (1.0 + 2.0 * x - y + 3.0 * x * y)).abs() < 1e-12);
    }
}
