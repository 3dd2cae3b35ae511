use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{kdv_soliton, EvalPoints, ProblemKind, ProblemSpec, JUMP_INTERFACE};

/// Matched point pairs, e.g. the two ends of a periodic domain.
#[derive(Debug, Clone, PartialEq)]
pub struct PointPairs {
    pub minus: Array2<f64>,
    pub plus: Array2<f64>,
}

/// One epoch's collocation data.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub seed: u64,
    pub interior: Array2<f64>,
    /// Dirichlet points and target values.
    pub boundary: Option<(Array2<f64>, Array1<f64>)>,
    /// Initial-time points and target values.
    pub initial: Option<(Array2<f64>, Array1<f64>)>,
    pub periodic: Option<PointPairs>,
    pub interface: Option<PointPairs>,
}

/// Mixes a run seed and an epoch index into a sampler seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    // splitmix64 finalizer over the pair.
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(epoch as u64)
        .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn uniform_box(rng: &mut ChaCha8Rng, n: usize, lo: [f64; 2], hi: [f64; 2]) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 2));
    for i in 0..n {
        for a in 0..2 {
            pts[[i, a]] = rng.gen_range(lo[a]..hi[a]);
        }
    }
    pts
}

/// Points spread over the four edges of the unit square.
fn square_boundary(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let mut pts = Array2::zeros((n, 2));
    for i in 0..n {
        let s: f64 = rng.gen();
        let (x, y) = match rng.gen_range(0..4) {
            0 => (s, 0.0),
            1 => (s, 1.0),
            2 => (0.0, s),
            _ => (1.0, s),
        };
        pts[[i, 0]] = x;
        pts[[i, 1]] = y;
    }
    pts
}

pub(super) fn sample(spec: &ProblemSpec, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = &spec.sampler;
    let (lo, hi) = (spec.lower, spec.upper);
    let mut set = SampleSet {
        seed,
        interior: Array2::zeros((0, 2)),
        boundary: None,
        initial: None,
        periodic: None,
        interface: None,
    };
    match spec.kind {
        ProblemKind::Heat1d | ProblemKind::Burgers1d | ProblemKind::Poisson2d => {
            set.interior = uniform_box(&mut rng, cfg.n_int, lo, hi);
        }
        ProblemKind::Kdv1d => {
            set.interior = uniform_box(&mut rng, cfg.n_int, lo, hi);
            if cfg.n_ic > 0 {
                let mut pts = Array2::zeros((cfg.n_ic, 2));
                for i in 0..cfg.n_ic {
                    pts[[i, 0]] = rng.gen_range(lo[0]..hi[0]);
                }
                let target = pts.rows().into_iter().map(|p| kdv_soliton(p[0], 0.0, 0, 0)).collect();
                set.initial = Some((pts, target));
            }
            if cfg.n_bnd > 0 {
                let times: Vec<f64> = (0..cfg.n_bnd).map(|_| rng.gen_range(lo[1]..hi[1])).collect();
                let end = |x: f64| Array2::from_shape_fn((times.len(), 2), |(i, a)| if a == 0 { x } else { times[i] });
                set.periodic = Some(PointPairs {
                    minus: end(lo[0]),
                    plus: end(hi[0]),
                });
            }
        }
        ProblemKind::Poisson2dJump => {
            let mut pts = Array2::zeros((cfg.n_int, 2));
            for i in 0..cfg.n_int {
                let x = if rng.gen::<f64>() < cfg.iface_bias {
                    rng.gen_range(JUMP_INTERFACE - cfg.iface_band..JUMP_INTERFACE + cfg.iface_band)
                } else {
                    rng.gen_range(lo[0]..hi[0])
                };
                pts[[i, 0]] = x;
                pts[[i, 1]] = rng.gen_range(lo[1]..hi[1]);
            }
            set.interior = pts;
            if cfg.n_iface > 0 {
                let ys: Vec<f64> = (0..cfg.n_iface).map(|_| rng.gen_range(lo[1]..hi[1])).collect();
                let side = |x: f64| Array2::from_shape_fn((ys.len(), 2), |(i, a)| if a == 0 { x } else { ys[i] });
                set.interface = Some(PointPairs {
                    minus: side(JUMP_INTERFACE - spec.iface_offset),
                    plus: side(JUMP_INTERFACE + spec.iface_offset),
                });
            }
        }
    }
    if matches!(spec.kind, ProblemKind::Poisson2d | ProblemKind::Poisson2dJump) && cfg.n_bnd > 0 {
        let pts = square_boundary(&mut rng, cfg.n_bnd);
        set.boundary = Some((pts, Array1::zeros(cfg.n_bnd)));
    }
    set
}

pub(super) fn eval_points(spec: &ProblemSpec) -> Array2<f64> {
    let (lo, hi) = (spec.lower, spec.upper);
    match spec.eval {
        EvalPoints::Grid { nx, ny } => {
            let coord = |a: usize, k: usize, n: usize| {
                if n == 1 {
                    0.5 * (lo[a] + hi[a])
                } else {
                    lo[a] + (hi[a] - lo[a]) * k as f64 / (n - 1) as f64
                }
            };
            Array2::from_shape_fn((nx * ny, 2), |(i, a)| {
                if a == 0 {
                    coord(0, i % nx, nx)
                } else {
                    coord(1, i / nx, ny)
                }
            })
        }
        EvalPoints::Random { n } => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_E7A1);
            uniform_box(&mut rng, n, lo, hi)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic() {
        for kind in ProblemKind::ALL {
            let spec = ProblemSpec::new(kind);
            assert_eq!(spec.sample(17), spec.sample(17));
            assert_ne!(spec.sample(17).interior, spec.sample(18).interior);
        }
    }

    #[test]
    fn poisson_points_inside_domain() {
        let spec = ProblemSpec::new(ProblemKind::Poisson2d);
        let s = spec.sample(1);
        assert_eq!(s.interior.nrows(), 10_000);
        assert!(s.interior.iter().all(|&v| v > 0.0 && v < 1.0));
        let (b, g) = s.boundary.unwrap();
        assert_eq!(b.nrows(), 200);
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(b
            .rows()
            .into_iter()
            .all(|p| p.iter().any(|&c| c == 0.0 || c == 1.0)));
    }

    #[test]
    fn jump_sampler_oversamples_interface() {
        let spec = ProblemSpec::new(ProblemKind::Poisson2dJump);
        let s = spec.sample(5);
        let near = s
            .interior
            .column(0)
            .iter()
            .filter(|&&x| (x - 0.5).abs() < 0.05)
            .count();
        assert!(near as f64 / s.interior.nrows() as f64 >= 0.25);
        let pairs = s.interface.unwrap();
        assert_eq!(pairs.minus.nrows(), 2000);
        assert!(pairs.minus.column(0).iter().all(|&x| x < 0.5));
        assert!(pairs.plus.column(0).iter().all(|&x| x > 0.5));
    }

    #[test]
    fn epoch_seeds_differ() {
        assert_ne!(epoch_seed(1, 0), epoch_seed(1, 1));
        assert_ne!(epoch_seed(1, 0), epoch_seed(2, 0));
    }

    #[test]
    fn eval_grid_covers_corners() {
        let spec = ProblemSpec::new(ProblemKind::Kdv1d);
        let pts = spec.eval_points();
        assert_eq!(pts.nrows(), 201 * 201);
        assert_eq!(pts.row(0).to_vec(), vec![-10.0, 0.0]);
        assert_eq!(pts.row(pts.nrows() - 1).to_vec(), vec![10.0, 1.0]);
    }
}
