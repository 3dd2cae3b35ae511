//! Empirical tail-risk measures over a batch of residual magnitudes.
//!
//! Everything here is a pure function of its inputs. The closed-form CVaR
//! (fractional tail average) and the brute-force Rockafellar–Uryasev scan are
//! deliberately computed along separate code paths so that one can serve as an
//! oracle for the other.
//!
//! Order statistics use a stable ascending sort by `(value, original index)`,
//! which makes the tail index set deterministic when values tie. Tied
//! selections always produce the same CVaR value.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Relative tolerance used to snap `(1 - alpha) * N` and `alpha * N` onto an
/// integer when they are integers up to floating rounding (e.g. `0.05 * 100`).
const INTEGER_SNAP: f64 = 1e-9;

/// A finite sample of nonnegative residual magnitudes `R_i = |r(x_i)|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBatch {
    values: Vec<f64>,
}

impl ResidualBatch {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("residual batch must be nonempty"));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0)
        {
            return Err(Error::domain(format!(
                "residual magnitude {i} is {v}; expected finite and >= 0"
            )));
        }
        Ok(Self { values })
    }

    /// Builds a batch from signed residuals by taking magnitudes.
    pub fn from_signed<I: IntoIterator<Item = f64>>(residuals: I) -> Result<Self> {
        Self::new(residuals.into_iter().map(f64::abs).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices sorted ascending by `(value, index)`.
    pub fn ascending_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.values.len()).collect();
        idx.sort_by(|&a, &b| {
            self.values[a]
                .partial_cmp(&self.values[b])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }

    /// Values sorted ascending: `R_(1) <= ... <= R_(N)`.
    pub fn order_statistics(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        v
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0,1), got {alpha}")))
    }
}

fn snap_to_integer(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= INTEGER_SNAP * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

/// 1-based index `ceil(q * n)` of the lowest order statistic whose empirical
/// CDF value reaches `q`, clamped to `[1, n]`.
pub(crate) fn quantile_rank(q: f64, n: usize) -> usize {
    let k = snap_to_integer(q * n as f64).ceil() as usize;
    k.clamp(1, n)
}

/// Tail level with its derived quantities `t = (1-alpha) N`, `m = floor(t)`, `s = t - m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSpec {
    pub alpha: f64,
    pub n: usize,
    pub t: f64,
    pub m: usize,
    pub s: f64,
}

impl TailSpec {
    pub fn new(alpha: f64, n: usize) -> Result<Self> {
        check_alpha(alpha)?;
        if n == 0 {
            return Err(Error::domain("tail spec needs N >= 1"));
        }
        let t = snap_to_integer((1.0 - alpha) * n as f64);
        if t <= 0.0 {
            return Err(Error::domain(format!(
                "tail mass (1-alpha)N = {t} must be positive"
            )));
        }
        let t = t.min(n as f64);
        let m = t.floor() as usize;
        let s = t - m as f64;
        Ok(Self { alpha, n, t, m, s })
    }

    /// True when the tail holds a whole number of samples (`s == 0`).
    pub fn is_integer(&self) -> bool {
        self.s == 0.0
    }
}

/// Empirical CVaR together with its tail set and weighted-mean weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CvarEstimate {
    pub value: f64,
    /// The minimizing `eta*` of the RU objective, `R_(N-m)`.
    pub var_threshold: f64,
    /// Top-`m` indices plus the fractional boundary index when `s > 0`.
    pub tail_indices: Vec<usize>,
    /// `N/t` on the top-`m`, `s N/t` on the boundary element, 0 elsewhere.
    pub weights: Vec<f64>,
    pub spec: TailSpec,
}

impl CvarEstimate {
    /// `(1/N) sum_i w_i R_i`, which equals `value` by construction.
    pub fn weighted_mean(&self, batch: &ResidualBatch) -> f64 {
        let n = batch.len() as f64;
        self.weights
            .iter()
            .zip(batch.values())
            .map(|(w, r)| w * r)
            .sum::<f64>()
            / n
    }
}

/// The alpha-quantile `inf { x : F(x) >= alpha }` of the empirical CDF, i.e. `R_(ceil(alpha N))`.
pub fn empirical_var(batch: &ResidualBatch, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let sorted = batch.order_statistics();
    Ok(sorted[quantile_rank(alpha, sorted.len()) - 1])
}

/// Empirical CVaR as the fractional tail average
/// `(1/t) (sum_{i > N-m} R_(i) + s R_(N-m))`.
pub fn empirical_cvar(batch: &ResidualBatch, alpha: f64) -> Result<CvarEstimate> {
    let n = batch.len();
    let spec = TailSpec::new(alpha, n)?;
    let order = batch.ascending_order();
    let values = batch.values();
    let mut weights = vec![0.0; n];
    let mut tail_indices = Vec::with_capacity(spec.m + 1);
    let full_weight = n as f64 / spec.t;

    let mut top_sum = 0.0;
    for &i in &order[n - spec.m..] {
        top_sum += values[i];
        weights[i] = full_weight;
        tail_indices.push(i);
    }

    // R_(N-m) in 1-based order statistics is order[n - m - 1]; absent only when m == N.
    let boundary = (spec.m < n).then(|| order[n - spec.m - 1]);
    let var_threshold = match boundary {
        Some(i) => values[i],
        None => values[order[0]],
    };
    let mut value = top_sum;
    if spec.s > 0.0 {
        let i = boundary.expect("s > 0 implies m < N");
        value += spec.s * values[i];
        weights[i] = spec.s * full_weight;
        tail_indices.push(i);
    }
    value /= spec.t;

    Ok(CvarEstimate {
        value,
        var_threshold,
        tail_indices,
        weights,
        spec,
    })
}

/// Empirical RU objective `eta + (1/((1-alpha) N)) sum_i (R_i - eta)_+`.
pub fn ru_objective(batch: &ResidualBatch, alpha: f64, eta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !eta.is_finite() {
        return Err(Error::domain("eta must be finite"));
    }
    let t = snap_to_integer((1.0 - alpha) * batch.len() as f64);
    let excess: f64 = batch.values().iter().map(|r| (r - eta).max(0.0)).sum();
    Ok(eta + excess / t)
}

/// The set of minimizers of the RU objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinimizerSet {
    Point(f64),
    /// Closed interval `[lo, hi]` with `lo < hi` (a flat bottom).
    Interval(f64, f64),
}

impl MinimizerSet {
    pub fn contains(&self, x: f64) -> bool {
        match *self {
            MinimizerSet::Point(p) => x == p,
            MinimizerSet::Interval(lo, hi) => lo <= x && x <= hi,
        }
    }

    /// Builds `[lo, hi]`, collapsing to a point when the endpoints coincide.
    pub fn closed(lo: f64, hi: f64) -> Self {
        if lo == hi {
            MinimizerSet::Point(lo)
        } else {
            MinimizerSet::Interval(lo, hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuMinimum {
    pub eta_star: f64,
    pub value: f64,
    pub minimizers: MinimizerSet,
}

/// Minimizes the RU objective by scanning it at every distinct order statistic.
///
/// The objective is convex and piecewise linear with breakpoints at the `R_i`,
/// slope `1 - N/t < 0` left of the smallest sample and slope `1` right of the
/// largest, so the minimum is attained at a breakpoint. Consecutive minimal
/// breakpoints are confirmed flat by evaluating the gap midpoint.
pub fn ru_minimize_bruteforce(batch: &ResidualBatch, alpha: f64) -> Result<RuMinimum> {
    check_alpha(alpha)?;
    let mut knots = batch.order_statistics();
    knots.dedup();
    let phi: Vec<f64> = knots
        .iter()
        .map(|&eta| ru_objective(batch, alpha, eta))
        .collect::<Result<_>>()?;
    let (best, &min) = phi
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal))
        .expect("nonempty batch");

    let scale = knots.last().copied().unwrap_or(0.0).abs().max(min.abs()).max(1e-300);
    let tol = 8.0 * batch.len() as f64 * f64::EPSILON * scale;
    let is_min = |v: f64| v <= min + tol;

    let mut lo = best;
    while lo > 0 && is_min(phi[lo - 1]) {
        let mid = 0.5 * (knots[lo - 1] + knots[lo]);
        if !is_min(ru_objective(batch, alpha, mid)?) {
            break;
        }
        lo -= 1;
    }
    let mut hi = best;
    while hi + 1 < knots.len() && is_min(phi[hi + 1]) {
        let mid = 0.5 * (knots[hi] + knots[hi + 1]);
        if !is_min(ru_objective(batch, alpha, mid)?) {
            break;
        }
        hi += 1;
    }

    Ok(RuMinimum {
        eta_star: knots[lo],
        value: min,
        minimizers: MinimizerSet::closed(knots[lo], knots[hi]),
    })
}

/// Minimizer set predicted by the order-statistic characterization:
/// `{R_(N-m)}` when `s > 0`, otherwise `[R_(N-m), R_(N-m+1)]`.
pub fn ru_minimizers_closed_form(batch: &ResidualBatch, alpha: f64) -> Result<MinimizerSet> {
    let spec = TailSpec::new(alpha, batch.len())?;
    let sorted = batch.order_statistics();
    let n = sorted.len();
    if spec.m == n {
        return Ok(MinimizerSet::closed(f64::NEG_INFINITY, sorted[0]));
    }
    let lower = sorted[n - spec.m - 1];
    if spec.s > 0.0 {
        Ok(MinimizerSet::Point(lower))
    } else {
        Ok(MinimizerSet::closed(lower, sorted[n - spec.m]))
    }
}

/// CVaR hinge core `[max(0, CVaR_alpha(R) - eps)]^2`.
pub fn cvar_hinge_core(batch: &ResidualBatch, alpha: f64, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let cvar = empirical_cvar(batch, alpha)?;
    Ok((cvar.value - eps).max(0.0).powi(2))
}

/// Gradient of [`cvar_hinge_core`] with respect to each `R_i`:
/// `2 (CVaR - eps)_+ w_i / N`, with the tail set held fixed.
///
/// At `CVaR == eps` the zero subgradient is returned.
pub fn cvar_hinge_grad(batch: &ResidualBatch, alpha: f64, eps: f64) -> Result<(f64, Vec<f64>)> {
    check_eps(eps)?;
    let cvar = empirical_cvar(batch, alpha)?;
    let excess = (cvar.value - eps).max(0.0);
    let n = batch.len() as f64;
    let grad = cvar
        .weights
        .iter()
        .map(|w| 2.0 * excess * w / n)
        .collect();
    Ok((excess * excess, grad))
}

/// Per-sample weighting of the mean-excess penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanExcessWeighting {
    /// `mean((R_i - eps)_+^2)`.
    Uniform,
    /// `(1/N) sum_i w_i (R_i - eps)_+^2` with the CVaR tail weights at level `alpha`.
    /// Non-integer tails use the fractional boundary weight.
    TopK { alpha: f64 },
}

fn check_eps(eps: f64) -> Result<()> {
    if eps.is_finite() && eps >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("eps must be finite and >= 0, got {eps}")))
    }
}

fn mean_excess_weights(batch: &ResidualBatch, weighting: MeanExcessWeighting) -> Result<Vec<f64>> {
    match weighting {
        MeanExcessWeighting::Uniform => Ok(vec![1.0; batch.len()]),
        MeanExcessWeighting::TopK { alpha } => Ok(empirical_cvar(batch, alpha)?.weights),
    }
}

/// Mean-excess core `(1/N) sum_i w_i (R_i - eps)_+^2`.
pub fn mean_excess_core(
    batch: &ResidualBatch,
    eps: f64,
    weighting: MeanExcessWeighting,
) -> Result<f64> {
    Ok(mean_excess_grad(batch, eps, weighting)?.0)
}

/// Value and per-sample gradient `(2/N) w_i (R_i - eps)_+` of [`mean_excess_core`].
pub fn mean_excess_grad(
    batch: &ResidualBatch,
    eps: f64,
    weighting: MeanExcessWeighting,
) -> Result<(f64, Vec<f64>)> {
    check_eps(eps)?;
    let weights = mean_excess_weights(batch, weighting)?;
    let n = batch.len() as f64;
    let mut value = 0.0;
    let grad = batch
        .values()
        .iter()
        .zip(&weights)
        .map(|(r, w)| {
            let z = (r - eps).max(0.0);
            value += w * z * z;
            2.0 * w * z / n
        })
        .collect();
    Ok((value / n, grad))
}

/// Checks `mean_excess_core(topk) >= cvar_hinge_core`.
pub fn verify_jensen_bound(batch: &ResidualBatch, alpha: f64, eps: f64) -> Result<bool> {
    let me = mean_excess_core(batch, eps, MeanExcessWeighting::TopK { alpha })?;
    let hinge = cvar_hinge_core(batch, alpha, eps)?;
    // Equality holds for constant batches; allow rounding in that case.
    let slack = 4.0 * f64::EPSILON * hinge.max(me);
    Ok(me + slack >= hinge)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(v: &[f64]) -> ResidualBatch {
        ResidualBatch::new(v.to_vec()).unwrap()
    }

    /// Independent oracle: minimize the RU objective on a dense eta grid by
    /// direct summation (no order statistics involved).
    fn grid_ru_min(values: &[f64], alpha: f64) -> f64 {
        let n = values.len() as f64;
        let hi = values.iter().cloned().fold(0.0, f64::max);
        let steps = 200_000;
        (0..=steps)
            .map(|k| {
                let eta = hi * k as f64 / steps as f64;
                let s: f64 = values.iter().map(|r| (r - eta).max(0.0)).sum();
                eta + s / ((1.0 - alpha) * n)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn var_examples() {
        assert_eq!(empirical_var(&batch(&[1., 2., 3., 4.]), 0.75).unwrap(), 3.0);
        assert_eq!(empirical_var(&batch(&[7.5; 3]), 0.3).unwrap(), 7.5);
        assert_eq!(empirical_var(&batch(&[5.]), 0.5).unwrap(), 5.0);
        assert_eq!(empirical_var(&batch(&[4., 1., 3., 2.]), 0.76).unwrap(), 4.0);
    }

    #[test]
    fn batch_validation() {
        assert!(ResidualBatch::new(vec![]).is_err());
        assert!(ResidualBatch::new(vec![1.0, f64::NAN]).is_err());
        assert!(ResidualBatch::new(vec![-1.0]).is_err());
        assert!(empirical_var(&batch(&[1.0]), 1.0).is_err());
        assert!(empirical_cvar(&batch(&[1.0]), 0.0).is_err());
    }

    #[test]
    fn cvar_examples_match_grid_oracle() {
        let v = [1., 2., 3., 4.];
        for (alpha, expected) in [(0.75, 4.0), (0.5, 3.5), (0.6, 3.625)] {
            let oracle = grid_ru_min(&v, alpha);
            assert!((oracle - expected).abs() < 1e-9, "oracle {oracle} vs {expected}");
            let est = empirical_cvar(&batch(&v), alpha).unwrap();
            assert!((est.value - expected).abs() < 1e-12, "{} vs {expected}", est.value);
        }
        let c = empirical_cvar(&batch(&[2.5; 7]), 0.9).unwrap();
        assert!((c.value - 2.5).abs() < 1e-15);
    }

    #[test]
    fn fractional_weights() {
        let b = batch(&[1., 2., 3., 4.]);
        let est = empirical_cvar(&b, 0.6).unwrap();
        assert_eq!(est.spec.m, 1);
        assert!((est.spec.s - 0.6).abs() < 1e-12);
        assert_eq!(est.tail_indices, vec![3, 2]);
        assert!((est.weights[3] - 4.0 / 1.6).abs() < 1e-12);
        assert!((est.weights[2] - 0.6 * 4.0 / 1.6).abs() < 1e-12);
        assert_eq!(est.weights[0], 0.0);
        assert_eq!(est.var_threshold, 3.0);
        assert!((est.weighted_mean(&b) - est.value).abs() < 1e-14);
    }

    #[test]
    fn integer_tail_snaps() {
        let spec = TailSpec::new(0.95, 100).unwrap();
        assert_eq!(spec.m, 5);
        assert!(spec.is_integer());
        let spec = TailSpec::new(0.6, 4).unwrap();
        assert!(!spec.is_integer());
    }

    #[test]
    fn ru_objective_examples() {
        let b = batch(&[1., 2., 3., 4.]);
        assert!((ru_objective(&b, 0.5, 3.0).unwrap() - 3.5).abs() < 1e-15);
        assert_eq!(ru_objective(&b, 0.3, 10.0).unwrap(), 10.0);
        assert_eq!(ru_objective(&batch(&[0.]), 0.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn bruteforce_minimizer_sets() {
        let b = batch(&[1., 2., 3., 4.]);
        let r = ru_minimize_bruteforce(&b, 0.6).unwrap();
        assert_eq!(r.minimizers, MinimizerSet::Point(3.0));
        assert!((r.value - 3.625).abs() < 1e-12);
        let r = ru_minimize_bruteforce(&b, 0.5).unwrap();
        assert_eq!(r.minimizers, MinimizerSet::Interval(2.0, 3.0));
        let r = ru_minimize_bruteforce(&batch(&[2.; 4]), 0.5).unwrap();
        assert!(r.minimizers.contains(2.0));
        assert_eq!(r.value, 2.0);
    }

    #[test]
    fn closed_form_minimizers_with_ties() {
        // Tie below the boundary with s > 0 keeps a unique minimizer.
        let b = batch(&[1., 3., 3., 4.]);
        assert_eq!(ru_minimizers_closed_form(&b, 0.6).unwrap(), MinimizerSet::Point(3.0));
        assert_eq!(ru_minimize_bruteforce(&b, 0.6).unwrap().minimizers, MinimizerSet::Point(3.0));
        // Tie across the boundary collapses the flat interval.
        let b = batch(&[1., 3., 3., 4.]);
        assert_eq!(ru_minimizers_closed_form(&b, 0.5).unwrap(), MinimizerSet::Point(3.0));
        assert_eq!(ru_minimize_bruteforce(&b, 0.5).unwrap().minimizers, MinimizerSet::Point(3.0));
    }

    #[test]
    fn hinge_examples() {
        let b = batch(&[1., 2., 3., 4.]);
        assert_eq!(cvar_hinge_core(&b, 0.6, 4.0).unwrap(), 0.0);
        assert!((cvar_hinge_core(&b, 0.5, 3.0).unwrap() - 0.25).abs() < 1e-14);
        assert!((cvar_hinge_core(&batch(&[1.5; 5]), 0.8, 0.0).unwrap() - 2.25).abs() < 1e-14);
        assert!(cvar_hinge_core(&b, 0.5, -1.0).is_err());
    }

    #[test]
    fn mean_excess_examples() {
        let b = batch(&[1., 2., 3., 4.]);
        // Independent loop oracle.
        let loop_uniform: f64 = [1., 2., 3., 4.]
            .iter()
            .map(|r: &f64| (r - 2.5f64).max(0.0).powi(2))
            .sum::<f64>()
            / 4.0;
        let me = mean_excess_core(&b, 2.5, MeanExcessWeighting::Uniform).unwrap();
        assert!((me - 0.625).abs() < 1e-15 && (me - loop_uniform).abs() < 1e-15);
        let me = mean_excess_core(&b, 2.5, MeanExcessWeighting::TopK { alpha: 0.5 }).unwrap();
        assert!((me - 1.25).abs() < 1e-14);
        assert_eq!(mean_excess_core(&b, 4.0, MeanExcessWeighting::Uniform).unwrap(), 0.0);
    }

    #[test]
    fn jensen_examples() {
        let b = batch(&[1., 2., 3., 4.]);
        assert!(verify_jensen_bound(&b, 0.5, 2.5).unwrap());
        let c = batch(&[0.7; 8]);
        let me = mean_excess_core(&c, 0.2, MeanExcessWeighting::TopK { alpha: 0.75 }).unwrap();
        let h = cvar_hinge_core(&c, 0.75, 0.2).unwrap();
        assert!((me - h).abs() < 1e-15);
        assert!(verify_jensen_bound(&c, 0.75, 0.2).unwrap());
    }
}
