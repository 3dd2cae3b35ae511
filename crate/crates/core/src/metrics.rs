//! Error and tail metrics and survival-curve export.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tail_risk::quantile_rank;

/// Relative L2 error `||pred - ref|| / ||ref||`.
pub fn rel_l2(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference)?;
    let num: f64 = pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).powi(2))
        .sum();
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::domain("reference has zero norm"));
    }
    Ok((num / den).sqrt())
}

/// Maximum absolute pointwise error.
pub fn l_inf(pred: &[f64], reference: &[f64]) -> Result<f64> {
    check_lengths(pred, reference)?;
    Ok(pred
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).abs())
        .fold(0.0, f64::max))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::domain("empty input"));
    }
    Ok(())
}

/// Lowest order statistic whose empirical CDF reaches `q`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::domain(format!("quantile level must lie in (0, 1), got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::domain("quantile input contains NaN"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(q, sorted.len()) - 1])
}

/// Fraction of `values` strictly above each threshold.
pub fn survival_curve(values: &[f64], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("thresholds must be sorted ascending"));
    }
    if values.is_empty() {
        return Err(Error::domain("survival curve of an empty sample"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&x| {
            let at_or_below = sorted.partition_point(|&v| v <= x);
            (x, (sorted.len() - at_or_below) as f64 / n)
        })
        .collect())
}

pub const CCDF_POINTS: usize = 200;
pub const CCDF_FLOOR: f64 = 1e-12;

/// Log-spaced thresholds over `[max(min, 1e-12), max]`.
pub fn log_thresholds(values: &[f64], count: usize) -> Result<Vec<f64>> {
    if values.is_empty() || count == 0 {
        return Err(Error::domain("need values and a positive threshold count"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = min.max(CCDF_FLOOR);
    let hi = max.max(lo);
    if count == 1 || hi == lo {
        return Ok(vec![lo; count]);
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect();
    out[0] = lo;
    out[count - 1] = hi;
    Ok(out)
}

/// The 0.05-crossing of a survival curve: the first threshold with `S <= 0.05`
/// and its predecessor.
pub fn crossing_bracket(curve: &[(f64, f64)], level: f64) -> Option<(f64, f64)> {
    let k = curve.iter().position(|&(_, s)| s <= level)?;
    let lo = if k == 0 { curve[0].0 } else { curve[k - 1].0 };
    Some((lo, curve[k].0))
}

/// Checks that `q` lies within one threshold step of the `1 - level` crossing.
pub fn crossing_brackets_quantile(curve: &[(f64, f64)], level: f64, q: f64) -> bool {
    match crossing_bracket(curve, level) {
        Some((lo, hi)) => lo <= q && q <= hi,
        None => false,
    }
}

pub fn write_ccdf_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from("threshold,survival\n");
    for (x, s) in curve {
        text.push_str(&format!("{x:e},{s:e}\n"));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_ccdf_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split(',').map(|v| v.trim().parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(s))) => Ok((x, s)),
                _ => Err(Error::Serde(format!("bad CCDF row '{l}' in {}", path.display()))),
            }
        })
        .collect()
}

/// Scalar results of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    pub epoch: usize,
    pub rel_l2: f64,
    pub l_inf: f64,
    /// 0.95-quantile of absolute PDE residuals on the evaluation points.
    pub q95_residual: f64,
    /// 0.95-quantile of absolute solution errors.
    pub q95_error: f64,
    pub mean_abs_residual: f64,
    pub n_points: usize,
}

impl MetricsBundle {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tail_risk::{empirical_var, ResidualBatch};

    #[test]
    fn rel_l2_examples() {
        let r = [1.0, -2.0, 2.0];
        assert_eq!(rel_l2(&r, &r).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert!((rel_l2(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        // ||r|| = 3; perturb the first coordinate by 3.
        let p = [4.0, -2.0, 2.0];
        assert!((rel_l2(&p, &r).unwrap() - 1.0).abs() < 1e-15);
        assert!(rel_l2(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn l_inf_examples() {
        assert_eq!(l_inf(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l_inf(&[1.0, 2.5, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn quantile_examples() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.95).unwrap(), 95.0);
        assert_eq!(quantile(&[3.0; 7], 0.3).unwrap(), 3.0);
        assert_eq!(quantile(&[2.5], 0.9).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
        let b = ResidualBatch::new(v.clone()).unwrap();
        assert_eq!(quantile(&v, 0.37).unwrap(), empirical_var(&b, 0.37).unwrap());
    }

    #[test]
    fn survival_examples() {
        let v = [1.0, 2.0, 3.0, 4.0];
        let c = survival_curve(&v, &[0.5, 2.0, 4.0]).unwrap();
        assert_eq!(c, vec![(0.5, 1.0), (2.0, 0.5), (4.0, 0.0)]);
        assert!(survival_curve(&v, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn crossing_brackets_q95() {
        let v: Vec<f64> = (1..=1000).map(|i| (i as f64 * 0.37).sin().abs() + 1e-3).collect();
        let th = log_thresholds(&v, CCDF_POINTS).unwrap();
        let c = survival_curve(&v, &th).unwrap();
        assert!(crossing_brackets_quantile(&c, 0.05, quantile(&v, 0.95).unwrap()));
        assert_eq!(th.len(), CCDF_POINTS);
        assert!(c.windows(2).all(|w| w[0].1 >= w[1].1));
        assert_eq!(c.last().unwrap().1, 0.0);
    }

    #[test]
    fn ccdf_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ccdf.csv");
        let c = vec![(1e-3, 1.0), (0.5, 0.25), (2.0, 0.0)];
        write_ccdf_csv(&p, &c).unwrap();
        assert_eq!(read_ccdf_csv(&p).unwrap(), c);
    }
}
