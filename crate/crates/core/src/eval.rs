//! Depth error metrics with optional median scaling.

use serde::Serialize;

use crate::error::{contract, Result};

pub const DEFAULT_CAP: f64 = 80.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub count: usize,
}

impl DepthMetrics {
    pub const CSV_HEADER: &'static str = "abs_rel,sq_rel,rmse,rmse_log,delta1,delta2,delta3,count";

    pub fn csv(&self) -> String {
        format!(
            "{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            self.abs_rel, self.sq_rel, self.rmse, self.rmse_log, self.delta1, self.delta2, self.delta3, self.count
        )
    }
}

/// Median with the midpoint convention for even counts.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Metrics over pixels where `valid` holds and `gt ≤ cap`.
pub fn compute_metrics(pred: &[f64], gt: &[f64], valid: &[bool], median_scale: bool, cap: f64) -> Result<DepthMetrics> {
    if pred.len() != gt.len() || gt.len() != valid.len() {
        return Err(contract("compute_metrics", format!("lengths {} / {} / {}", pred.len(), gt.len(), valid.len())));
    }
    let idx: Vec<usize> = (0..gt.len()).filter(|&i| valid[i] && gt[i] <= cap).collect();
    if idx.is_empty() {
        return Err(contract("compute_metrics", "no pixels to evaluate"));
    }
    if let Some(&i) = idx.iter().find(|&&i| !(gt[i] > 0.0 && pred[i] > 0.0)) {
        return Err(contract("compute_metrics", format!("non-positive depth at pixel {i}")));
    }
    let scale = if median_scale {
        let mut g: Vec<f64> = idx.iter().map(|&i| gt[i]).collect();
        let mut p: Vec<f64> = idx.iter().map(|&i| pred[i]).collect();
        median(&mut g) / median(&mut p)
    } else {
        1.0
    };
    let n = idx.len() as f64;
    let mut m = DepthMetrics { abs_rel: 0.0, sq_rel: 0.0, rmse: 0.0, rmse_log: 0.0, delta1: 0.0, delta2: 0.0, delta3: 0.0, count: idx.len() };
    for &i in &idx {
        let (p, g) = (pred[i] * scale, gt[i]);
        let diff = p - g;
        m.abs_rel += diff.abs() / g;
        m.sq_rel += diff * diff / g;
        m.rmse += diff * diff;
        m.rmse_log += (p.ln() - g.ln()).powi(2);
        let ratio = (p / g).max(g / p);
        m.delta1 += f64::from(u8::from(ratio < 1.25));
        m.delta2 += f64::from(u8::from(ratio < 1.25f64.powi(2)));
        m.delta3 += f64::from(u8::from(ratio < 1.25f64.powi(3)));
    }
    m.abs_rel /= n;
    m.sq_rel /= n;
    m.rmse = (m.rmse / n).sqrt();
    m.rmse_log = (m.rmse_log / n).sqrt();
    m.delta1 /= n;
    m.delta2 /= n;
    m.delta3 /= n;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_pair() {
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 4.0], &[true, true], false, DEFAULT_CAP).unwrap();
        assert_eq!(m.abs_rel, 0.5);
        assert_eq!(m.rmse, 0.5f64.sqrt());
        assert_eq!(m.delta1, 0.5);
        assert_eq!(m.sq_rel, 0.5);
    }

    #[test]
    fn even_median_is_midpoint() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [5.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn cap_and_empty_mask() {
        assert!(compute_metrics(&[1.0], &[100.0], &[true], false, 80.0).is_err());
        assert!(compute_metrics(&[1.0], &[1.0], &[false], false, 80.0).is_err());
    }
}
