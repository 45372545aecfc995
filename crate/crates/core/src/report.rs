//! Error metrics over flattened component vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub max_abs: f64,
    pub avg_abs: f64,
    pub rms: f64,
    /// `None` when the reference norm is zero.
    pub rel_l2: Option<f64>,
    pub n_components: usize,
}

/// Max, mean and RMS absolute error plus relative L2 error.
pub fn compute_error_report(result: &[f64], reference: &[f64]) -> Result<ErrorReport> {
    if result.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "result has {} components, reference has {}",
            result.len(),
            reference.len()
        )));
    }
    if result.is_empty() {
        return Err(Error::InvalidArgument("empty vectors".into()));
    }
    let n = result.len() as f64;
    let mut max_abs = 0.0f64;
    let mut sum_abs = 0.0;
    let mut sum_sq = 0.0;
    let mut ref_sq = 0.0;
    for (r, e) in result.iter().zip(reference) {
        let d = (r - e).abs();
        max_abs = max_abs.max(d);
        sum_abs += d;
        sum_sq += d * d;
        ref_sq += e * e;
    }
    let rel_l2 = (ref_sq > 0.0).then(|| (sum_sq / ref_sq).sqrt());
    Ok(ErrorReport { max_abs, avg_abs: sum_abs / n, rms: (sum_sq / n).sqrt(), rel_l2, n_components: result.len() })
}

/// Relative L2 error, `None` for a zero reference.
pub fn rel_l2(result: &[f64], reference: &[f64]) -> Option<f64> {
    compute_error_report(result, reference).ok().and_then(|r| r.rel_l2)
}
