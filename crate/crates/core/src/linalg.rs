//! SVD factors, the nested pseudo-inverse and conditioning diagnostics.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{surface_points, INNER_EDGE, OUTER_EDGE};
use crate::kernel::{block_matrix, Kernel};

/// Unit roundoff used by both thresholds.
pub const EPS: f64 = f64::EPSILON;

/// Factors of `A = U diag(s) Vᵀ`, kept separate.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: Mat<f64>,
    pub singular_values: Vec<f64>,
    pub v: Mat<f64>,
    /// Solve truncation: `EPS · s_max`.
    pub epsilon_svd: f64,
    /// Rank counting: `EPS · s_max · max(rows, cols)`.
    pub rank_threshold: f64,
    pub kappa: f64,
    pub numerical_rank: usize,
}

fn par() -> faer::Par {
    faer::get_global_parallelism()
}

/// Full (thin) SVD.
pub fn svd(a: MatRef<'_, f64>) -> Result<SvdFactors> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::InvalidArgument("svd of an empty matrix".into()));
    }
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            if !a[(i, j)].is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite entry at ({i}, {j})")));
            }
        }
    }
    let f = a
        .thin_svd()
        .map_err(|e| Error::Computation(format!("SVD did not converge: {e:?}")))?;
    let k = a.nrows().min(a.ncols());
    let mut s: Vec<f64> = (0..k).map(|i| f.S()[i]).collect();
    let mut u = f.U().to_owned();
    let mut v = f.V().to_owned();
    if s.windows(2).any(|w| w[0] < w[1]) {
        let mut idx: Vec<usize> = (0..k).collect();
        idx.sort_by(|&x, &y| s[y].total_cmp(&s[x]));
        u = Mat::from_fn(u.nrows(), k, |i, j| u[(i, idx[j])]);
        v = Mat::from_fn(v.nrows(), k, |i, j| v[(i, idx[j])]);
        s = idx.iter().map(|&i| s[i]).collect();
    }
    let smax = s[0];
    let epsilon_svd = EPS * smax;
    let rank_threshold = EPS * smax * a.nrows().max(a.ncols()) as f64;
    let numerical_rank = s.iter().filter(|&&x| x > rank_threshold).count();
    let smin = s.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let kappa = if smax > 0.0 { smax / smin } else { f64::INFINITY };
    Ok(SvdFactors { u, singular_values: s, v, epsilon_svd, rank_threshold, kappa, numerical_rank })
}

impl SvdFactors {
    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    fn inv_s(&self) -> Vec<f64> {
        self.singular_values
            .iter()
            .map(|&x| if x > self.epsilon_svd { 1.0 / x } else { 0.0 })
            .collect()
    }

    /// `V (S⁺ (Uᵀ B))` for a block of right-hand sides.
    pub fn pinv_apply_mat(&self, b: MatRef<'_, f64>) -> Mat<f64> {
        nested(self.u.as_ref(), &self.inv_s(), self.v.as_ref(), b)
    }

    /// `V (S⁺ (Uᵀ b))`.
    pub fn pinv_apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.rows() {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, matrix has {} rows",
                b.len(),
                self.rows()
            )));
        }
        Ok(col_to_vec(self.pinv_apply_mat(MatRef::from_column_major_slice(b, b.len(), 1))))
    }

    /// Pseudo-inverse of `Aᵀ` applied to `b`: `U (S⁺ (Vᵀ b))`.
    pub fn pinv_transpose_apply(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.cols() {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, transposed matrix has {} rows",
                b.len(),
                self.cols()
            )));
        }
        let m = nested(self.v.as_ref(), &self.inv_s(), self.u.as_ref(), MatRef::from_column_major_slice(b, b.len(), 1));
        Ok(col_to_vec(m))
    }

    /// The explicit matrix `V S⁺ Uᵀ`.
    pub fn explicit_pinv(&self) -> Mat<f64> {
        let inv = self.inv_s();
        let vs = Mat::from_fn(self.v.nrows(), inv.len(), |i, j| self.v[(i, j)] * inv[j]);
        let mut out = Mat::<f64>::zeros(self.cols(), self.rows());
        matmul(&mut out, Accum::Replace, &vs, self.u.transpose(), 1.0, par());
        out
    }

    /// Forms the explicit pseudo-inverse and multiplies; only a control for [`Self::pinv_apply`].
    pub fn pinv_apply_explicit(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.rows() {
            return Err(Error::InvalidArgument(format!(
                "right-hand side has length {}, matrix has {} rows",
                b.len(),
                self.rows()
            )));
        }
        let p = self.explicit_pinv();
        Ok(mat_vec(p.as_ref(), b))
    }
}

fn nested(left: MatRef<'_, f64>, inv: &[f64], right: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut t = Mat::<f64>::zeros(left.ncols(), b.ncols());
    matmul(&mut t, Accum::Replace, left.transpose(), b, 1.0, par());
    for j in 0..t.ncols() {
        for (i, w) in inv.iter().enumerate() {
            t[(i, j)] *= w;
        }
    }
    let mut out = Mat::<f64>::zeros(right.nrows(), b.ncols());
    matmul(&mut out, Accum::Replace, right, &t, 1.0, par());
    out
}

fn col_to_vec(m: Mat<f64>) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, 0)]).collect()
}

/// `A x` for a dense matrix.
pub fn mat_vec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(&mut out, Accum::Replace, a, MatRef::from_column_major_slice(x, x.len(), 1), 1.0, par());
    col_to_vec(out)
}

/// `max_i |(A x - b)_i|`.
pub fn backward_error(a: MatRef<'_, f64>, x: &[f64], b: &[f64]) -> f64 {
    mat_vec(a, x).iter().zip(b).map(|(y, b)| (y - b).abs()).fold(0.0, f64::max)
}

/// Check-to-equivalent matrix of a unit box: inner check surface against outer equivalent surface.
///
/// The upward counterpart (outer check, inner equivalent) is its transpose for both kernels.
pub fn surface_matrix(kernel: Kernel, p: usize) -> Result<Mat<f64>> {
    let check = surface_points(p, [0.0; 3], INNER_EDGE)?;
    let equiv = surface_points(p, [0.0; 3], OUTER_EDGE)?;
    Ok(block_matrix(kernel, &check, &equiv, [0.0; 3]))
}

type FactorCache = Mutex<HashMap<(Kernel, usize), Arc<SvdFactors>>>;

/// SVD of [`surface_matrix`], computed once per process.
pub fn surface_factors(kernel: Kernel, p: usize) -> Result<Arc<SvdFactors>> {
    static CACHE: OnceLock<FactorCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(f) = guard.get(&(kernel, p)) {
        return Ok(f.clone());
    }
    let a = surface_matrix(kernel, p)?;
    let f = Arc::new(svd(a.as_ref())?);
    guard.insert((kernel, p), f.clone());
    Ok(f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningReport {
    pub kernel: Kernel,
    pub p: usize,
    pub dim: usize,
    pub kappa: f64,
    pub rank: usize,
}

/// κ, numerical rank and size of the surface matrix.
pub fn conditioning_report(kernel: Kernel, p: usize) -> Result<ConditioningReport> {
    if !(4..=24).contains(&p) {
        return Err(Error::InvalidArgument(format!("conditioning report supports 4 <= p <= 24, got {p}")));
    }
    let f = surface_factors(kernel, p)?;
    Ok(ConditioningReport { kernel, p, dim: f.rows(), kappa: f.kappa, rank: f.numerical_rank })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn diag(d: &[f64]) -> Mat<f64> {
        Mat::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { 0.0 })
    }

    #[test]
    fn identity() {
        let f = svd(diag(&[1.0, 1.0, 1.0]).as_ref()).unwrap();
        assert_eq!(f.singular_values, vec![1.0, 1.0, 1.0]);
        assert_eq!(f.kappa, 1.0);
        let b = [0.3, -2.0, 7.0];
        let x = f.pinv_apply(&b).unwrap();
        let y = f.pinv_apply_explicit(&b).unwrap();
        for i in 0..3 {
            assert!((x[i] - b[i]).abs() < 1e-15 && (y[i] - b[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_and_truncation() {
        let f = svd(diag(&[2.0, 1.0, 0.0]).as_ref()).unwrap();
        assert_eq!(f.numerical_rank, 2);
        assert_eq!(f.kappa, 2.0);
        let mut f = svd(diag(&[2.0, 1.0, 1e-20]).as_ref()).unwrap();
        f.epsilon_svd = 1e-10;
        let x = f.pinv_apply(&[2.0, 1.0, 1.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15 && x[2] == 0.0);
    }

    #[test]
    fn explicit_matches_nested_when_well_conditioned() {
        let f = svd(diag(&[2.0, 1.0]).as_ref()).unwrap();
        let x = f.pinv_apply(&[1.0, 3.0]).unwrap();
        let y = f.pinv_apply_explicit(&[1.0, 3.0]).unwrap();
        for i in 0..2 {
            assert!((x[i] - y[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let f = svd(diag(&[1.0, 2.0]).as_ref()).unwrap();
        assert!(f.pinv_apply(&[1.0]).is_err());
        assert!(f.pinv_apply_explicit(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn transpose_solve() {
        let a = Mat::from_fn(3, 3, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64));
        let f = svd(a.as_ref()).unwrap();
        let b = [1.0, -1.0, 0.5];
        let x = f.pinv_transpose_apply(&b).unwrap();
        assert!(backward_error(a.transpose(), &x, &b) < 1e-13);
    }

    #[test]
    fn small_surface_conditioning() {
        let r = conditioning_report(Kernel::Laplace, 6).unwrap();
        assert_eq!((r.dim, r.rank), (152, 152));
        let f = surface_factors(Kernel::Laplace, 6).unwrap();
        let a = surface_matrix(Kernel::Laplace, 6).unwrap();
        let ones = vec![1.0; 152];
        let x = f.pinv_apply(&ones).unwrap();
        assert!(backward_error(a.as_ref(), &x, &ones) < 1e-13);
        let smax = f.singular_values[0];
        let mut rec = Mat::<f64>::zeros(152, 152);
        let us = Mat::from_fn(152, 152, |i, j| f.u[(i, j)] * f.singular_values[j]);
        matmul(&mut rec, Accum::Replace, &us, f.v.transpose(), 1.0, faer::Par::Seq);
        let err = (0..152).flat_map(|i| (0..152).map(move |j| (i, j))).map(|(i, j)| (rec[(i, j)] - a[(i, j)]).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12 * smax);
        assert!(conditioning_report(Kernel::Laplace, 3).is_err());
    }

    proptest! {
        #[test]
        fn pinv_apply_is_linear(b1 in prop::collection::vec(-1.0f64..1.0, 4), b2 in prop::collection::vec(-1.0f64..1.0, 4), al in -2.0f64..2.0, be in -2.0f64..2.0) {
            let a = Mat::from_fn(4, 4, |i, j| 1.0 / (1.0 + i as f64 + j as f64));
            let f = svd(a.as_ref()).unwrap();
            let comb: Vec<f64> = b1.iter().zip(&b2).map(|(x, y)| al * x + be * y).collect();
            let lhs = f.pinv_apply(&comb).unwrap();
            let x1 = f.pinv_apply(&b1).unwrap();
            let x2 = f.pinv_apply(&b2).unwrap();
            let scale = lhs.iter().chain(&x1).chain(&x2).map(|v| v.abs()).fold(1e-300, f64::max);
            for i in 0..4 {
                prop_assert!((lhs[i] - al * x1[i] - be * x2[i]).abs() <= 1e-13 * scale * (1.0 + al.abs() + be.abs()));
            }
        }
    }
}
