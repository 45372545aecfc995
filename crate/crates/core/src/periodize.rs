//! The periodizing M2L operator: construction, storage, application and the far field.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{surface_count, surface_points, PeriodicSetup, Periodicity, BOX_CENTER, INNER_EDGE, OUTER_EDGE};
use crate::kernel::{Kernel, Point};
use crate::linalg::{surface_factors, surface_matrix, SvdFactors};
use crate::refsum::{EwaldParams, Method, PeriodicKernel};

pub const MAGIC: &[u8; 6] = b"PKM2L\x01";

/// Largest tolerated column backward error relative to the column's max entry.
pub const RESIDUAL_GATE: f64 = 1e-11;

/// Metadata stored in front of the operator payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub kernel: Kernel,
    pub k_s: usize,
    pub k_t: usize,
    pub periodicity: Periodicity,
    pub periodic_axes: [bool; 3],
    pub ell: usize,
    pub p: usize,
    pub n: usize,
    pub inner_edge: f64,
    pub outer_edge: f64,
    pub method: Method,
    pub ewald: EwaldParams,
    /// The quadratic background `(2π/3)|x-c|²` was removed from each column.
    pub background_removed: bool,
    pub residual_max: f64,
    pub kappa: f64,
    pub rank: usize,
    pub created_unix: u64,
    pub crate_version: String,
    pub crc64: u64,
}

impl OperatorHeader {
    pub fn dim(&self) -> usize {
        self.k_s * self.n
    }
}

/// Dense `T_M2L` mapping the root upward density to the root downward density.
#[derive(Clone, Debug)]
pub struct PeriodizingOperator {
    pub header: OperatorHeader,
    pub matrix: Mat<f64>,
}

/// Result of [`check_compatibility`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub ok: bool,
    pub condition: Option<String>,
    pub residual: f64,
}

impl CompatibilityReport {
    pub fn into_result(self) -> Result<()> {
        if self.ok {
            Ok(())
        } else {
            Err(Error::Compatibility(format!(
                "{} (residual {:e})",
                self.condition.unwrap_or_default(),
                self.residual
            )))
        }
    }
}

/// Net charge (or force) conditions for the periodic sum to exist.
pub fn check_compatibility(kernel: Kernel, setup: &PeriodicSetup, strengths: &[f64]) -> CompatibilityReport {
    let ok = CompatibilityReport { ok: true, condition: None, residual: 0.0 };
    if setup.periodicity == Periodicity::None {
        return ok;
    }
    if kernel == Kernel::Stokeslet && setup.periodicity == Periodicity::Tp {
        return ok;
    }
    let k = kernel.source_dim();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for c in 0..k {
        let net: f64 = strengths.iter().skip(c).step_by(k).sum();
        let abs: f64 = strengths.iter().skip(c).step_by(k).map(|v| v.abs()).sum();
        worst = worst.max(net.abs());
        scale = scale.max(abs);
    }
    if worst <= 1e-12 * scale {
        CompatibilityReport { residual: worst, ..ok }
    } else {
        let name = match kernel {
            Kernel::Laplace => "neutrality: net charge in the unit box must vanish",
            Kernel::Stokeslet => "zero net force in the unit box",
        };
        CompatibilityReport { ok: false, condition: Some(name.into()), residual: worst }
    }
}

/// `K^{P,F}` between the inner surfaces of the unit box (check rows, equivalent columns).
pub fn assemble_kpf_matrix(pk: &PeriodicKernel, p: usize) -> Result<Mat<f64>> {
    let pts = surface_points(p, BOX_CENTER, INNER_EDGE)?;
    Ok(pk.kpf_matrix(&pts, &pts))
}

fn removes_background(pk: &PeriodicKernel) -> bool {
    pk.method == Method::EwaldLaplaceTp
}

/// Constant missed by the far field once the background is removed.
///
/// The equivalent density only matches the harmonic moments of the sources, so the
/// second moment `Σ q |y-c|²` has to be restored by hand.
pub fn background_constant(p: usize, sources: &[Point], strengths: &[f64], root_upward: &[f64]) -> Result<f64> {
    let m2 = |y: &Point| -> f64 { (0..3).map(|a| (y[a] - BOX_CENTER[a]).powi(2)).sum() };
    let eq = surface_points(p, BOX_CENTER, INNER_EDGE)?;
    let src: f64 = sources.iter().zip(strengths).map(|(y, q)| q * m2(y)).sum();
    let equiv: f64 = eq.iter().zip(root_upward).map(|(y, u)| u * m2(y)).sum();
    Ok(2.0 * PI / 3.0 * (src - equiv))
}

/// Solves `A T = Q` column by column with one SVD of `A`.
pub fn solve_m2l(kernel: Kernel, setup: PeriodicSetup, p: usize, params: EwaldParams) -> Result<PeriodizingOperator> {
    let pk = PeriodicKernel::new(kernel, setup, params)?;
    let factors = surface_factors(kernel, p)?;
    solve_with(&pk, p, &factors)
}

/// [`solve_m2l`] with caller-supplied factors of the surface matrix.
pub fn solve_with(pk: &PeriodicKernel, p: usize, factors: &SvdFactors) -> Result<PeriodizingOperator> {
    let kernel = pk.kernel;
    let mut q = assemble_kpf_matrix(pk, p)?;
    let background = removes_background(pk);
    if background {
        // the Laplacian of the periodic kernel carries a uniform background; it cancels for neutral sources
        let pts = surface_points(p, BOX_CENTER, INNER_EDGE)?;
        for (i, x) in pts.iter().enumerate() {
            let d2: f64 = (0..3).map(|a| (x[a] - BOX_CENTER[a]).powi(2)).sum();
            let b = 2.0 * PI / 3.0 * d2;
            for j in 0..q.ncols() {
                q[(i, j)] -= b;
            }
        }
    }
    let t = factors.pinv_apply_mat(q.as_ref());
    let a = surface_matrix(kernel, p)?;
    let mut r = q.clone();
    matmul(&mut r, Accum::Add, &a, &t, -1.0, faer::get_global_parallelism());
    let mut residual_max = 0.0f64;
    let mut worst = 0;
    for j in 0..q.ncols() {
        let qmax = (0..q.nrows()).map(|i| q[(i, j)].abs()).fold(0.0, f64::max);
        let rmax = (0..r.nrows()).map(|i| r[(i, j)].abs()).fold(0.0, f64::max);
        let rel = if qmax > 0.0 { rmax / qmax } else { rmax };
        if rel > residual_max {
            residual_max = rel;
            worst = j;
        }
    }
    if !(residual_max <= RESIDUAL_GATE) {
        return Err(Error::Computation(format!(
            "operator backward error {residual_max:e} exceeds {RESIDUAL_GATE:e} at column {worst}"
        )));
    }
    let header = OperatorHeader {
        kernel,
        k_s: kernel.source_dim(),
        k_t: kernel.target_dim(),
        periodicity: pk.setup.periodicity,
        periodic_axes: pk.setup.axes,
        ell: pk.setup.ell,
        p,
        n: surface_count(p),
        inner_edge: INNER_EDGE,
        outer_edge: OUTER_EDGE,
        method: pk.method,
        ewald: pk.params,
        background_removed: background,
        residual_max,
        kappa: factors.kappa,
        rank: factors.numerical_rank,
        created_unix: crate::par::unix_now(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        crc64: crc64(&payload_bytes(&t)),
    };
    Ok(PeriodizingOperator { header, matrix: t })
}

impl PeriodizingOperator {
    /// Fails unless the operator was built for this kernel, setup and `p`.
    pub fn check_provenance(&self, kernel: Kernel, setup: &PeriodicSetup, p: usize) -> Result<()> {
        let h = &self.header;
        if h.kernel != kernel
            || h.periodicity != setup.periodicity
            || h.periodic_axes != setup.axes
            || h.ell != setup.ell
            || h.p != p
        {
            return Err(Error::Mismatch(format!(
                "operator built for {} {} axes {:?} ell={} p={}, requested {} {} axes {:?} ell={} p={}",
                h.kernel.name(),
                h.periodicity.name(),
                h.periodic_axes,
                h.ell,
                h.p,
                kernel.name(),
                setup.periodicity.name(),
                setup.axes,
                setup.ell,
                p
            )));
        }
        Ok(())
    }

    /// `φ^d = T φ^u`.
    pub fn apply(&self, upward: &[f64]) -> Result<Vec<f64>> {
        if upward.len() != self.header.dim() {
            return Err(Error::Mismatch(format!(
                "upward density has length {}, operator expects {}",
                upward.len(),
                self.header.dim()
            )));
        }
        Ok(crate::linalg::mat_vec(self.matrix.as_ref(), upward))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = payload_bytes(&self.matrix);
        let mut header = self.header.clone();
        header.crc64 = crc64(&payload);
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&payload)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 14 || &bytes[..6] != MAGIC {
            return Err(Error::Format("missing magic bytes".into()));
        }
        let hlen = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes")) as usize;
        let body = &bytes[14..];
        if body.len() < hlen {
            return Err(Error::Format("truncated header".into()));
        }
        let header: OperatorHeader =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::Format(format!("header: {e}")))?;
        let payload = &body[hlen..];
        let dim = header.dim();
        if header.n != surface_count(header.p) || header.k_s != header.kernel.source_dim() {
            return Err(Error::Format("header dimensions are inconsistent".into()));
        }
        if payload.len() != dim * dim * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                dim * dim * 8
            )));
        }
        if crc64(payload) != header.crc64 {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let matrix = Mat::from_fn(dim, dim, |i, j| {
            let o = 8 * (i * dim + j);
            f64::from_le_bytes(payload[o..o + 8].try_into().expect("8 bytes"))
        });
        Ok(PeriodizingOperator { header, matrix })
    }
}

/// Row-major little-endian payload.
fn payload_bytes(m: &Mat<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

/// CRC-64/XZ.
pub fn crc64(data: &[u8]) -> u64 {
    crc::Crc::<u64>::new(&crc::CRC_64_XZ).checksum(data)
}

/// `q_F(x_t) = Σ_j K(x_t, y_j^d) φ_j^d` over the outer surface of the unit box.
pub fn far_field_eval(kernel: Kernel, p: usize, downward: &[f64], targets: &[Point]) -> Result<Vec<f64>> {
    let ks = kernel.source_dim();
    if downward.len() != ks * surface_count(p) {
        return Err(Error::Mismatch(format!(
            "downward density has length {}, expected {}",
            downward.len(),
            ks * surface_count(p)
        )));
    }
    let eq = surface_points(p, BOX_CENTER, OUTER_EDGE)?;
    let kt = kernel.target_dim();
    let mut out = vec![0.0; kt * targets.len()];
    crate::par::for_chunks(&mut out, kt * 512, |c, chunk| {
        let lo = c * 512;
        let hi = (lo + 512).min(targets.len());
        crate::kernel::p2p(kernel, &targets[lo..hi], &eq, downward, [0.0; 3], chunk);
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crc64_check_value() {
        assert_eq!(crc64(b"123456789"), 0x995D_C9BB_DF19_39FA);
    }

    #[test]
    fn compatibility_rules() {
        let tp = PeriodicSetup::new(Periodicity::Tp, 2).unwrap();
        let sp = PeriodicSetup::new(Periodicity::Sp, 2).unwrap();
        assert!(check_compatibility(Kernel::Laplace, &sp, &[1.0, -1.0, 1.0, -1.0]).ok);
        let r = check_compatibility(Kernel::Laplace, &tp, &[1.0]);
        assert!(!r.ok && r.condition.unwrap().contains("neutrality"));
        assert!(check_compatibility(Kernel::Stokeslet, &tp, &[1.0, 0.0, 0.0]).ok);
        assert!(!check_compatibility(Kernel::Stokeslet, &sp, &[1.0, 0.0, 0.0]).ok);
        assert!(check_compatibility(Kernel::Laplace, &PeriodicSetup::free(), &[1.0]).ok);
    }

    #[test]
    fn laplace_tp_operator_roundtrip() {
        let setup = PeriodicSetup::new(Periodicity::Tp, 2).unwrap();
        let op = solve_m2l(Kernel::Laplace, setup, 6, EwaldParams::default()).unwrap();
        assert!(op.header.residual_max <= RESIDUAL_GATE);
        assert_eq!(op.matrix.nrows(), 152);
        let zero = op.apply(&vec![0.0; 152]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("op.bin");
        op.save(&path).unwrap();
        let back = PeriodizingOperator::load(&path).unwrap();
        assert_eq!(back.matrix, op.matrix);
        assert_eq!(back.header.crc64, op.header.crc64);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 3;
        bytes[last] ^= 1;
        assert!(matches!(PeriodizingOperator::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(PeriodizingOperator::from_bytes(b"nope").is_err());
        assert!(op.check_provenance(Kernel::Laplace, &setup, 6).is_ok());
        let other = PeriodicSetup::new(Periodicity::Tp, 3).unwrap();
        assert!(matches!(op.check_provenance(Kernel::Laplace, &other, 6), Err(Error::Mismatch(_))));
        assert!(op.apply(&[1.0]).is_err());
    }

    #[test]
    fn far_field_of_zero_density() {
        let out = far_field_eval(Kernel::Stokeslet, 4, &vec![0.0; 3 * 56], &[[0.5; 3], [0.1, 0.2, 0.3]]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert!(far_field_eval(Kernel::Laplace, 4, &[1.0], &[[0.5; 3]]).is_err());
    }
}
