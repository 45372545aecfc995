//! Free-space kernels.

use std::f64::consts::PI;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

const INV_8PI: f64 = 1.0 / (8.0 * PI);

/// A free-space kernel with `source_dim` inputs and `target_dim` outputs per point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `1/|r|`, no `1/4π`.
    Laplace,
    /// Stokes velocity, `(1/8π)(I/|r| + r rᵀ/|r|³)`.
    Stokeslet,
}

impl Kernel {
    pub const ALL: [Kernel; 2] = [Kernel::Laplace, Kernel::Stokeslet];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Laplace => "laplace",
            Kernel::Stokeslet => "stokeslet",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Kernel::Laplace),
            "stokeslet" | "stokes" => Ok(Kernel::Stokeslet),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn source_dim(self) -> usize {
        match self {
            Kernel::Laplace => 1,
            Kernel::Stokeslet => 3,
        }
    }

    pub fn target_dim(self) -> usize {
        self.source_dim()
    }

    pub fn scale_convention(self) -> &'static str {
        match self {
            Kernel::Laplace => "1/r",
            Kernel::Stokeslet => "(1/8pi)(I/r + r r^T/r^3)",
        }
    }

    /// Kernel block at `x - y`, row-major `target_dim × source_dim`.
    pub fn eval(self, x: Point, y: Point) -> Result<Vec<f64>> {
        let r = sub(x, y);
        if r == [0.0; 3] {
            return Err(Error::InvalidArgument(format!(
                "kernel evaluated at coincident points {x:?} and {y:?}"
            )));
        }
        let mut out = vec![0.0; self.source_dim() * self.target_dim()];
        self.block(r, &mut out);
        Ok(out)
    }

    /// Writes the kernel block at separation `r` (nonzero) into `out`.
    #[inline]
    pub fn block(self, r: Point, out: &mut [f64]) {
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let inv = 1.0 / r2.sqrt();
        match self {
            Kernel::Laplace => out[0] = inv,
            Kernel::Stokeslet => {
                let a = INV_8PI * inv;
                let b = a * inv * inv;
                for i in 0..3 {
                    for j in 0..3 {
                        out[3 * i + j] = b * (r[i] * r[j]);
                    }
                    out[4 * i] += a;
                }
            }
        }
    }

    /// Adds `K(r)·s` to `out`; `r` must be nonzero.
    #[inline]
    pub fn apply(self, r: Point, s: &[f64], out: &mut [f64]) {
        let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
        let inv = 1.0 / r2.sqrt();
        match self {
            Kernel::Laplace => out[0] += inv * s[0],
            Kernel::Stokeslet => {
                let a = INV_8PI * inv;
                let rs = (r[0] * s[0] + r[1] * s[1] + r[2] * s[2]) * inv * inv;
                out[0] += a * (s[0] + rs * r[0]);
                out[1] += a * (s[1] + rs * r[1]);
                out[2] += a * (s[2] + rs * r[2]);
            }
        }
    }
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Dense kernel matrix with block `(i, j) = K(targets[i] - sources[j])`.
pub fn eval_block(kernel: Kernel, targets: &[Point], sources: &[Point]) -> Result<Mat<f64>> {
    for (i, t) in targets.iter().enumerate() {
        for (j, s) in sources.iter().enumerate() {
            if t == s {
                return Err(Error::InvalidArgument(format!(
                    "target {i} coincides with source {j} at {t:?}"
                )));
            }
        }
    }
    Ok(block_matrix(kernel, targets, sources, [0.0; 3]))
}

/// Same as [`eval_block`] with sources shifted by `shift`; no coincidence check.
pub(crate) fn block_matrix(kernel: Kernel, targets: &[Point], sources: &[Point], shift: Point) -> Mat<f64> {
    let kt = kernel.target_dim();
    let ks = kernel.source_dim();
    let mut m = Mat::<f64>::zeros(kt * targets.len(), ks * sources.len());
    let mut blk = [0.0; 9];
    for (j, s) in sources.iter().enumerate() {
        let y = [s[0] + shift[0], s[1] + shift[1], s[2] + shift[2]];
        for (i, t) in targets.iter().enumerate() {
            kernel.block(sub(*t, y), &mut blk);
            for a in 0..kt {
                for b in 0..ks {
                    m[(kt * i + a, ks * j + b)] = blk[ks * a + b];
                }
            }
        }
    }
    m
}

/// Adds `Σ_j K(t_i - (s_j + shift))·q_j` to `out`, skipping exactly coincident pairs.
pub fn p2p(kernel: Kernel, targets: &[Point], sources: &[Point], strengths: &[f64], shift: Point, out: &mut [f64]) {
    if targets.is_empty() || sources.is_empty() {
        return;
    }
    let soa = Soa::new(kernel, sources, strengths, shift);
    match kernel {
        Kernel::Laplace => {
            for (t, o) in targets.iter().zip(out.iter_mut()) {
                *o += soa.laplace(*t);
            }
        }
        Kernel::Stokeslet => {
            for (t, o) in targets.iter().zip(out.chunks_exact_mut(3)) {
                let u = soa.stokeslet(*t);
                o[0] += INV_8PI * u[0];
                o[1] += INV_8PI * u[1];
                o[2] += INV_8PI * u[2];
            }
        }
    }
}

const LANES: usize = 8;

/// Shifted sources split into padded coordinate and strength columns.
struct Soa {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    q: [Vec<f64>; 3],
}

impl Soa {
    fn new(kernel: Kernel, sources: &[Point], strengths: &[f64], shift: Point) -> Self {
        let n = sources.len().div_ceil(LANES) * LANES;
        let ks = kernel.source_dim();
        // padding sits far away with zero strength
        let col = |f: &dyn Fn(usize) -> f64, pad: f64| -> Vec<f64> {
            (0..n).map(|j| if j < sources.len() { f(j) } else { pad }).collect()
        };
        let x = col(&|j| sources[j][0] + shift[0], 1e150);
        let y = col(&|j| sources[j][1] + shift[1], 0.0);
        let z = col(&|j| sources[j][2] + shift[2], 0.0);
        let q = std::array::from_fn(|c| if c < ks { col(&|j| strengths[ks * j + c], 0.0) } else { Vec::new() });
        Soa { x, y, z, q }
    }

    #[inline]
    fn laplace(&self, t: Point) -> f64 {
        let mut acc = [0.0; LANES];
        for (((xs, ys), zs), qs) in self
            .x
            .chunks_exact(LANES)
            .zip(self.y.chunks_exact(LANES))
            .zip(self.z.chunks_exact(LANES))
            .zip(self.q[0].chunks_exact(LANES))
        {
            for l in 0..LANES {
                let dx = t[0] - xs[l];
                let dy = t[1] - ys[l];
                let dz = t[2] - zs[l];
                let r2 = dx * dx + dy * dy + dz * dz;
                let inv = if r2 > 0.0 { 1.0 / r2.sqrt() } else { 0.0 };
                acc[l] += qs[l] * inv;
            }
        }
        acc.iter().sum()
    }

    #[inline]
    fn stokeslet(&self, t: Point) -> [f64; 3] {
        let (mut u, mut v, mut w) = ([0.0; LANES], [0.0; LANES], [0.0; LANES]);
        let [fx, fy, fz] = &self.q;
        for (((((xs, ys), zs), ax), ay), az) in self
            .x
            .chunks_exact(LANES)
            .zip(self.y.chunks_exact(LANES))
            .zip(self.z.chunks_exact(LANES))
            .zip(fx.chunks_exact(LANES))
            .zip(fy.chunks_exact(LANES))
            .zip(fz.chunks_exact(LANES))
        {
            for l in 0..LANES {
                let dx = t[0] - xs[l];
                let dy = t[1] - ys[l];
                let dz = t[2] - zs[l];
                let r2 = dx * dx + dy * dy + dz * dz;
                let inv = if r2 > 0.0 { 1.0 / r2.sqrt() } else { 0.0 };
                let rf = (dx * ax[l] + dy * ay[l] + dz * az[l]) * inv * inv;
                u[l] += inv * (ax[l] + rf * dx);
                v[l] += inv * (ay[l] + rf * dy);
                w[l] += inv * (az[l] + rf * dz);
            }
        }
        [u.iter().sum(), v.iter().sum(), w.iter().sum()]
    }
}

/// O(T·S) free-space sum, skipping coincident pairs.
pub fn direct_sum(kernel: Kernel, sources: &[Point], strengths: &[f64], targets: &[Point]) -> Vec<f64> {
    let kt = kernel.target_dim();
    let mut out = vec![0.0; kt * targets.len()];
    crate::par::for_chunks(&mut out, kt * 256, |c, chunk| {
        let lo = c * 256;
        let hi = (lo + 256).min(targets.len());
        p2p(kernel, &targets[lo..hi], sources, strengths, [0.0; 3], chunk);
    });
    out
}
