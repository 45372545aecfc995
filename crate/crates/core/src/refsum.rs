//! Periodic reference kernels: direct singly periodic sums and Ewald sums.

use std::f64::consts::PI;

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PeriodicSetup, Periodicity};
use crate::kernel::{sub, Kernel, Point};

const SQRT_PI: f64 = 1.772_453_850_905_516;
const INV_8PI: f64 = 1.0 / (8.0 * PI);
/// Explicit terms of the singly periodic tail before the series takes over.
const SP_EXPLICIT: u64 = 64;
/// Highest multipole degree of the singly periodic tail series.
const SP_DEGREE: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DirectSp,
    EwaldLaplaceDp,
    EwaldLaplaceTp,
    EwaldStokesTpHasimoto,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DirectSp => "direct_sp",
            Method::EwaldLaplaceDp => "ewald_laplace_dp",
            Method::EwaldLaplaceTp => "ewald_laplace_tp",
            Method::EwaldStokesTpHasimoto => "ewald_stokes_tp_hasimoto",
        }
    }
}

/// Ewald splitting and truncation, plus the image count for direct sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EwaldParams {
    pub xi: f64,
    /// Real-space radius.
    pub real_cutoff: f64,
    /// Wave vectors `2πm` with `|m| <= wave_cutoff`.
    pub wave_cutoff: usize,
    pub n_images: u64,
}

impl EwaldParams {
    /// Cutoffs that push both truncation errors below roundoff.
    pub fn with_xi(xi: f64) -> Self {
        EwaldParams {
            xi,
            real_cutoff: 6.5 / xi,
            wave_cutoff: (12.4 * xi / (2.0 * PI)).ceil() as usize,
            n_images: 1_000_000,
        }
    }

    pub fn with_images(mut self, n: u64) -> Self {
        self.n_images = n;
        self
    }
}

impl Default for EwaldParams {
    fn default() -> Self {
        Self::with_xi(4.0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    k: Point,
    norm: f64,
    weight: f64,
}

/// A periodic kernel `K^P` together with its far part `K^{P,F}`.
#[derive(Clone, Debug)]
pub struct PeriodicKernel {
    pub kernel: Kernel,
    pub setup: PeriodicSetup,
    pub method: Method,
    pub params: EwaldParams,
    waves: Vec<Wave>,
    power_sums: Vec<f64>,
    /// Two ordinary axes followed by the distinguished one.
    frame: [usize; 3],
}

impl PeriodicKernel {
    /// Picks the method implied by the kernel and periodicity.
    pub fn new(kernel: Kernel, setup: PeriodicSetup, params: EwaldParams) -> Result<Self> {
        let method = match (setup.periodicity, kernel) {
            (Periodicity::None, _) => {
                return Err(Error::Config("a periodic kernel needs a periodic setup".into()))
            }
            (Periodicity::Sp, _) => Method::DirectSp,
            (Periodicity::Dp, Kernel::Laplace) => Method::EwaldLaplaceDp,
            (Periodicity::Dp, Kernel::Stokeslet) => {
                return Err(Error::Config(
                    "doubly periodic Stokes is not supported; use triply periodic Stokes".into(),
                ))
            }
            (Periodicity::Tp, Kernel::Laplace) => Method::EwaldLaplaceTp,
            (Periodicity::Tp, Kernel::Stokeslet) => Method::EwaldStokesTpHasimoto,
        };
        if !(params.xi > 0.0) || !(params.real_cutoff > 0.0) || params.n_images == 0 {
            return Err(Error::Config(format!("invalid Ewald parameters {params:?}")));
        }
        let special = match setup.periodicity {
            Periodicity::Sp => (0..3).find(|&a| setup.axes[a]),
            Periodicity::Dp => (0..3).find(|&a| !setup.axes[a]),
            _ => Some(2),
        }
        .unwrap_or(2);
        let others: Vec<usize> = (0..3).filter(|&a| a != special).collect();
        let frame = [others[0], others[1], special];
        let mut pk = PeriodicKernel {
            kernel,
            setup,
            method,
            params,
            waves: Vec::new(),
            power_sums: Vec::new(),
            frame,
        };
        match method {
            Method::DirectSp => pk.power_sums = power_sums(setup.ell as u64, params.n_images),
            _ => pk.waves = pk.wave_list(),
        }
        Ok(pk)
    }

    pub fn source_dim(&self) -> usize {
        self.kernel.source_dim()
    }

    fn block_len(&self) -> usize {
        self.kernel.source_dim() * self.kernel.target_dim()
    }

    fn wave_list(&self) -> Vec<Wave> {
        let mc = self.params.wave_cutoff as i64;
        let xi = self.params.xi;
        let mut out = Vec::new();
        let range = |a: usize| if self.setup.axes[a] { -mc..=mc } else { 0..=0 };
        for i in range(0) {
            for j in range(1) {
                for l in range(2) {
                    let m = [i, j, l];
                    if m.iter().map(|x| x * x).sum::<i64>() > mc * mc {
                        continue;
                    }
                    // half space: first nonzero component positive
                    match m.iter().find(|&&x| x != 0) {
                        Some(&x) if x > 0 => {}
                        _ => continue,
                    }
                    let k = [2.0 * PI * i as f64, 2.0 * PI * j as f64, 2.0 * PI * l as f64];
                    let k2 = k[0] * k[0] + k[1] * k[1] + k[2] * k[2];
                    let g = (-k2 / (4.0 * xi * xi)).exp();
                    let weight = match self.method {
                        Method::EwaldLaplaceTp => 2.0 * 4.0 * PI * g / k2,
                        Method::EwaldStokesTpHasimoto => 2.0 * (1.0 + k2 / (4.0 * xi * xi)) * g / k2,
                        Method::EwaldLaplaceDp => 2.0 * PI / k2.sqrt(),
                        Method::DirectSp => 0.0,
                    };
                    out.push(Wave { k, norm: k2.sqrt(), weight });
                }
            }
        }
        out
    }

    /// `K^P(x, y)`; fails if `x - y` is a lattice vector.
    pub fn eval_periodic(&self, x: Point, y: Point) -> Result<Vec<f64>> {
        let r = sub(x, y);
        if self.on_lattice(r) {
            return Err(Error::InvalidArgument(format!(
                "periodic kernel evaluated at image-coincident points {x:?} and {y:?}"
            )));
        }
        let mut out = vec![0.0; self.block_len()];
        self.periodic_block(r, &mut out);
        Ok(out)
    }

    /// `K^{P,F}(x, y)`: the periodic kernel minus the near images `|p|_∞ <= ell`.
    pub fn eval_kpf(&self, x: Point, y: Point) -> Vec<f64> {
        let mut out = vec![0.0; self.block_len()];
        self.kpf_block(sub(x, y), &mut out);
        out
    }

    fn on_lattice(&self, r: Point) -> bool {
        (0..3).all(|a| if self.setup.axes[a] { (r[a] - r[a].round()).abs() < 1e-12 } else { r[a].abs() < 1e-12 })
    }

    /// Adds `K^P(r)` with the zero-image term dropped when `r` is a lattice vector.
    pub(crate) fn periodic_block(&self, r: Point, out: &mut [f64]) {
        self.kpf_block(r, out);
        let mut blk = [0.0; 9];
        let n = self.block_len();
        for p in self.setup.near_offsets() {
            let rp = shifted(r, p);
            if rp != [0.0; 3] {
                self.kernel.block(rp, &mut blk);
                for (o, b) in out.iter_mut().zip(&blk[..n]) {
                    *o += b;
                }
            }
        }
    }

    /// Adds `K^{P,F}(r)`.
    pub(crate) fn kpf_block(&self, r: Point, out: &mut [f64]) {
        match self.method {
            Method::DirectSp => self.sp_tail(r, out),
            _ => {
                self.real_part(r, out);
                self.wave_part(r, out);
            }
        }
    }

    /// Real-space screened sum over all images minus the free kernel over the near images.
    fn real_part(&self, r: Point, out: &mut [f64]) {
        let rc = self.params.real_cutoff;
        let ell = self.setup.ell as i64;
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..3 {
            if self.setup.axes[a] {
                lo[a] = (r[a] - rc).ceil() as i64;
                hi[a] = (r[a] + rc).floor() as i64;
            }
        }
        let near = |p: [i64; 3]| p.iter().all(|x| x.abs() <= ell);
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let p = [i, j, k];
                    let rp = shifted(r, p);
                    let d = norm(rp);
                    if d >= rc {
                        continue;
                    }
                    if near(p) {
                        self.regular(rp, d, out);
                    } else {
                        self.screened(rp, d, out);
                    }
                }
            }
        }
        let mut blk = [0.0; 9];
        let n = self.block_len();
        for p in self.setup.near_offsets() {
            let rp = shifted(r, p);
            if norm(rp) >= rc {
                self.kernel.block(rp, &mut blk);
                for (o, b) in out.iter_mut().zip(&blk[..n]) {
                    *o -= b;
                }
            }
        }
    }

    fn screened(&self, r: Point, d: f64, out: &mut [f64]) {
        let xi = self.params.xi;
        let e = libm::erfc(xi * d) / d;
        match self.kernel {
            Kernel::Laplace => out[0] += e,
            Kernel::Stokeslet => {
                let g = 2.0 * xi / SQRT_PI * (-xi * xi * d * d).exp();
                self.stokes_pair(r, d, e - g, e + g, out);
            }
        }
    }

    /// Screened term minus the free kernel; finite at `r = 0`.
    fn regular(&self, r: Point, d: f64, out: &mut [f64]) {
        let xi = self.params.xi;
        let e = if d > 0.0 { -libm::erf(xi * d) / d } else { -2.0 * xi / SQRT_PI };
        match self.kernel {
            Kernel::Laplace => out[0] += e,
            Kernel::Stokeslet => {
                let g = 2.0 * xi / SQRT_PI * (-xi * xi * d * d).exp();
                let rr = if d > 0.0 { e + g } else { 0.0 };
                self.stokes_pair(r, d, e - g, rr, out);
            }
        }
    }

    /// Adds `(1/8π)(a I + b r̂ r̂ᵀ)`.
    fn stokes_pair(&self, r: Point, d: f64, a: f64, b: f64, out: &mut [f64]) {
        let b = if d > 0.0 { b / (d * d) } else { 0.0 };
        for i in 0..3 {
            for j in 0..3 {
                out[3 * i + j] += INV_8PI * b * r[i] * r[j];
            }
            out[4 * i] += INV_8PI * a;
        }
    }

    fn wave_part(&self, r: Point, out: &mut [f64]) {
        let xi = self.params.xi;
        match self.method {
            Method::EwaldLaplaceTp => {
                let s: f64 = self.waves.iter().map(|w| w.weight * dot(w.k, r).cos()).sum();
                out[0] += s - PI / (xi * xi);
            }
            Method::EwaldStokesTpHasimoto => {
                let mut t = [0.0; 6];
                for w in &self.waves {
                    let c = w.weight * dot(w.k, r).cos();
                    let inv = 1.0 / (w.norm * w.norm);
                    let k = w.k;
                    t[0] += c * (1.0 - k[0] * k[0] * inv);
                    t[1] -= c * k[0] * k[1] * inv;
                    t[2] -= c * k[0] * k[2] * inv;
                    t[3] += c * (1.0 - k[1] * k[1] * inv);
                    t[4] -= c * k[1] * k[2] * inv;
                    t[5] += c * (1.0 - k[2] * k[2] * inv);
                }
                let full = [t[0], t[1], t[2], t[1], t[3], t[4], t[2], t[4], t[5]];
                for (o, v) in out.iter_mut().zip(full) {
                    *o += v;
                }
            }
            Method::EwaldLaplaceDp => {
                let z = r[self.frame[2]];
                let mut s = 0.0;
                for w in &self.waves {
                    s += w.weight * dot(w.k, r).cos() * dp_profile(w.norm, z, xi);
                }
                s -= 2.0 * PI * (z * libm::erf(xi * z) + (-xi * xi * z * z).exp() / (xi * SQRT_PI));
                out[0] += s;
            }
            Method::DirectSp => {}
        }
    }

    /// Tail `Σ_{ell < |k| <= n} K(r - k e)` along the periodic axis.
    fn sp_tail(&self, r: Point, out: &mut [f64]) {
        let [a, b, c] = self.frame;
        let rc = [r[a], r[b], r[c]];
        let ell = self.setup.ell as u64;
        let n = self.params.n_images;
        let explicit_end = n.min(SP_EXPLICIT.max(ell));
        let mut canon = [0.0; 9];
        let mut blk = [0.0; 9];
        let m = self.block_len();
        for k in ell + 1..=explicit_end {
            for s in [-1.0, 1.0] {
                let rk = [rc[0], rc[1], rc[2] - s * k as f64];
                self.kernel.block(rk, &mut blk);
                for (o, v) in canon.iter_mut().zip(&blk[..m]) {
                    *o += v;
                }
            }
        }
        if n > explicit_end {
            self.sp_series(rc, &mut canon);
        }
        match self.kernel {
            Kernel::Laplace => out[0] += canon[0],
            Kernel::Stokeslet => {
                let f = self.frame;
                for i in 0..3 {
                    for j in 0..3 {
                        out[3 * f[i] + f[j]] += canon[3 * i + j];
                    }
                }
            }
        }
    }

    /// Multipole series for the images beyond the explicit range.
    fn sp_series(&self, r: Point, out: &mut [f64]) {
        let h = &self.power_sums;
        let rad = norm(r);
        let x = if rad > 0.0 { r[2] / rad } else { 0.0 };
        let (mut p_prev, mut p_cur) = (1.0, x);
        let (mut c_prev, mut c_cur) = (1.0, 3.0 * x);
        let mut s1 = h[1];
        let mut s3 = h[3];
        let mut odd = 0.0;
        let mut rl = 1.0;
        for l in 1..=SP_DEGREE {
            rl *= rad;
            if l % 2 == 0 {
                s1 += p_cur * rl * h[l + 1];
                s3 += c_cur * rl * h[l + 3];
            } else {
                odd += c_cur * rl * h[l + 2];
            }
            let lf = l as f64;
            let p_next = ((2.0 * lf + 1.0) * x * p_cur - lf * p_prev) / (lf + 1.0);
            let c_next = ((2.0 * lf + 3.0) * x * c_cur - (lf + 2.0) * c_prev) / (lf + 1.0);
            p_prev = p_cur;
            p_cur = p_next;
            c_prev = c_cur;
            c_cur = c_next;
        }
        let (s1, s3, odd) = (2.0 * s1, 2.0 * s3, 2.0 * odd);
        match self.kernel {
            Kernel::Laplace => out[0] += s1,
            Kernel::Stokeslet => {
                let rho2 = r[0] * r[0] + r[1] * r[1];
                let az = r[2] * s3 - odd;
                let t = [
                    s1 + r[0] * r[0] * s3,
                    r[0] * r[1] * s3,
                    r[0] * az,
                    r[0] * r[1] * s3,
                    s1 + r[1] * r[1] * s3,
                    r[1] * az,
                    r[0] * az,
                    r[1] * az,
                    2.0 * s1 - rho2 * s3,
                ];
                for (o, v) in out.iter_mut().zip(t) {
                    *o += INV_8PI * v;
                }
            }
        }
    }

    /// Dense `K^{P,F}` matrix with block `(i, j)` at `targets[i] - sources[j]`.
    pub fn kpf_matrix(&self, targets: &[Point], sources: &[Point]) -> Mat<f64> {
        let kt = self.kernel.target_dim();
        let ks = self.kernel.source_dim();
        let tp = matches!(self.method, Method::EwaldLaplaceTp | Method::EwaldStokesTpHasimoto);
        let cols = crate::par::map_range(sources.len(), |j| {
            let mut col = vec![0.0; kt * ks * targets.len()];
            let mut blk = [0.0; 9];
            for (i, t) in targets.iter().enumerate() {
                blk.iter_mut().for_each(|v| *v = 0.0);
                let r = sub(*t, sources[j]);
                if tp {
                    self.real_part(r, &mut blk);
                } else {
                    self.kpf_block(r, &mut blk);
                }
                col[kt * ks * i..kt * ks * (i + 1)].copy_from_slice(&blk[..kt * ks]);
            }
            col
        });
        let mut m = Mat::<f64>::zeros(kt * targets.len(), ks * sources.len());
        for (j, col) in cols.iter().enumerate() {
            for i in 0..targets.len() {
                for a in 0..kt {
                    for b in 0..ks {
                        m[(kt * i + a, ks * j + b)] = col[kt * ks * i + ks * a + b];
                    }
                }
            }
        }
        if tp {
            self.add_wave_matrix(targets, sources, &mut m);
        }
        m
    }

    /// Wave part of the triply periodic kernels as products of cosine/sine tables.
    fn add_wave_matrix(&self, targets: &[Point], sources: &[Point], m: &mut Mat<f64>) {
        let nw = self.waves.len();
        let table = |pts: &[Point]| {
            let c = Mat::from_fn(pts.len(), nw, |i, w| dot(self.waves[w].k, pts[i]).cos());
            let s = Mat::from_fn(pts.len(), nw, |i, w| dot(self.waves[w].k, pts[i]).sin());
            (c, s)
        };
        let (ct, st) = table(targets);
        let (cs, ss) = table(sources);
        let par = faer::get_global_parallelism();
        let product = |weight: &dyn Fn(&Wave) -> f64| {
            let wv: Vec<f64> = self.waves.iter().map(weight).collect();
            let cw = Mat::from_fn(ct.nrows(), nw, |i, w| ct[(i, w)] * wv[w]);
            let sw = Mat::from_fn(st.nrows(), nw, |i, w| st[(i, w)] * wv[w]);
            let mut out = Mat::<f64>::zeros(targets.len(), sources.len());
            matmul(&mut out, Accum::Replace, &cw, cs.transpose(), 1.0, par);
            matmul(&mut out, Accum::Add, &sw, ss.transpose(), 1.0, par);
            out
        };
        match self.kernel {
            Kernel::Laplace => {
                let w = product(&|w: &Wave| w.weight);
                let c = -PI / (self.params.xi * self.params.xi);
                for j in 0..sources.len() {
                    for i in 0..targets.len() {
                        m[(i, j)] += w[(i, j)] + c;
                    }
                }
            }
            Kernel::Stokeslet => {
                for a in 0..3 {
                    for b in a..3 {
                        let delta = if a == b { 1.0 } else { 0.0 };
                        let w = product(&|w: &Wave| w.weight * (delta - w.k[a] * w.k[b] / (w.norm * w.norm)));
                        for j in 0..sources.len() {
                            for i in 0..targets.len() {
                                m[(3 * i + a, 3 * j + b)] += w[(i, j)];
                                if a != b {
                                    m[(3 * i + b, 3 * j + a)] += w[(i, j)];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// `q_t = Σ_s K^P(x_t, y_s) φ_s`, dropping only the zero-image self pair.
    pub fn oracle_system_eval(&self, sources: &[Point], strengths: &[f64], targets: &[Point]) -> Result<Vec<f64>> {
        let ks = self.kernel.source_dim();
        let kt = self.kernel.target_dim();
        if strengths.len() != ks * sources.len() {
            return Err(Error::InvalidArgument(format!(
                "{} strengths for {} sources of dimension {ks}",
                strengths.len(),
                sources.len()
            )));
        }
        crate::periodize::check_compatibility(self.kernel, &self.setup, strengths).into_result()?;
        for t in targets {
            for s in sources {
                let r = sub(*t, *s);
                if r != [0.0; 3] && self.on_lattice(r) {
                    return Err(Error::InvalidArgument(format!(
                        "target {t:?} coincides with a periodic image of source {s:?}"
                    )));
                }
            }
        }
        let out = crate::par::map_range(targets.len(), |i| {
            let mut q = vec![0.0; kt];
            let mut blk = [0.0; 9];
            for (j, s) in sources.iter().enumerate() {
                blk.iter_mut().for_each(|v| *v = 0.0);
                self.periodic_block(sub(targets[i], *s), &mut blk);
                for a in 0..kt {
                    for b in 0..ks {
                        q[a] += blk[ks * a + b] * strengths[ks * j + b];
                    }
                }
            }
            q
        });
        Ok(out.into_iter().flatten().collect())
    }
}

/// `e^{kz} erfc(k/2ξ + ξz) + e^{-kz} erfc(k/2ξ - ξz)` without overflow.
fn dp_profile(k: f64, z: f64, xi: f64) -> f64 {
    let half = |zs: f64| {
        let u = k / (2.0 * xi) + xi * zs;
        if u < 0.0 {
            (k * zs).exp() * libm::erfc(u)
        } else {
            (-k * k / (4.0 * xi * xi) - xi * xi * zs * zs).exp() * erfcx(u)
        }
    };
    half(z) + half(-z)
}

/// Scaled complementary error function `e^{x²} erfc(x)` for `x >= 0`.
fn erfcx(x: f64) -> f64 {
    if x < 4.0 {
        return (x * x).exp() * libm::erfc(x);
    }
    // continued fraction, evaluated from the tail
    let mut f = x;
    for n in (1..80).rev() {
        f = x + 0.5 * n as f64 / f;
    }
    1.0 / (SQRT_PI * f)
}

/// `H(s) = Σ_{k=m+1}^{n} k^{-s}` for `s = 0..=SP_DEGREE+3`, `m = max(ell, 64)`.
fn power_sums(ell: u64, n: u64) -> Vec<f64> {
    let m = SP_EXPLICIT.max(ell);
    let mut h = vec![0.0; SP_DEGREE + 4];
    if n <= m {
        return h;
    }
    for k in (m + 1..=n).rev() {
        let inv = 1.0 / k as f64;
        let mut t = 1.0;
        for v in h.iter_mut().skip(1) {
            t *= inv;
            *v += t;
        }
    }
    h
}

#[inline]
fn shifted(r: Point, p: [i64; 3]) -> Point {
    [r[0] - p[0] as f64, r[1] - p[1] as f64, r[2] - p[2] as f64]
}

#[inline]
fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}
