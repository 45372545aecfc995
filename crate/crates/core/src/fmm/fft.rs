//! FFT-accelerated multipole-to-local translation between same-size boxes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::{surface_grid, INNER_EDGE};
use crate::kernel::{Kernel, Point};

/// Real-to-half-spectrum 3D transforms on an `(2p)³` grid.
pub struct Grid {
    pub p: usize,
    pub n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Flat grid index of each surface point.
    pub surface_index: Vec<usize>,
}

impl Grid {
    pub fn new(p: usize) -> Self {
        let n = 2 * p;
        let mut planner = FftPlanner::new();
        let surface_index = surface_grid(p).into_iter().map(|g| (g[0] * n + g[1]) * n + g[2]).collect();
        Grid { p, n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n), surface_index }
    }

    pub fn half_len(&self) -> usize {
        self.n * self.n * (self.n / 2 + 1)
    }

    fn transform(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        fft.process(data);
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for k in 0..n {
                for j in 0..n {
                    line[j] = data[(i * n + j) * n + k];
                }
                fft.process(&mut line);
                for j in 0..n {
                    data[(i * n + j) * n + k] = line[j];
                }
            }
        }
        for j in 0..n {
            for k in 0..n {
                for i in 0..n {
                    line[i] = data[(i * n + j) * n + k];
                }
                fft.process(&mut line);
                for i in 0..n {
                    data[(i * n + j) * n + k] = line[i];
                }
            }
        }
    }

    /// Forward transform of real data; keeps `k_z <= n/2`.
    pub fn forward(&self, real: &[f64]) -> Vec<Complex64> {
        let n = self.n;
        let mut data: Vec<Complex64> = real.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut data, &self.fwd);
        let h = n / 2 + 1;
        let mut out = Vec::with_capacity(self.half_len());
        for ij in 0..n * n {
            out.extend_from_slice(&data[ij * n..ij * n + h]);
        }
        out
    }

    /// Inverse of [`Self::forward`], unnormalized.
    pub fn inverse(&self, half: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        let h = n / 2 + 1;
        let mut data = vec![Complex64::new(0.0, 0.0); n * n * n];
        for i in 0..n {
            for j in 0..n {
                let row = &half[(i * n + j) * h..(i * n + j + 1) * h];
                data[(i * n + j) * n..(i * n + j) * n + h].copy_from_slice(row);
                let (ci, cj) = ((n - i) % n, (n - j) % n);
                for k in h..n {
                    data[(i * n + j) * n + k] = half[(ci * n + cj) * h + (n - k)].conj();
                }
            }
        }
        self.transform(&mut data, &self.inv);
        data.iter().map(|c| c.re).collect()
    }

    /// Spreads a surface density (component `c` of `k` per point) onto the grid and transforms it.
    pub fn density_spectrum(&self, density: &[f64], k: usize) -> Vec<Vec<Complex64>> {
        (0..k)
            .map(|c| {
                let mut g = vec![0.0; self.n * self.n * self.n];
                for (j, &idx) in self.surface_index.iter().enumerate() {
                    g[idx] = density[k * j + c];
                }
                self.forward(&g)
            })
            .collect()
    }

    /// Inverse transforms the accumulated spectra and gathers surface values times `scale`.
    pub fn gather(&self, spectra: &[Vec<Complex64>], scale: f64, out: &mut [f64]) {
        let k = spectra.len();
        let norm = scale / (self.n * self.n * self.n) as f64;
        for (c, s) in spectra.iter().enumerate() {
            let g = self.inverse(s);
            for (j, &idx) in self.surface_index.iter().enumerate() {
                out[k * j + c] += norm * g[idx];
            }
        }
    }
}

/// Spectrum of `G(m) = K(-d + δm)` at unit box size, δ = inner edge/(p-1).
///
/// Stokes components are stored as the upper triangle `xx, xy, xz, yy, yz, zz`.
pub struct Table {
    pub parts: Vec<Vec<Complex64>>,
}

fn kernel_table(kernel: Kernel, grid: &Grid, d: [f64; 3]) -> Table {
    let n = grid.n;
    let p = grid.p as i64;
    let delta = INNER_EDGE / (grid.p - 1) as f64;
    let nparts = if kernel == Kernel::Laplace { 1 } else { 6 };
    let mut vals = vec![vec![0.0; n * n * n]; nparts];
    let wrap = |m: i64| (m.rem_euclid(n as i64)) as usize;
    let mut blk = [0.0; 9];
    for a in -(p - 1)..p {
        for b in -(p - 1)..p {
            for c in -(p - 1)..p {
                let r: Point = [
                    -d[0] + delta * a as f64,
                    -d[1] + delta * b as f64,
                    -d[2] + delta * c as f64,
                ];
                kernel.block(r, &mut blk);
                let idx = (wrap(a) * n + wrap(b)) * n + wrap(c);
                match kernel {
                    Kernel::Laplace => vals[0][idx] = blk[0],
                    Kernel::Stokeslet => {
                        for (t, &(i, j)) in TRI.iter().enumerate() {
                            vals[t][idx] = blk[3 * i + j];
                        }
                    }
                }
            }
        }
    }
    Table { parts: vals.iter().map(|v| grid.forward(v)).collect() }
}

pub const TRI: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Index into [`TRI`] of component `(i, j)`.
pub fn tri_index(i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    match (a, b) {
        (0, 0) => 0,
        (0, 1) => 1,
        (0, 2) => 2,
        (1, 1) => 3,
        (1, 2) => 4,
        _ => 5,
    }
}

type TableKey = (Kernel, usize, [i64; 3]);
type SumKey = (Kernel, usize, [bool; 3], usize);

#[derive(Default)]
struct Caches {
    grids: HashMap<usize, Arc<Grid>>,
    tables: HashMap<TableKey, Arc<Table>>,
    sums: HashMap<SumKey, Arc<Table>>,
}

fn caches() -> &'static Mutex<Caches> {
    static C: OnceLock<Mutex<Caches>> = OnceLock::new();
    C.get_or_init(Default::default)
}

pub fn grid(p: usize) -> Arc<Grid> {
    let mut c = caches().lock().unwrap_or_else(|e| e.into_inner());
    c.grids.entry(p).or_insert_with(|| Arc::new(Grid::new(p))).clone()
}

/// Tables for the given offsets (source center minus target center, in box sizes).
pub fn tables(kernel: Kernel, p: usize, offsets: &[[i64; 3]]) -> HashMap<[i64; 3], Arc<Table>> {
    let g = grid(p);
    let missing: Vec<[i64; 3]> = {
        let c = caches().lock().unwrap_or_else(|e| e.into_inner());
        offsets.iter().filter(|d| !c.tables.contains_key(&(kernel, p, **d))).copied().collect()
    };
    let built = crate::par::map_range(missing.len(), |i| {
        let d = missing[i];
        Arc::new(kernel_table(kernel, &g, [d[0] as f64, d[1] as f64, d[2] as f64]))
    });
    let mut c = caches().lock().unwrap_or_else(|e| e.into_inner());
    for (d, t) in missing.into_iter().zip(built) {
        c.tables.insert((kernel, p, d), t);
    }
    offsets.iter().map(|d| (*d, c.tables[&(kernel, p, *d)].clone())).collect()
}

/// Sum of the tables over all lattice offsets with max-norm in `[2, ell]`.
pub fn summed_table(kernel: Kernel, p: usize, axes: [bool; 3], ell: usize, offsets: &[[i64; 3]]) -> Arc<Table> {
    let key = (kernel, p, axes, ell);
    if let Some(t) = caches().lock().unwrap_or_else(|e| e.into_inner()).sums.get(&key) {
        return t.clone();
    }
    let g = grid(p);
    let partial = crate::par::map_range(offsets.len(), |i| {
        let d = offsets[i];
        kernel_table(kernel, &g, [d[0] as f64, d[1] as f64, d[2] as f64])
    });
    let nparts = if kernel == Kernel::Laplace { 1 } else { 6 };
    let mut parts = vec![vec![Complex64::new(0.0, 0.0); g.half_len()]; nparts];
    for t in &partial {
        for (acc, part) in parts.iter_mut().zip(&t.parts) {
            for (a, v) in acc.iter_mut().zip(part) {
                *a += v;
            }
        }
    }
    let t = Arc::new(Table { parts });
    caches().lock().unwrap_or_else(|e| e.into_inner()).sums.insert(key, t.clone());
    t
}

/// Adds `table ⊙ source` into `acc` (one spectrum per target component).
pub fn accumulate(kernel: Kernel, table: &Table, source: &[Vec<Complex64>], acc: &mut [Vec<Complex64>]) {
    match kernel {
        Kernel::Laplace => {
            for ((a, t), s) in acc[0].iter_mut().zip(&table.parts[0]).zip(&source[0]) {
                *a += t * s;
            }
        }
        Kernel::Stokeslet => {
            let len = acc[0].len();
            let (a0, rest) = acc.split_at_mut(1);
            let (a1, a2) = rest.split_at_mut(1);
            let (a0, a1, a2) = (&mut a0[0], &mut a1[0], &mut a2[0]);
            let t = &table.parts;
            let (s0, s1, s2) = (&source[0], &source[1], &source[2]);
            for i in 0..len {
                let (x, y, z) = (s0[i], s1[i], s2[i]);
                let (txx, txy, txz, tyy, tyz, tzz) = (t[0][i], t[1][i], t[2][i], t[3][i], t[4][i], t[5][i]);
                a0[i] += txx * x + txy * y + txz * z;
                a1[i] += txy * x + tyy * y + tyz * z;
                a2[i] += txz * x + tyz * y + tzz * z;
            }
        }
    }
}

/// Drops all cached grids and tables.
pub fn clear() {
    let mut c = caches().lock().unwrap_or_else(|e| e.into_inner());
    *c = Caches::default();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::surface_points;
    use crate::kernel::p2p;

    #[test]
    fn roundtrip() {
        let g = Grid::new(3);
        let data: Vec<f64> = (0..216).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let back = g.inverse(&g.forward(&data));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b / 216.0).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_matches_direct() {
        for (kernel, p, d) in [
            (Kernel::Laplace, 5, [2i64, -3, 1]),
            (Kernel::Stokeslet, 5, [2, -3, 1]),
            (Kernel::Laplace, 8, [-2, 0, 3]),
            (Kernel::Stokeslet, 10, [0, 2, -2]),
            (Kernel::Laplace, 11, [3, 3, 3]),
        ] {
            let k = kernel.source_dim();
            let g = Grid::new(p);
            let h = 0.25;
            let tc = [0.3, 0.4, 0.5];
            let sc = [tc[0] + h * d[0] as f64, tc[1] + h * d[1] as f64, tc[2] + h * d[2] as f64];
            let src = surface_points(p, sc, INNER_EDGE * h).unwrap();
            let trg = surface_points(p, tc, INNER_EDGE * h).unwrap();
            let dens: Vec<f64> = (0..k * src.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
            let mut want = vec![0.0; k * trg.len()];
            p2p(kernel, &trg, &src, &dens, [0.0; 3], &mut want);
            let t = kernel_table(kernel, &g, [d[0] as f64, d[1] as f64, d[2] as f64]);
            let s = g.density_spectrum(&dens, k);
            let mut acc = vec![vec![Complex64::new(0.0, 0.0); g.half_len()]; k];
            accumulate(kernel, &t, &s, &mut acc);
            let mut got = vec![0.0; k * trg.len()];
            g.gather(&acc, 1.0 / h, &mut got);
            let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-13 * scale, "{kernel:?}");
            }
        }
    }
}
