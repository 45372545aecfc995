//! Kernel-independent FMM on an adaptive octree, with periodic wrapping of the near images.

pub mod fft;
pub mod tree;

use std::ops::Range;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{image_offsets, surface_count, surface_points, PeriodicSetup, Periodicity, BOX_CENTER, INNER_EDGE, OUTER_EDGE};
use crate::kernel::{p2p, Kernel, Point};
use crate::par::Stopwatch;
use crate::linalg::{surface_factors, SvdFactors};
use crate::periodize::{check_compatibility, far_field_eval, CompatibilityReport, PeriodizingOperator};

pub use tree::{FmmTree, Lists, TreeBox};

pub const DEFAULT_LEAF_CAPACITY: usize = 1000;

/// Potentials of a near-field pass and the root upward density it produced.
#[derive(Clone, Debug)]
pub struct NearField {
    /// In input target order.
    pub potentials: Vec<f64>,
    pub root_upward: Vec<f64>,
}

struct Ctx<'a> {
    kernel: Kernel,
    p: usize,
    n: usize,
    factors: std::sync::Arc<SvdFactors>,
    inner: Vec<Point>,
    outer: Vec<Point>,
    tree: &'a FmmTree,
    strengths: Vec<f64>,
}

fn place(unit: &[Point], center: Point, h: f64) -> Vec<Point> {
    unit.iter().map(|u| [center[0] + h * u[0], center[1] + h * u[1], center[2] + h * u[2]]).collect()
}

fn add_shift(c: Point, s: [i64; 3]) -> Point {
    [c[0] + s[0] as f64, c[1] + s[1] as f64, c[2] + s[2] as f64]
}

impl<'a> Ctx<'a> {
    fn new(tree: &'a FmmTree, kernel: Kernel, strengths: &[f64], p: usize) -> Result<Self> {
        let ks = kernel.source_dim();
        if strengths.len() != ks * tree.sources.len() {
            return Err(Error::InvalidArgument(format!(
                "{} strengths for {} sources of dimension {ks}",
                strengths.len(),
                tree.sources.len()
            )));
        }
        if p < 2 {
            return Err(Error::InvalidArgument(format!("p must be at least 2, got {p}")));
        }
        let mut sorted = vec![0.0; strengths.len()];
        for (i, &o) in tree.src_order.iter().enumerate() {
            sorted[ks * i..ks * (i + 1)].copy_from_slice(&strengths[ks * o..ks * (o + 1)]);
        }
        Ok(Ctx {
            kernel,
            p,
            n: surface_count(p),
            factors: surface_factors(kernel, p)?,
            inner: surface_points(p, [0.0; 3], INNER_EDGE)?,
            outer: surface_points(p, [0.0; 3], OUTER_EDGE)?,
            tree,
            strengths: sorted,
        })
    }

    fn src(&self, r: &Range<usize>) -> (&[Point], &[f64]) {
        let k = self.kernel.source_dim();
        (&self.tree.sources[r.clone()], &self.strengths[k * r.start..k * r.end])
    }

    fn upward_pass(&self) -> Vec<Option<Vec<f64>>> {
        let t = self.tree;
        let mut up: Vec<Option<Vec<f64>>> = vec![None; t.boxes.len()];
        let kt = self.kernel.target_dim();
        for level in t.levels.iter().rev() {
            let ids: Vec<usize> = level.iter().copied().filter(|&b| t.boxes[b].n_src() > 0).collect();
            let dens = crate::par::map_range(ids.len(), |i| {
                let b = &t.boxes[ids[i]];
                let h = b.size();
                let check_pts = place(&self.outer, b.center(), h);
                let mut check = vec![0.0; kt * self.n];
                if b.is_leaf() {
                    let (s, q) = self.src(&b.src);
                    p2p(self.kernel, &check_pts, s, q, [0.0; 3], &mut check);
                } else {
                    for &c in &b.children {
                        if let Some(d) = &up[c] {
                            let cb = &t.boxes[c];
                            let eq = place(&self.inner, cb.center(), cb.size());
                            p2p(self.kernel, &check_pts, &eq, d, [0.0; 3], &mut check);
                        }
                    }
                }
                let mut phi = self.factors.pinv_transpose_apply(&check).expect("surface sizes agree");
                phi.iter_mut().for_each(|v| *v *= h);
                phi
            });
            for (b, d) in ids.into_iter().zip(dens) {
                up[b] = Some(d);
            }
        }
        up
    }

    fn run(&self, setup: &PeriodicSetup) -> (Vec<f64>, Vec<f64>) {
        let t = self.tree;
        let kernel = self.kernel;
        let ks = kernel.source_dim();
        let kt = kernel.target_dim();
        let n = self.n;
        let up = self.upward_pass();
        let lists = t.interaction_lists(setup);
        let grid = fft::grid(self.p);
        let mut down: Vec<Option<Vec<f64>>> = vec![None; t.boxes.len()];
        let mut pot = vec![0.0; kt * t.targets.len()];

        if setup.dims() > 0 && setup.ell >= 2 && t.boxes[0].n_trg() > 0 {
            if let Some(u0) = &up[0] {
                let offsets = image_offsets(setup, 2, setup.ell as i64);
                let table = fft::summed_table(kernel, self.p, setup.axes, setup.ell, &offsets);
                let spec = grid.density_spectrum(u0, ks);
                let mut acc = vec![vec![Complex64::new(0.0, 0.0); grid.half_len()]; kt];
                fft::accumulate(kernel, &table, &spec, &mut acc);
                let mut check = vec![0.0; kt * n];
                grid.gather(&acc, 1.0, &mut check);
                down[0] = Some(self.factors.pinv_apply(&check).expect("surface sizes agree"));
            }
        }

        for (l, level) in t.levels.iter().enumerate().skip(1) {
            let ids: Vec<usize> = level.iter().copied().filter(|&b| t.boxes[b].n_trg() > 0).collect();
            let scale = (1i64 << l) as i64;
            let offset = |c: usize, e: usize, s: [i64; 3]| {
                let (a, b) = (t.boxes[c].anchor, t.boxes[e].anchor);
                [b[0] + s[0] * scale - a[0], b[1] + s[1] * scale - a[1], b[2] + s[2] * scale - a[2]]
            };
            let mut srcs: Vec<usize> = ids.iter().flat_map(|&c| lists[c].v.iter().map(|&(e, _)| e)).collect();
            srcs.sort_unstable();
            srcs.dedup();
            let mut offs: Vec<[i64; 3]> =
                ids.iter().flat_map(|&c| lists[c].v.iter().map(move |&(e, s)| offset(c, e, s))).collect();
            offs.sort_unstable();
            offs.dedup();
            let tables = fft::tables(kernel, self.p, &offs);
            let spectra = crate::par::map_range(srcs.len(), |i| {
                grid.density_spectrum(up[srcs[i]].as_ref().expect("source box has a density"), ks)
            });
            let spec_of = |e: usize| &spectra[srcs.binary_search(&e).expect("spectrum computed")];

            let results = crate::par::map_range(ids.len(), |i| {
                let c = ids[i];
                let b = &t.boxes[c];
                let h = b.size();
                let center = b.center();
                let mut check = vec![0.0; kt * n];
                let mut touched = false;
                let mut direct: Vec<f64> = Vec::new();
                let l = &lists[c];
                if !l.v.is_empty() {
                    let mut acc = vec![vec![Complex64::new(0.0, 0.0); grid.half_len()]; kt];
                    for &(e, s) in &l.v {
                        fft::accumulate(kernel, &tables[&offset(c, e, s)], spec_of(e), &mut acc);
                    }
                    grid.gather(&acc, 1.0 / h, &mut check);
                    touched = true;
                }
                if !l.x.is_empty() {
                    if b.n_trg() <= n {
                        direct = vec![0.0; kt * b.n_trg()];
                        for &(e, s) in &l.x {
                            let (sp, q) = self.src(&t.boxes[e].src);
                            p2p(kernel, &t.targets[b.trg.clone()], sp, q, add_shift([0.0; 3], s), &mut direct);
                        }
                    } else {
                        let pts = place(&self.inner, center, h);
                        for &(e, s) in &l.x {
                            let (sp, q) = self.src(&t.boxes[e].src);
                            p2p(kernel, &pts, sp, q, add_shift([0.0; 3], s), &mut check);
                        }
                        touched = true;
                    }
                }
                if let Some(pd) = b.parent.and_then(|pa| down[pa].as_ref().map(|d| (pa, d))) {
                    let pb = &t.boxes[pd.0];
                    let eq = place(&self.outer, pb.center(), pb.size());
                    let pts = place(&self.inner, center, h);
                    p2p(kernel, &pts, &eq, pd.1, [0.0; 3], &mut check);
                    touched = true;
                }
                let dens = touched.then(|| {
                    let mut phi = self.factors.pinv_apply(&check).expect("surface sizes agree");
                    phi.iter_mut().for_each(|v| *v *= h);
                    phi
                });
                (dens, direct)
            });
            for (&c, (dens, direct)) in ids.iter().zip(results) {
                down[c] = dens;
                if !direct.is_empty() {
                    let r = &t.boxes[c].trg;
                    for (o, v) in pot[kt * r.start..kt * r.end].iter_mut().zip(direct) {
                        *o += v;
                    }
                }
            }
        }

        let leaves: Vec<usize> = t.leaves().filter(|&b| t.boxes[b].n_trg() > 0).collect();
        let leaf_pot = crate::par::map_range(leaves.len(), |i| {
            let b = &t.boxes[leaves[i]];
            let trg = &t.targets[b.trg.clone()];
            let mut out = vec![0.0; kt * trg.len()];
            if let Some(d) = &down[leaves[i]] {
                let eq = place(&self.outer, b.center(), b.size());
                p2p(kernel, trg, &eq, d, [0.0; 3], &mut out);
            }
            let l = &lists[leaves[i]];
            for &(e, s) in &l.u {
                let (sp, q) = self.src(&t.boxes[e].src);
                p2p(kernel, trg, sp, q, add_shift([0.0; 3], s), &mut out);
            }
            for &(e, s) in &l.w {
                let eb = &t.boxes[e];
                if eb.n_src() <= n {
                    let (sp, q) = self.src(&eb.src);
                    p2p(kernel, trg, sp, q, add_shift([0.0; 3], s), &mut out);
                } else {
                    let eq = place(&self.inner, add_shift(eb.center(), s), eb.size());
                    p2p(kernel, trg, &eq, up[e].as_ref().expect("source box has a density"), [0.0; 3], &mut out);
                }
            }
            out
        });
        for (&b, vals) in leaves.iter().zip(leaf_pot) {
            let r = &t.boxes[b].trg;
            for (o, v) in pot[kt * r.start..kt * r.end].iter_mut().zip(vals) {
                *o += v;
            }
        }

        let mut out = vec![0.0; pot.len()];
        for (i, &o) in t.trg_order.iter().enumerate() {
            out[kt * o..kt * (o + 1)].copy_from_slice(&pot[kt * i..kt * (i + 1)]);
        }
        let root_up = up[0].clone().unwrap_or_else(|| vec![0.0; ks * n]);
        (out, root_up)
    }
}

/// Free-space potentials at the tree targets (input order), coincident pairs skipped.
pub fn eval_free_space(tree: &FmmTree, kernel: Kernel, strengths: &[f64], p: usize) -> Result<Vec<f64>> {
    let ctx = Ctx::new(tree, kernel, strengths, p)?;
    Ok(ctx.run(&PeriodicSetup::free()).0)
}

/// Sum over the images with max-norm at most `ell`, plus the root upward density.
pub fn eval_near_field(tree: &FmmTree, kernel: Kernel, strengths: &[f64], setup: &PeriodicSetup, p: usize) -> Result<NearField> {
    let ctx = Ctx::new(tree, kernel, strengths, p)?;
    let (potentials, root_upward) = ctx.run(setup);
    Ok(NearField { potentials, root_upward })
}

/// Root upward density from the tree's upward pass.
pub fn root_upward_density(tree: &FmmTree, kernel: Kernel, strengths: &[f64], p: usize) -> Result<Vec<f64>> {
    let ctx = Ctx::new(tree, kernel, strengths, p)?;
    let up = ctx.upward_pass();
    Ok(up[0].clone().unwrap_or_else(|| vec![0.0; kernel.source_dim() * ctx.n]))
}

/// Root upward density computed straight from the sources.
pub fn root_upward_density_direct(kernel: Kernel, sources: &[Point], strengths: &[f64], p: usize) -> Result<Vec<f64>> {
    let check_pts = surface_points(p, BOX_CENTER, OUTER_EDGE)?;
    let mut check = vec![0.0; kernel.target_dim() * check_pts.len()];
    p2p(kernel, &check_pts, sources, strengths, [0.0; 3], &mut check);
    surface_factors(kernel, p)?.pinv_transpose_apply(&check)
}

/// Brute-force sum over the `(2ell+1)^d` near images, coincident pairs skipped.
pub fn near_field_direct(kernel: Kernel, sources: &[Point], strengths: &[f64], targets: &[Point], setup: &PeriodicSetup) -> Vec<f64> {
    let offsets = if setup.dims() == 0 { vec![[0; 3]] } else { setup.near_offsets() };
    let kt = kernel.target_dim();
    let mut out = vec![0.0; kt * targets.len()];
    crate::par::for_chunks(&mut out, kt * 64, |c, chunk| {
        let lo = c * 64;
        let hi = (lo + 64).min(targets.len());
        for s in &offsets {
            p2p(kernel, &targets[lo..hi], sources, strengths, add_shift([0.0; 3], *s), chunk);
        }
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fmm,
    Direct,
}

/// Everything needed for one evaluation.
#[derive(Clone, Debug)]
pub struct EvalRequest<'a> {
    pub kernel: Kernel,
    pub sources: &'a [Point],
    pub strengths: &'a [f64],
    pub targets: &'a [Point],
    pub setup: PeriodicSetup,
    pub p: usize,
    pub operator: Option<&'a PeriodizingOperator>,
    pub mode: Mode,
    pub leaf_capacity: usize,
    /// Skip the compatibility gate.
    pub force: bool,
}

impl<'a> EvalRequest<'a> {
    pub fn new(kernel: Kernel, sources: &'a [Point], strengths: &'a [f64], targets: &'a [Point], setup: PeriodicSetup, p: usize) -> Self {
        EvalRequest {
            kernel,
            sources,
            strengths,
            targets,
            setup,
            p,
            operator: None,
            mode: Mode::Fmm,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
            force: false,
        }
    }

    pub fn with_operator(mut self, op: &'a PeriodizingOperator) -> Self {
        self.operator = Some(op);
        self
    }
}

/// Wall-clock seconds of the four stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub tree: f64,
    pub near: f64,
    pub m2l_apply: f64,
    pub far: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.tree + self.near + self.m2l_apply + self.far
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub potentials: Vec<f64>,
    pub timings: Timings,
    pub compatibility: CompatibilityReport,
}

/// Maps targets on periodic axes into `[0,1)`.
pub fn wrap_targets(targets: &[Point], setup: &PeriodicSetup) -> Vec<Point> {
    targets
        .iter()
        .map(|x| {
            let mut y = *x;
            for a in 0..3 {
                if setup.axes[a] {
                    y[a] -= y[a].floor();
                    if y[a] >= 1.0 {
                        y[a] = 0.0;
                    }
                }
            }
            y
        })
        .collect()
}

/// Near field plus periodized far field.
pub fn evaluate(req: &EvalRequest<'_>) -> Result<EvalResult> {
    let kernel = req.kernel;
    let ks = kernel.source_dim();
    if req.strengths.len() != ks * req.sources.len() {
        return Err(Error::InvalidArgument(format!(
            "{} strengths for {} sources of dimension {ks}",
            req.strengths.len(),
            req.sources.len()
        )));
    }
    let compatibility = check_compatibility(kernel, &req.setup, req.strengths);
    if !req.force {
        compatibility.clone().into_result()?;
    }
    let periodic = req.setup.periodicity != Periodicity::None;
    if periodic {
        let op = req
            .operator
            .ok_or_else(|| Error::Config("periodic evaluation needs a periodizing operator".into()))?;
        op.check_provenance(kernel, &req.setup, req.p)?;
    }
    let targets = wrap_targets(req.targets, &req.setup);
    let mut timings = Timings::default();
    let (mut potentials, root_up) = match req.mode {
        Mode::Fmm => {
            let t0 = Stopwatch::start();
            let tree = FmmTree::build(req.sources, &targets, req.leaf_capacity)?;
            timings.tree = t0.secs();
            let t1 = Stopwatch::start();
            let nf = eval_near_field(&tree, kernel, req.strengths, &req.setup, req.p)?;
            timings.near = t1.secs();
            (nf.potentials, nf.root_upward)
        }
        Mode::Direct => {
            let t1 = Stopwatch::start();
            let q = near_field_direct(kernel, req.sources, req.strengths, &targets, &req.setup);
            let u = if periodic { root_upward_density_direct(kernel, req.sources, req.strengths, req.p)? } else { Vec::new() };
            timings.near = t1.secs();
            (q, u)
        }
    };
    if let (true, Some(op)) = (periodic, req.operator) {
        let t2 = Stopwatch::start();
        let down = op.apply(&root_up)?;
        timings.m2l_apply = t2.secs();
        let t3 = Stopwatch::start();
        let far = far_field_eval(kernel, req.p, &down, &targets)?;
        timings.far = t3.secs();
        let shift = if op.header.background_removed {
            crate::periodize::background_constant(req.p, req.sources, req.strengths, &root_up)?
        } else {
            0.0
        };
        for (q, f) in potentials.iter_mut().zip(far) {
            *q += f + shift;
        }
    }
    Ok(EvalResult { potentials, timings, compatibility })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::direct_sum;
    use crate::report::rel_l2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect()
    }

    fn charges(n: usize, k: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..k * n).map(|_| rng.random::<f64>() - 0.5).collect()
    }

    #[test]
    fn two_far_points_are_exact() {
        let s = [[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]];
        let tree = FmmTree::build(&s, &s, 1).unwrap();
        let got = eval_free_space(&tree, Kernel::Laplace, &[1.0, 2.0], 6).unwrap();
        let want = direct_sum(Kernel::Laplace, &s, &[1.0, 2.0], &s);
        assert!(rel_l2(&got, &want).unwrap() < 1e-5);
        let tree = FmmTree::build(&s, &s, 10).unwrap();
        let got = eval_free_space(&tree, Kernel::Laplace, &[1.0, 2.0], 6).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn free_space_converges_in_p() {
        let pts = cloud(2000, 11);
        let q = charges(2000, 1, 12);
        let tree = FmmTree::build(&pts, &pts, 60).unwrap();
        let want = direct_sum(Kernel::Laplace, &pts, &q, &pts);
        let mut last = f64::INFINITY;
        for p in [4, 6, 8] {
            let got = eval_free_space(&tree, Kernel::Laplace, &q, p).unwrap();
            let e = rel_l2(&got, &want).unwrap();
            assert!(e < last, "p={p}: {e} !< {last}");
            last = e;
        }
        assert!(last < 1e-6, "{last}");
    }

    #[test]
    fn stokes_free_space() {
        let pts = cloud(1500, 13);
        let q = charges(1500, 3, 14);
        let tree = FmmTree::build(&pts, &pts, 50).unwrap();
        let want = direct_sum(Kernel::Stokeslet, &pts, &q, &pts);
        let mut last = f64::INFINITY;
        for p in [4, 8, 12] {
            let got = eval_free_space(&tree, Kernel::Stokeslet, &q, p).unwrap();
            let e = rel_l2(&got, &want).unwrap();
            assert!(e < last, "p={p}: {e} !< {last}");
            last = e;
        }
        assert!(last < 1e-8, "{last}");
    }

    #[test]
    fn near_field_matches_brute_force() {
        let pts = cloud(150, 15);
        let q = charges(150, 1, 16);
        for per in [Periodicity::Sp, Periodicity::Dp, Periodicity::Tp] {
            for ell in [1, 2] {
                let setup = PeriodicSetup::new(per, ell).unwrap();
                let tree = FmmTree::build(&pts, &pts, 10).unwrap();
                let got = eval_near_field(&tree, Kernel::Laplace, &q, &setup, 10).unwrap();
                let want = near_field_direct(Kernel::Laplace, &pts, &q, &pts, &setup);
                let e = rel_l2(&got.potentials, &want).unwrap();
                assert!(e < 1e-7, "{per:?} ell={ell}: {e}");
            }
        }
    }

    #[test]
    fn root_density_reproduces_far_field() {
        let pts = cloud(300, 17);
        let q = charges(300, 1, 18);
        let tree = FmmTree::build(&pts, &pts, 20).unwrap();
        let u = root_upward_density(&tree, Kernel::Laplace, &q, 8).unwrap();
        let ud = root_upward_density_direct(Kernel::Laplace, &pts, &q, 8).unwrap();
        let eq = surface_points(8, BOX_CENTER, INNER_EDGE).unwrap();
        let probe = [[3.5, 0.5, 0.5], [0.5, -2.5, 0.5]];
        let want = direct_sum(Kernel::Laplace, &pts, &q, &probe);
        for dens in [&u, &ud] {
            let got = direct_sum(Kernel::Laplace, &eq, dens, &probe);
            assert!(rel_l2(&got, &want).unwrap() < 1e-6);
        }
        let zero = root_upward_density_direct(Kernel::Laplace, &pts, &vec![0.0; 300], 8).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrapping() {
        let s = PeriodicSetup::new(Periodicity::Sp, 1).unwrap();
        let w = wrap_targets(&[[0.5, 0.5, 1.0], [0.2, 0.3, -0.25]], &s);
        assert_eq!(w, vec![[0.5, 0.5, 0.0], [0.2, 0.3, 0.75]]);
    }

    #[test]
    fn triply_periodic_laplace_has_zero_mean_gauge() {
        use crate::periodize::solve_m2l;
        use crate::refsum::PeriodicKernel;
        let setup = PeriodicSetup::new(Periodicity::Tp, 2).unwrap();
        let src = vec![[0.1, 0.2, 0.15], [0.9, 0.3, 0.4], [0.5, 0.85, 0.9]];
        let q = vec![1.0, -0.25, -0.75];
        let trg = cloud(40, 3);
        let op = solve_m2l(Kernel::Laplace, setup, 8, Default::default()).unwrap();
        let got = evaluate(&EvalRequest::new(Kernel::Laplace, &src, &q, &trg, setup, 8).with_operator(&op)).unwrap();
        let pk = PeriodicKernel::new(Kernel::Laplace, setup, Default::default()).unwrap();
        let want = pk.oracle_system_eval(&src, &q, &trg).unwrap();
        let err = got.potentials.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-5, "{err}");
    }
}
