//! Periodic setups, image lattices, cube surfaces and Clenshaw-Curtis grids.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Point;

/// Edge factor of the inner surfaces (upward equivalent, downward check).
pub const INNER_EDGE: f64 = 1.05;
/// Edge factor of the outer surfaces (upward check, downward equivalent).
pub const OUTER_EDGE: f64 = 2.95;

/// Center of the unit box `[0,1)³`.
pub const BOX_CENTER: Point = [0.5, 0.5, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Periodicity {
    None,
    Sp,
    Dp,
    Tp,
}

impl Periodicity {
    pub fn from_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "none" | "free" => Ok(Periodicity::None),
            "sp" => Ok(Periodicity::Sp),
            "dp" => Ok(Periodicity::Dp),
            "tp" => Ok(Periodicity::Tp),
            other => Err(Error::Config(format!("unknown periodicity '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Periodicity::None => "none",
            Periodicity::Sp => "sp",
            Periodicity::Dp => "dp",
            Periodicity::Tp => "tp",
        }
    }

    pub fn dims(self) -> usize {
        match self {
            Periodicity::None => 0,
            Periodicity::Sp => 1,
            Periodicity::Dp => 2,
            Periodicity::Tp => 3,
        }
    }

    /// SP along z, DP in the x-y plane.
    pub fn default_axes(self) -> [bool; 3] {
        match self {
            Periodicity::None => [false; 3],
            Periodicity::Sp => [false, false, true],
            Periodicity::Dp => [true, true, false],
            Periodicity::Tp => [true; 3],
        }
    }
}

/// Periodic directions of the unit box and the near-field depth `ell`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PeriodicSetup {
    pub periodicity: Periodicity,
    pub axes: [bool; 3],
    pub ell: usize,
}

impl PeriodicSetup {
    pub fn new(periodicity: Periodicity, ell: usize) -> Result<Self> {
        Self::with_axes(periodicity, periodicity.default_axes(), ell)
    }

    pub fn with_axes(periodicity: Periodicity, axes: [bool; 3], ell: usize) -> Result<Self> {
        let d = axes.iter().filter(|&&a| a).count();
        if d != periodicity.dims() {
            return Err(Error::Config(format!(
                "{} periodicity needs {} periodic axes, got {:?}",
                periodicity.name(),
                periodicity.dims(),
                axes
            )));
        }
        if ell < 1 && periodicity != Periodicity::None {
            return Err(Error::Config("ell must be at least 1".into()));
        }
        Ok(PeriodicSetup { periodicity, axes, ell })
    }

    pub fn free() -> Self {
        PeriodicSetup { periodicity: Periodicity::None, axes: [false; 3], ell: 0 }
    }

    pub fn dims(&self) -> usize {
        self.periodicity.dims()
    }

    /// Offsets with max-norm in `[0, ell]`.
    pub fn near_offsets(&self) -> Vec<[i64; 3]> {
        image_offsets(self, 0, self.ell as i64)
    }
}

/// Integer lattice offsets on the periodic axes with max-norm in `[min_norm, max_norm]`.
pub fn image_offsets(setup: &PeriodicSetup, min_norm: i64, max_norm: i64) -> Vec<[i64; 3]> {
    let range = |a: usize| if setup.axes[a] { -max_norm..=max_norm } else { 0..=0 };
    let mut out = Vec::new();
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let n = i.abs().max(j.abs()).max(k.abs());
                if n >= min_norm && n <= max_norm {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

/// Grid indices `(i, j, k)` of the surface points, in output order.
pub fn surface_grid(p: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(6 * (p - 1) * (p - 1) + 2);
    let edge = |i: usize| i == 0 || i == p - 1;
    for i in 0..p {
        for j in 0..p {
            for k in 0..p {
                if edge(i) || edge(j) || edge(k) {
                    out.push([i, j, k]);
                }
            }
        }
    }
    out
}

pub fn surface_count(p: usize) -> usize {
    6 * (p - 1) * (p - 1) + 2
}

/// Regular `p`-per-edge points on the surface of a cube with the given edge and center.
pub fn surface_points(p: usize, center: Point, edge: f64) -> Result<Vec<Point>> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("surface needs p >= 2, got {p}")));
    }
    let step = 1.0 / (p - 1) as f64;
    Ok(surface_grid(p)
        .into_iter()
        .map(|g| {
            let mut x = [0.0; 3];
            for d in 0..3 {
                x[d] = center[d] + edge * (g[d] as f64 * step - 0.5);
            }
            x
        })
        .collect())
}

/// The four KIFMM surfaces of a box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub p: usize,
    pub center: Point,
    pub inner_edge: f64,
    pub outer_edge: f64,
}

impl SurfaceSpec {
    pub fn new(p: usize, center: Point) -> Self {
        SurfaceSpec { p, center, inner_edge: INNER_EDGE, outer_edge: OUTER_EDGE }
    }

    /// Points at `edge_factor · 2^-level`.
    pub fn points(&self, edge_factor: f64, level: u32) -> Result<Vec<Point>> {
        surface_points(self.p, self.center, edge_factor * (0.5f64).powi(level as i32))
    }

    pub fn upward_equivalent(&self, level: u32) -> Result<Vec<Point>> {
        self.points(self.inner_edge, level)
    }

    pub fn upward_check(&self, level: u32) -> Result<Vec<Point>> {
        self.points(self.outer_edge, level)
    }

    pub fn downward_equivalent(&self, level: u32) -> Result<Vec<Point>> {
        self.points(self.outer_edge, level)
    }

    pub fn downward_check(&self, level: u32) -> Result<Vec<Point>> {
        self.points(self.inner_edge, level)
    }
}

/// Nodes and weights of a quadrature rule on `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Clenshaw-Curtis rule with `n` Chebyshev extrema mapped to `[0,1]`.
pub fn clenshaw_curtis(n: usize) -> Result<QuadratureGrid> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("Clenshaw-Curtis needs n >= 2, got {n}")));
    }
    let m = n - 1;
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for k in 0..n {
        let t = (k as f64 * PI / m as f64).cos();
        nodes.push(0.5 * (1.0 - t));
        let c = if k == 0 || k == m { 1.0 } else { 2.0 };
        let mut s = 0.0;
        for j in 1..=m / 2 {
            let b = if 2 * j == m { 1.0 } else { 2.0 };
            s += b / (4.0 * (j * j) as f64 - 1.0) * (2.0 * (j * k) as f64 * PI / m as f64).cos();
        }
        weights.push(0.5 * c / m as f64 * (1.0 - s));
    }
    nodes[0] = 0.0;
    nodes[m] = 1.0;
    Ok(QuadratureGrid { nodes, weights })
}

/// Tensor-product quadrature of `n×n` samples laid out row-major (`values[i*n + j]` at `(c_i, c_j)`).
pub fn surface_flux(values: &[f64], grid: &QuadratureGrid) -> Result<f64> {
    let n = grid.len();
    if values.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "expected {} face samples, got {}",
            n * n,
            values.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| values[i * n + j] * grid.weights[j]).sum();
        total += grid.weights[i] * row;
    }
    Ok(total)
}

/// Chebyshev tensor grid of `n³` points on the closed unit cube, x slowest.
pub fn chebyshev_cube(n: usize) -> Result<Vec<Point>> {
    let g = clenshaw_curtis(n)?;
    let mut out = Vec::with_capacity(n * n * n);
    for &x in &g.nodes {
        for &y in &g.nodes {
            for &z in &g.nodes {
                out.push([x, y, z]);
            }
        }
    }
    Ok(out)
}

/// Grid points on the face `axis = 0`; the two remaining axes in increasing order, first slowest.
pub fn face_points(axis: usize, grid: &QuadratureGrid) -> Vec<Point> {
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    let mut out = Vec::with_capacity(grid.len() * grid.len());
    for &u in &grid.nodes {
        for &v in &grid.nodes {
            let mut x = [0.0; 3];
            x[a] = u;
            x[b] = v;
            out.push(x);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn surface_counts() {
        assert_eq!(surface_points(2, BOX_CENTER, 1.0).unwrap().len(), 8);
        assert_eq!(surface_points(6, BOX_CENTER, 1.0).unwrap().len(), 152);
        assert_eq!(surface_points(16, BOX_CENTER, 1.0).unwrap().len(), 1352);
        assert!(surface_points(1, BOX_CENTER, 1.0).is_err());
    }

    #[test]
    fn surface_points_are_distinct_and_on_the_cube() {
        let pts = surface_points(7, [0.2, 0.3, 0.4], 2.0).unwrap();
        for (i, a) in pts.iter().enumerate() {
            let m = (0..3).map(|d| (a[d] - [0.2, 0.3, 0.4][d]).abs()).fold(0.0, f64::max);
            assert!((m - 1.0).abs() < 1e-15);
            for b in &pts[i + 1..] {
                assert!(a != b);
            }
        }
    }

    #[test]
    fn surface_roles_coincide() {
        let s = SurfaceSpec::new(5, BOX_CENTER);
        assert_eq!(s.upward_equivalent(2).unwrap(), s.downward_check(2).unwrap());
        assert_eq!(s.upward_check(1).unwrap(), s.downward_equivalent(1).unwrap());
    }

    #[test]
    fn surface_scaling_is_exact() {
        let unit = surface_points(6, [0.0; 3], 1.0).unwrap();
        let big = surface_points(6, [0.0; 3], 2.95).unwrap();
        for (u, b) in unit.iter().zip(&big) {
            for d in 0..3 {
                assert_eq!(b[d], 2.95 * u[d]);
            }
        }
    }

    #[test]
    fn offsets_counts() {
        let tp = PeriodicSetup::new(Periodicity::Tp, 2).unwrap();
        assert_eq!(image_offsets(&tp, 1, 1).len(), 26);
        assert_eq!(image_offsets(&tp, 1, 2).len(), 124);
        let sp = PeriodicSetup::new(Periodicity::Sp, 2).unwrap();
        assert_eq!(image_offsets(&sp, 1, 2).len(), 4);
        assert!(image_offsets(&sp, 1, 2).iter().all(|o| o[0] == 0 && o[1] == 0));
        let dp = PeriodicSetup::new(Periodicity::Dp, 3).unwrap();
        assert_eq!(dp.near_offsets().len(), 49);
        assert!(!image_offsets(&dp, 1, 3).contains(&[0, 0, 0]));
    }

    #[test]
    fn setup_validation() {
        assert!(PeriodicSetup::with_axes(Periodicity::Sp, [true, true, false], 2).is_err());
        assert!(PeriodicSetup::new(Periodicity::Tp, 0).is_err());
        let s = PeriodicSetup::with_axes(Periodicity::Sp, [true, false, false], 1).unwrap();
        assert_eq!(image_offsets(&s, 1, 1), vec![[-1, 0, 0], [1, 0, 0]]);
    }

    #[test]
    fn clenshaw_curtis_rules() {
        for n in [2, 3, 4, 11, 97] {
            let g = clenshaw_curtis(n).unwrap();
            let s: f64 = g.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "n={n}");
            assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
        }
        let g = clenshaw_curtis(97).unwrap();
        assert_eq!((g.nodes[0], g.nodes[96]), (0.0, 1.0));
        let x2: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| x * x * w).sum();
        assert!((x2 - 1.0 / 3.0).abs() < 1e-14);
        assert!(clenshaw_curtis(1).is_err());
    }

    #[test]
    fn flux_of_simple_fields() {
        let g = clenshaw_curtis(97).unwrap();
        let n = g.len();
        let ones = vec![1.0; n * n];
        assert!((surface_flux(&ones, &g).unwrap() - 1.0).abs() < 1e-14);
        let xs: Vec<f64> = (0..n * n).map(|k| g.nodes[k / n]).collect();
        assert!((surface_flux(&xs, &g).unwrap() - 0.5).abs() < 1e-14);
        let s: Vec<f64> = (0..n * n)
            .map(|k| (2.0 * PI * g.nodes[k / n]).sin() * (2.0 * PI * g.nodes[k % n]).sin())
            .collect();
        assert!(surface_flux(&s, &g).unwrap().abs() < 1e-12);
        assert!(surface_flux(&s[1..], &g).is_err());
    }

    proptest! {
        #[test]
        fn near_set_size(ell in 1usize..5, kind in 1usize..4) {
            let per = [Periodicity::None, Periodicity::Sp, Periodicity::Dp, Periodicity::Tp][kind];
            let s = PeriodicSetup::new(per, ell).unwrap();
            let n = (2 * ell + 1).pow(s.dims() as u32);
            prop_assert_eq!(image_offsets(&s, 1, ell as i64).len() + 1, n);
        }

        #[test]
        fn cc_is_exact_for_low_degree(n in 3usize..40, deg in 0usize..3) {
            let g = clenshaw_curtis(n).unwrap();
            let d = deg.min(n - 2) as i32;
            let v: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| x.powi(d) * w).sum();
            prop_assert!((v - 1.0 / (d as f64 + 1.0)).abs() < 1e-13);
        }
    }
}
