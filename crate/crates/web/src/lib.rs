//! WebAssembly bindings for the demo page in `www/`.

use std::cell::RefCell;

use pkifmm::experiments::{stokes_dipole, Operators};
use pkifmm::linalg::surface_factors;
use pkifmm::{evaluate, EvalRequest, EwaldParams, Kernel, PeriodicSetup, Periodicity, Point};
use wasm_bindgen::prelude::*;

thread_local! {
    static OPS: RefCell<Operators> = RefCell::new(Operators::new(None));
}

const MAX_P: usize = 10;
const MAX_GRID: usize = 256;

/// Two opposite unit charges.
pub fn charge_pair() -> (Vec<Point>, Vec<f64>) {
    (vec![[0.3, 0.4, 0.5], [0.7, 0.65, 0.45]], vec![1.0, -1.0])
}

/// Cell-centred `n × n` grid in the plane at height `z`, x slowest.
pub fn slice(n: usize, z: f64) -> Vec<Point> {
    let h = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h, z]);
        }
    }
    out
}

fn check(p: usize, n: usize) -> Result<(), String> {
    if !(3..=MAX_P).contains(&p) {
        return Err(format!("p must be in 3..={MAX_P}"));
    }
    if !(1..=MAX_GRID).contains(&n) {
        return Err(format!("grid size must be in 1..={MAX_GRID}"));
    }
    Ok(())
}

fn periodic_slice(kernel: Kernel, src: &[Point], q: &[f64], p: usize, n: usize, z: f64) -> Result<Vec<f64>, String> {
    check(p, n)?;
    let setup = PeriodicSetup::new(Periodicity::Tp, 2).map_err(|e| e.to_string())?;
    let op = OPS
        .with(|ops| ops.borrow_mut().get(kernel, setup, p, EwaldParams::default()))
        .map_err(|e| e.to_string())?;
    let targets = slice(n, z);
    let req = EvalRequest::new(kernel, src, q, &targets, setup, p).with_operator(&op);
    evaluate(&req).map(|r| r.potentials).map_err(|e| e.to_string())
}

/// Triply periodic Laplace potential of [`charge_pair`] on a slice.
pub fn laplace_potential(p: usize, n: usize, z: f64) -> Result<Vec<f64>, String> {
    let (src, q) = charge_pair();
    periodic_slice(Kernel::Laplace, &src, &q, p, n, z)
}

/// Triply periodic Stokes velocity (three components per point) of two opposite forces on a slice.
pub fn stokes_velocity(p: usize, n: usize, z: f64) -> Result<Vec<f64>, String> {
    let (src, f) = stokes_dipole();
    periodic_slice(Kernel::Stokeslet, &src, &f, p, n, z)
}

/// Singular values of the surface matrix, largest first.
pub fn spectrum(kernel: &str, p: usize) -> Result<Vec<f64>, String> {
    check(p, 1)?;
    let kernel = Kernel::from_name(kernel).map_err(|e| e.to_string())?;
    surface_factors(kernel, p).map(|f| f.singular_values.clone()).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn laplace_slice(p: usize, n: usize, z: f64) -> Result<Vec<f64>, JsError> {
    laplace_potential(p, n, z).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn stokes_slice(p: usize, n: usize, z: f64) -> Result<Vec<f64>, JsError> {
    stokes_velocity(p, n, z).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn singular_values(kernel: &str, p: usize) -> Result<Vec<f64>, JsError> {
    spectrum(kernel, p).map_err(|e| JsError::new(&e))
}
