//! Periodic kernel-independent fast multipole method.
//!
//! A periodic sum is split into a near part (the unit box and `ell` layers of images,
//! evaluated with a KIFMM) and a far part encoded by a dense operator that maps the root
//! upward equivalent density to a downward density on a surface enclosing the box.

pub mod error;
pub mod experiments;
pub mod fmm;
pub mod geometry;
pub mod kernel;
pub mod linalg;
mod par;
pub mod periodize;
pub mod refsum;
pub mod report;

pub use error::{Error, Result};
pub use fmm::{evaluate, EvalRequest, EvalResult, FmmTree, Mode, Timings};
pub use geometry::{PeriodicSetup, Periodicity};
pub use kernel::{Kernel, Point};
pub use par::set_threads;
pub use periodize::{solve_m2l, PeriodizingOperator};
pub use refsum::{EwaldParams, PeriodicKernel};
