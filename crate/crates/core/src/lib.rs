//! Solvers and theory for box-constrained least-squares recovery of binary
//! signals from noisy random linear measurements.

pub mod baselines;
pub mod contraction;
pub mod error;
pub mod harness;
pub mod exact_solver;
pub mod linalg;
pub mod model;
pub mod rephasing;
pub mod theory;

pub use error::{ClupError, Result};
