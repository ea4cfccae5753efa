//! Asymptotic risk of generalized ridge regression under anisotropic
//! Gaussian designs: fixed-point solvers, risk and derivative evaluation,
//! optimal regularization and weighting, and a finite-sample Monte Carlo
//! harness.

// `!(x > 0.0)` is used throughout to reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod format;
pub mod montecarlo;
pub mod optimize;
pub mod risk;
pub mod selftest;
pub mod spectra;
pub mod stieltjes;

pub use error::{Error, Result};
