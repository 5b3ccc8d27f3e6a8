//! Linear-exponential-Gaussian and risk-sensitive filtering for general
//! Gaussian signals.
//!
//! The crate solves the Riccati–Volterra covariance recursion, runs the
//! optimal filter and its auxiliary processes, evaluates the conditional
//! Cameron–Martin factorization of the exponential-quadratic criterion and
//! checks all of it against an exact joint-Gaussian oracle and Monte Carlo
//! simulation.
//!
//! Steps are numbered `1..=T` in every human-facing output and stored at
//! index `t - 1` internally.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

pub mod error;
pub mod linalg;
pub mod model;
pub mod par;
pub mod filter;
pub mod volterra;
pub mod oracle;
pub mod cameron_martin;
pub mod sim;
pub mod config;
pub mod cli;

pub use error::{Error, Result, Violation};
pub use linalg::LowerTri;
pub use model::{GaussianModel, RiskSpec, Trajectory};
pub use par::Execution;
