//! Adaptive nonlinear predictive control for scalar pseudo-linear
//! input-output systems.
//!
//! The crate is `no_std` (with `alloc`) and contains only the numerical
//! machinery:
//!
//! * [`basis`]: polynomial, Fourier and cubic Hermite spline dictionaries.
//! * [`model`]: regressor construction and one-step prediction for the
//!   identified pseudo-linear model.
//! * [`ident`]: recursive least squares with forgetting restricted to the
//!   information subspace of the current regressor.
//! * [`qp`]: the dense equality/box constrained QP used by the horizon
//!   optimization.
//! * [`impc`]: iterative receding-horizon optimization over state-dependent
//!   coefficients, accelerated with Broyden's method.
//! * [`plant`]: benchmark plants, command signals, the closed-loop driver and
//!   the built-in experiment presets.
//!
//! File formats, configuration parsing and the command-line front end live in
//! the `npcac-cli` crate.
#![no_std]

extern crate alloc;

pub mod basis;
mod error;
pub mod ident;
pub mod impc;
pub mod model;
pub mod plant;
pub mod qp;

pub use crate::error::{Error, Result};

/// Crate version, embedded in run summaries.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
