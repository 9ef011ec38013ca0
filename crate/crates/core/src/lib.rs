//! Functional spatial autoregressive models.
//!
//! Each unit `i` carries an outcome function `q_i` on `[0, 1]` that depends on
//! the neighborhood average of the other units' outcome functions through an
//! integral kernel `α(t, s)`:
//!
//! ```text
//! q_i(s) = ∫ q̄_i(t) α(t, s) dt + x_iᵀ β(s) + ε_i(s),   q̄_i = Σ_j w_ij q_j
//! ```
//!
//! The crate is `no_std` (with `alloc`) and contains the numerical pieces:
//!
//! * [`funcspace`]: quadrature grids, sampled functions, linear interpolation
//!   of discretely observed functions and the 2-Wasserstein diagnostic.
//! * [`basis`]: clamped B-spline bases and their Gram matrices.
//! * [`spatial`]: spatial weight matrices, spatial lags and instruments.
//! * [`dgp`]: simulation through a truncated Neumann series, a dense direct
//!   solver used as an oracle, and spatial-multiplier marginal effects.
//! * [`estimator`]: the penalized two-stage least squares estimator of
//!   `β(s)` and `α(·, s)` with heteroskedasticity-robust standard errors.
//! * [`inference`]: the Wald-type test for the absence of spatial effects.
//!
//! File formats, configuration and the Monte Carlo runner live in the
//! `fsar-harness` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod basis;
pub mod dgp;
pub mod estimator;
pub mod funcspace;
pub mod inference;
pub mod linalg;
pub mod normal;
pub mod rng;
pub mod spatial;

mod error;

pub use error::{Error, Result};

/// Dense column-major matrix used throughout the crate.
pub type Matrix = nalgebra::DMatrix<f64>;
/// Dense column vector.
pub type Vector = nalgebra::DVector<f64>;
