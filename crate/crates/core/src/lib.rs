//! Partial functional linear regression fitted with B-splines, together with
//! empirical-likelihood and normal-approximation confidence regions for the
//! scalar regression coefficients.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: quadrature, symmetric linear algebra, chi-square quantiles
//!   and the deterministic random stream.
//! - [`bspline`]: clamped B-spline bases and the functional design matrix.
//! - [`pflr`]: profile least-squares fit and leave-one-out knot selection.
//! - [`el`]: empirical-likelihood scores and the dual Newton solver.
//! - [`inference`]: confidence-region construction for both methods.
//! - [`simgen`]: the three simulation models used in coverage studies.

pub mod bspline;
pub mod el;
pub mod error;
pub mod inference;
pub mod numerics;
pub mod pflr;
pub mod simgen;

pub use error::{Error, Result};
