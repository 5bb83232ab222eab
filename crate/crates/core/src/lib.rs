//! Updated-transform solvers for sum-of-products and sum-of-ratios minimisation.
//!
//! The crate is layered bottom-up:
//!
//! * [`convex`] holds the stateless convex machinery (bisection, projections,
//!   projected gradient, dual bisection).
//! * [`transform`] implements the quadratic ratio transform, the updated product
//!   transform with its adaptive constant, and the block-coordinate driver.
//! * [`offloading`] and [`hetnet`] are the two application solvers.
//! * [`baselines`] holds independent reference solvers used for verification.

// negated comparisons are how NaN inputs get rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod convex;
pub mod error;
pub mod hetnet;
pub mod offloading;
pub mod trace;
pub mod transform;

pub use error::{Error, Result};
pub use trace::{ConvergenceTrace, SolveStatus, TraceRecord};

/// Default adaptive constant used when the `B` side of a product vanishes.
pub const DEFAULT_C1: f64 = 1e-3;

/// Magnitude below which a `B` factor is treated as zero, relative to `max(1, A)`.
pub const ZERO_REL: f64 = 1e-12;

pub(crate) fn is_zero_factor(b: f64, a: f64) -> bool {
    b.abs() <= ZERO_REL * a.abs().max(1.0)
}
