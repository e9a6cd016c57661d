//! Numerical laboratory for multivariate perpetuity sequences
//! `V_n = Q_1 + M_1 Q_2 + ... + (M_1 ... M_{n-1}) Q_n` driven by i.i.d. pairs of
//! nonnegative matrices and vectors.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`]: nonnegative vectors/matrices, laws of `(M, Q)` and condition checks.
//! * [`spectral`]: transfer operators on the positive simplex, `κ(s)`, `Λ = log κ`
//!   and its derivatives, the tail index `α`, drift `ρ` and variance `σ_α`.
//! * [`simulate`]: perpetuity paths and first-passage times, plain and exponentially tilted.
//! * [`oracle`]: exact path enumeration for finite-support laws.
//! * [`asymptotics`]: rate function, Cramér series and the limit-theorem predictions.
//! * [`verify`]: statistical comparison of predictions against simulated or exact data.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod simulate;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{DirectionPoint, MatrixQLaw, NonnegMatrix, NonnegVector};

