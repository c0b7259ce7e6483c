//! Matrix-free optimization for sums of PDE-constrained misfits.
//!
//! The crate bundles a small 2D acoustic full-waveform-inversion testbed
//! (finite-difference propagator with discrete adjoint and Born solves,
//! receiver weighting, band-limited noise) together with four optimizers
//! that are compared against a budget of PDE solves:
//!
//! * gradient-only Gauss-Newton ([`gogn`]), whose Jacobian is assembled from
//!   per-source gradients and therefore costs no extra solves,
//! * preconditioned nonlinear CG, smoothed L-BFGS and Gauss-Newton-CG
//!   ([`optim`]).
//!
//! Every forward, adjoint and Born solve is counted by a [`SolveLedger`].

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gogn;
pub mod harness;
pub mod ledger;
pub mod linalg;
pub mod optim;
pub mod problem;
pub mod regularizer;
pub mod wave;

pub use error::{Error, Result};
pub use ledger::{SolveCounts, SolveLedger};
