//! Learning-augmented path-tracking MPC.
//!
//! A nominal error-state bicycle model is corrected by a residual model made
//! of random-forest routing on past error states and per-leaf linear
//! regressions on steering increments. Because the correction stays linear in
//! the increments, every control step remains a convex QP.

pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod error;
pub mod harness;
pub mod path;
pub mod prediction;
pub mod qp;
pub mod residual;

pub use error::{Error, Result};
