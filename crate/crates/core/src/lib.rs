//! Consensus complementarity control (C3) for linear complementarity systems.
//!
//! The crate provides an LCP solver and LCS simulator, a convex QP solver,
//! projections onto complementarity sets, the ADMM-based C3 controller, a
//! full mixed-integer MPC baseline, benchmark models and an experiment harness.

pub mod controller;
pub mod error;
pub mod harness;
pub mod lcs;
pub mod miqp;
pub mod models;
pub(crate) mod linalg;
pub mod problem;
pub mod projection;
pub mod qp;
pub(crate) mod bnb;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;

pub use error::{Error, Result};
