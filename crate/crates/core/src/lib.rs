//! Estimating the discrete-time algebraic Riccati equation of an LQR
//! controller from observed closed-loop data, for inverse optimal control.
//!
//! The main entry points are [`estimator::build_theta_hat`], which turns a
//! [`data::Dataset`] into a linear system in the unknown `(P, Q, R)`, and
//! [`subspace::null_space`] / [`subspace::distance`], which extract and
//! compare its solution space.

pub mod are_builder;
pub mod cli;
pub mod data;
pub mod datagen;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod io;
pub mod lqr;
pub mod subspace;
pub mod sysid;

pub use error::{Error, Result};
pub use io::fmt_f64;
