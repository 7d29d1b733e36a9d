//! Multirate co-simulation of partitioned ODE and index-1 DAE systems.

// `!(a < b)` is used on purpose so that NaN fails every check.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod config;
pub mod contraction;
pub mod coupling;
pub mod csv_io;
pub mod dae;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod ode;
pub mod problem;
pub mod problems;
pub mod steppers;

pub use error::{Error, Result};
