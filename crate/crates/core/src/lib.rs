//! Multiscale Hébraud–Lequeux model of a soft glassy suspension sheared in a
//! planar Couette cell.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coupler;
pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod macro_flow;
pub mod maxwell;
pub mod meso;
pub mod model;
pub mod output;
pub mod tridiag;

pub use error::{Error, Result};
