//! Backstepping and delay-compensating control of a linear SDE actuated
//! through a 2×2 system of linear transport PDEs.

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod brownian;
pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod linalg;
pub mod params;
pub mod profile;
pub mod quad;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
