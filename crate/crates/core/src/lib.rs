//! Periodic homogenization toolkit for curl-curl and elliptic problems.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod bvp;
pub mod cell;
pub mod coeff;
pub mod corrector;
pub mod error;
pub mod mesh;
pub mod study;

pub use error::{Error, Result, SolveError};
