//! U-statistic based empirical likelihood tests.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod error;
pub mod crossover;
pub mod el;
pub mod kernels;
pub mod linalg;
pub mod numeric;
pub mod procedures;
pub mod reference;
pub mod report;
pub mod sim;
pub mod variance;

pub use error::{Error, Result};
