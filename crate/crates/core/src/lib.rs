//! Open-set recognition with a class-conditioned auto-encoder and an
//! extreme-value threshold on its reconstruction errors.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod evt;
pub mod infer;
pub mod nets;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
