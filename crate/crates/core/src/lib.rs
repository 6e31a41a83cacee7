// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyzer;
pub mod baselines;
pub mod em;
pub mod error;
pub mod evaluation;
pub mod filter;
pub mod model;
pub mod select;
pub mod selftest;
pub mod sim;

pub use error::{Error, Result};
