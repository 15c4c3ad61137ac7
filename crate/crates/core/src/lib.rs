#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod data;
pub mod error;
pub mod features;
pub mod gof;
pub mod metrics;
pub mod numerics;
pub mod regression;
pub mod shrinkage;
pub mod synth;
pub mod variance;

pub use error::{Error, Result};
