// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
mod blob;
pub mod classifier;
pub mod cli;
pub mod config;
pub mod dataspace;
pub mod eval;
pub mod losses;
pub mod nets;
pub mod normexp;
pub mod optim;
pub mod prior;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
