//! Point-cloud serialization strategies feeding a selective state-space
//! (S6/Mamba) sequence mixer, with the tooling to compare them.

// `!(x >= 0.0)` is the NaN-rejecting form used by validators.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod oracle;
pub mod perturb;
pub mod serialize;
pub mod ssm;

pub use error::{Error, Result};
