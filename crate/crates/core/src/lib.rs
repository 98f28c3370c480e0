#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]
//! Estimation, mitigation and fairness auditing for linear models trained on
//! under-reported features.

extern crate alloc;

pub mod classify;
pub mod corrupt;
pub mod datamodel;
pub mod error;
pub mod estimate;
pub mod fairness;
pub mod ingest;
pub mod matrix;
pub mod mitigate;
pub mod rng;
pub mod simulate;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
