#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Dataset IO, experiment harness and command line for under-reporting
//! studies built on `underreport-core`.

pub mod bundle;
pub mod cli;
pub mod error;
pub mod harness;
pub mod schema;

pub use error::{Error, Result};
pub use underreport_core as core;
