//! Desk-scale experiment harness: a synthetic homophone task, training
//! loops for every model family, evaluation, benchmarking and oracle
//! verification.

pub mod attention;
pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod task;
pub mod trace;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
