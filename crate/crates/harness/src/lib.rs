//! Experiment harness: synthetic and CSV data, pretraining, regularized
//! fine-tuning, sweeps and their on-disk outputs.

// Negated comparisons such as `!(x > 0.0)` are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod run;
pub mod sweep;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
