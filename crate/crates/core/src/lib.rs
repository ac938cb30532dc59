//! Adaptive random feature regularization (AdaRand) for fine-tuning small
//! classifiers, together with its baseline regularizers and the feature
//! diagnostics used to study them.
//!
//! All math is generic over a [`Scalar`] (`f32` or `f64`). The harness and
//! checkpoints work in 64-bit precision through the aliases below.

// Negated comparisons such as `!(x > 0.0)` are how NaN gets rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod numerics;
pub mod priors;
pub mod regularizers;

pub use error::{Error, Result};
pub use numerics::{RealMatrix, RngStream, Scalar, StreamId};

/// 64-bit dense matrix.
pub type Matrix = numerics::RealMatrix<f64>;
/// 64-bit feature extractor parameters.
pub type Extractor = model::ExtractorParams<f64>;
/// 64-bit linear head.
pub type Head = model::HeadMatrix<f64>;
/// 64-bit trainable model with optimizer state.
pub type Model = model::ModelState<f64>;
/// 64-bit class-conditional Gaussian prior.
pub type Prior = priors::ConditionalPrior<f64>;
/// 64-bit regularizer state.
pub type Regularizer = regularizers::RegState<f64>;
/// 64-bit diagnostics report.
pub type Report = diagnostics::DiagnosticsReport<f64>;
