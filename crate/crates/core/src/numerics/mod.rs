//! Random streams, dense matrices and the finite-difference gradient oracle.

mod gradcheck;
mod matrix;
mod rng;
mod sampling;
mod scalar;

pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{dot, norm, RealMatrix};
pub use rng::{RngStream, StreamId};
pub use sampling::{gaussian_sample, standard_normal_sample, uniform_sample};
pub use scalar::Scalar;
