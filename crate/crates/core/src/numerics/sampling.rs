use super::{RealMatrix, RngStream, Scalar};
use crate::error::{Error, Result};

/// Element-wise `mu + sqrt(sigma2) · n` with standard normal `n` drawn from
/// `rng` in row-major order.
pub fn gaussian_sample<T: Scalar>(
    rng: &mut RngStream,
    mu: &RealMatrix<T>,
    sigma2: &RealMatrix<T>,
) -> Result<RealMatrix<T>> {
    if !mu.same_shape(sigma2) {
        return Err(Error::shape(
            "gaussian_sample",
            format!("sigma2 {}x{}", mu.rows(), mu.cols()),
            format!("{}x{}", sigma2.rows(), sigma2.cols()),
        ));
    }
    if sigma2.as_slice().iter().any(|&v| v < T::zero()) {
        return Err(Error::contract("gaussian_sample: negative variance"));
    }
    let data = mu
        .as_slice()
        .iter()
        .zip(sigma2.as_slice())
        .map(|(&m, &v)| m + v.sqrt() * T::lit(rng.standard_normal()))
        .collect();
    RealMatrix::new(mu.rows(), mu.cols(), data)
}

/// `rows × cols` i.i.d. draws in `[0, 1)`.
pub fn uniform_sample<T: Scalar>(rng: &mut RngStream, rows: usize, cols: usize) -> Result<RealMatrix<T>> {
    if rows == 0 || cols == 0 {
        return Err(Error::contract(format!(
            "uniform_sample: shape {rows}x{cols} must be at least 1x1"
        )));
    }
    let data = (0..rows * cols).map(|_| T::lit(rng.uniform())).collect();
    Ok(RealMatrix::from_vec_unchecked(rows, cols, data))
}

/// `rows × cols` standard normal draws.
pub fn standard_normal_sample<T: Scalar>(rng: &mut RngStream, rows: usize, cols: usize) -> RealMatrix<T> {
    let data = (0..rows * cols).map(|_| T::lit(rng.standard_normal())).collect();
    RealMatrix::from_vec_unchecked(rows, cols, data)
}
