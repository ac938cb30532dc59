use super::{RealMatrix, Scalar};
use crate::error::{Error, Result};

/// Central-difference gradient of `loss` at `at`:
/// entry `(i, j)` is `(loss(at + h·e_ij) − loss(at − h·e_ij)) / 2h`.
pub fn finite_diff_grad<T: Scalar>(
    mut loss: impl FnMut(&RealMatrix<T>) -> T,
    at: &RealMatrix<T>,
    h: T,
) -> Result<RealMatrix<T>> {
    if !(h > T::zero()) {
        return Err(Error::contract("finite_diff_grad: step must be positive"));
    }
    let mut probe = at.clone();
    let mut grad = RealMatrix::zeros(at.rows(), at.cols());
    let two_h = h + h;
    for idx in 0..at.len() {
        let orig = at.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = loss(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let minus = loss(&probe);
        probe.as_mut_slice()[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("finite_diff_grad: loss at entry {idx}")));
        }
        grad.as_mut_slice()[idx] = (plus - minus) / two_h;
    }
    Ok(grad)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error<T: Scalar>(a: &[T], b: &[T], floor: T) -> T {
    assert_eq!(a.len(), b.len(), "relative_error: length mismatch");
    let diff: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    let na: T = a.iter().map(|&x| x * x).sum();
    let nb: T = b.iter().map(|&x| x * x).sum();
    diff.sqrt() / na.sqrt().max(nb.sqrt()).max(floor)
}
