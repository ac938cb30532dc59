use crate::error::{check_labels, Error, Result};
use crate::numerics::{RealMatrix, RngStream, Scalar};

/// Bias-free linear classifier `W ∈ R^{d×K}`; logits are `g · W`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMatrix<T> {
    w: RealMatrix<T>,
}

/// Batch-mean softmax cross-entropy and its gradients.
#[derive(Clone, Debug)]
pub struct CeLoss<T> {
    pub loss: T,
    pub grad_w: RealMatrix<T>,
    pub grad_features: RealMatrix<T>,
}

impl<T: Scalar> HeadMatrix<T> {
    pub fn new(w: RealMatrix<T>) -> Result<Self> {
        if w.cols() == 0 || w.rows() == 0 {
            return Err(Error::contract("head needs at least one feature and one class"));
        }
        w.ensure_finite("head")?;
        Ok(Self { w })
    }

    pub fn zeros(feature_dim: usize, classes: usize) -> Self {
        Self {
            w: RealMatrix::zeros(feature_dim, classes),
        }
    }

    /// Fan-in scaled uniform `U(-1/√d, 1/√d)` initialization.
    pub fn init(feature_dim: usize, classes: usize, rng: &mut RngStream) -> Self {
        let bound = 1.0 / (feature_dim as f64).sqrt();
        Self {
            w: RealMatrix::from_fn(feature_dim, classes, |_, _| T::lit((2.0 * rng.uniform() - 1.0) * bound)),
        }
    }

    pub fn weights(&self) -> &RealMatrix<T> {
        &self.w
    }

    pub(crate) fn weights_mut(&mut self) -> &mut RealMatrix<T> {
        &mut self.w
    }

    pub fn feature_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn classes(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, features: &RealMatrix<T>) -> Result<RealMatrix<T>> {
        if features.cols() != self.feature_dim() {
            return Err(Error::shape(
                "logits",
                format!("{} feature columns", self.feature_dim()),
                features.cols(),
            ));
        }
        features.matmul(&self.w)
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self, features: &RealMatrix<T>) -> Result<RealMatrix<T>> {
        let mut p = self.logits(features)?;
        for r in 0..p.rows() {
            softmax_in_place(p.row_mut(r));
        }
        Ok(p)
    }

    pub fn predict(&self, features: &RealMatrix<T>) -> Result<Vec<usize>> {
        let logits = self.logits(features)?;
        Ok(logits.row_iter().map(argmax).collect())
    }

    /// Fraction of rows whose arg-max logit equals the label.
    pub fn accuracy(&self, features: &RealMatrix<T>, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Batch-mean softmax cross-entropy of `features · W` against `labels`, with
/// batch-mean gradients for `W` and for the features.
pub fn ce_loss<T: Scalar>(head: &HeadMatrix<T>, features: &RealMatrix<T>, labels: &[usize]) -> Result<CeLoss<T>> {
    let b = features.rows();
    if b == 0 {
        return Err(Error::TooFewSamples {
            op: "ce_loss",
            needed: 1,
            got: 0,
        });
    }
    if labels.len() != b {
        return Err(Error::shape("ce_loss", format!("{b} labels"), labels.len()));
    }
    check_labels(labels, head.classes())?;
    let logits = head.logits(features)?;
    let inv_b = T::one() / T::of_usize(b);
    let mut loss = T::zero();
    // dL/dlogits = (softmax - onehot) / B
    let mut delta = logits;
    for (r, &y) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let log_z = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += log_z - row[y];
        for v in row.iter_mut() {
            *v = (*v - log_z).exp();
        }
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_b);
    }
    let grad_w = features.t_matmul(&delta)?;
    let grad_features = delta.matmul_t(&head.w)?;
    Ok(CeLoss {
        loss: loss * inv_b,
        grad_w,
        grad_features,
    })
}
