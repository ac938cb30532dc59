//! Feature statistics: squared norms, the pairwise differential-entropy
//! estimator, the mutual-information split `I(g; y) = H(g) − H(g | y)`, the
//! cross-entropy gradient-norm identity and a two-component PCA.

use crate::error::{check_labels, Error, Result};
use crate::model::{ce_loss, HeadMatrix};
use crate::numerics::{dot, norm, RealMatrix, RngStream, Scalar, StreamId};
use rayon::prelude::*;
use std::io::{self, Write};

pub const DEFAULT_ENTROPY_CAP: usize = 512;
/// Squared distances are floored here before taking the log.
pub const DIST_SQ_FLOOR: f64 = 1e-12;
pub const PCA_TOL: f64 = 1e-10;
pub const PCA_MAX_ITER: usize = 1000;

/// Pairwise estimator `Ĥ = d/(N(N−1)) Σ_{i≠j} log ‖x_i − x_j‖²`.
///
/// Sets larger than `cap` rows are replaced by a uniform subsample of `cap`
/// rows drawn from the `data` stream of `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntropyEstimator {
    pub cap: usize,
    pub seed: u64,
}

impl Default for EntropyEstimator {
    fn default() -> Self {
        Self {
            cap: DEFAULT_ENTROPY_CAP,
            seed: 0,
        }
    }
}

impl EntropyEstimator {
    pub fn estimate<T: Scalar>(&self, features: &RealMatrix<T>) -> Result<T> {
        let n = features.rows();
        if n < 2 {
            return Err(Error::TooFewSamples {
                op: "entropy_estimate",
                needed: 2,
                got: n,
            });
        }
        if n > self.cap.max(2) {
            let mut idx = RngStream::new(self.seed, StreamId::Data).sample_indices(n, self.cap.max(2));
            idx.sort_unstable();
            return pairwise_entropy(&features.select_rows(&idx));
        }
        pairwise_entropy(features)
    }

    /// `Σ_k w_k Ĥ(class k)` over classes with at least two samples, with
    /// `w_k = N_k / Σ N_k` taken over those classes.
    pub fn conditional<T: Scalar>(&self, features: &RealMatrix<T>, labels: &[usize], classes: usize) -> Result<T> {
        if labels.len() != features.rows() {
            return Err(Error::shape(
                "conditional_entropy",
                format!("{} labels", features.rows()),
                labels.len(),
            ));
        }
        check_labels(labels, classes)?;
        let mut members = vec![Vec::new(); classes];
        for (i, &y) in labels.iter().enumerate() {
            members[y].push(i);
        }
        let mut weighted = T::zero();
        let mut total = 0usize;
        for rows in members.iter().filter(|m| m.len() >= 2) {
            weighted += T::of_usize(rows.len()) * self.estimate(&features.select_rows(rows))?;
            total += rows.len();
        }
        if total == 0 {
            return Err(Error::TooFewSamples {
                op: "conditional_entropy (largest class)",
                needed: 2,
                got: members.iter().map(Vec::len).max().unwrap_or(0),
            });
        }
        Ok(weighted / T::of_usize(total))
    }
}

/// Ordered-pair sum, one partial sum per row, accumulated in row order so the
/// result does not depend on the thread count.
fn pairwise_entropy<T: Scalar>(features: &RealMatrix<T>) -> Result<T> {
    let n = features.rows();
    let d = features.cols();
    let floor = T::lit(DIST_SQ_FLOOR);
    let partial: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = features.row(i);
            let mut s = T::zero();
            for j in (0..n).filter(|&j| j != i) {
                let d2: T = xi.iter().zip(features.row(j)).map(|(&a, &b)| (a - b) * (a - b)).sum();
                s += d2.max(floor).ln();
            }
            s
        })
        .collect();
    let total: T = partial.into_iter().fold(T::zero(), |acc, v| acc + v);
    Ok(T::of_usize(d) * total / T::of_usize(n * (n - 1)))
}

/// [`EntropyEstimator::estimate`] with the default cap and seed.
pub fn entropy_estimate<T: Scalar>(features: &RealMatrix<T>) -> Result<T> {
    EntropyEstimator::default().estimate(features)
}

/// [`EntropyEstimator::conditional`] with the default cap and seed.
pub fn conditional_entropy<T: Scalar>(features: &RealMatrix<T>, labels: &[usize], classes: usize) -> Result<T> {
    EntropyEstimator::default().conditional(features, labels, classes)
}

/// Batch averages of `‖∇_W ℓ_CE‖²`: `direct` from the per-sample analytic
/// gradient, `identity` from `Σ_k (p_k − δ_yk)² ‖g‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CeGradNorm<T> {
    pub direct: T,
    pub identity: T,
}

pub fn ce_grad_norm<T: Scalar>(
    head: &HeadMatrix<T>,
    features: &RealMatrix<T>,
    labels: &[usize],
) -> Result<CeGradNorm<T>> {
    let b = features.rows();
    if b == 0 {
        return Err(Error::TooFewSamples {
            op: "ce_grad_norm",
            needed: 1,
            got: 0,
        });
    }
    let probs = head.probabilities(features)?;
    let mut direct = T::zero();
    let mut identity = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        let sample = features.select_rows(&[i]);
        direct += ce_loss(head, &sample, &[y])?.grad_w.frobenius_sq();
        let residual: T = probs
            .row(i)
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let r = if k == y { p - T::one() } else { p };
                r * r
            })
            .sum();
        let g = features.row(i);
        identity += residual * dot(g, g);
    }
    let n = T::of_usize(b);
    Ok(CeGradNorm {
        direct: direct / n,
        identity: identity / n,
    })
}

/// Per-epoch feature statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiagnosticsReport<T> {
    /// Mean of `‖g(x)‖²`.
    pub mean_feature_norm: T,
    pub entropy: T,
    pub cond_entropy: T,
    /// Always `entropy − cond_entropy`.
    pub mutual_info: T,
    /// Mean `‖∇_W ℓ_CE‖²`; needs a head.
    pub mean_ce_grad_norm: Option<T>,
}

impl<T: Scalar> DiagnosticsReport<T> {
    pub fn compute(
        features: &RealMatrix<T>,
        labels: &[usize],
        classes: usize,
        head: Option<&HeadMatrix<T>>,
        estimator: &EntropyEstimator,
    ) -> Result<Self> {
        let norms = features.row_norms_sq();
        let mean_feature_norm = norms.iter().copied().sum::<T>() / T::of_usize(norms.len().max(1));
        let entropy = estimator.estimate(features)?;
        let cond_entropy = estimator.conditional(features, labels, classes)?;
        let mean_ce_grad_norm = match head {
            Some(h) => Some(ce_grad_norm(h, features, labels)?.direct),
            None => None,
        };
        Ok(Self {
            mean_feature_norm,
            entropy,
            cond_entropy,
            mutual_info: entropy - cond_entropy,
            mean_ce_grad_norm,
        })
    }
}

/// Two leading principal components of a feature set.
#[derive(Clone, Debug)]
pub struct Pca2<T> {
    /// Centered data projected on the components, `N × 2`.
    pub projection: RealMatrix<T>,
    /// Variance along each component.
    pub explained: [T; 2],
    pub components: [Vec<T>; 2],
}

/// PCA by power iteration with deflation on the population covariance.
/// Each component's first non-negligible entry is made positive.
pub fn pca2<T: Scalar>(features: &RealMatrix<T>) -> Result<Pca2<T>> {
    let (n, d) = features.shape();
    if n < 3 {
        return Err(Error::TooFewSamples {
            op: "pca2",
            needed: 3,
            got: n,
        });
    }
    if d < 2 {
        return Err(Error::contract(format!(
            "pca2 needs at least 2 feature dimensions, got {d}"
        )));
    }
    let means = features.column_means();
    let mut centered = features.clone();
    for r in 0..n {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    let mut cov = centered.t_matmul(&centered)?.scale(T::one() / T::of_usize(n));
    let scale = (0..d).map(|i| cov[(i, i)]).sum::<T>().max(T::lit(1e-300));
    let first = power_iteration(&cov, scale, None)?;
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] -= first.0 * first.1[i] * first.1[j];
        }
    }
    let second = power_iteration(&cov, scale, Some(&first.1))?;
    let basis = RealMatrix::from_fn(d, 2, |i, c| if c == 0 { first.1[i] } else { second.1[i] });
    Ok(Pca2 {
        projection: centered.matmul(&basis)?,
        explained: [first.0, second.0.max(T::zero())],
        components: [first.1, second.1],
    })
}

/// Power iteration for the top eigenpair of `cov` restricted to the complement
/// of `orthogonal_to`. Converged when the residual `‖Cv − λv‖` or the change
/// of the Rayleigh quotient between iterations falls below `tol · trace`; the
/// latter covers (near-)degenerate leading eigenvalues, where any vector of
/// the leading subspace is an acceptable component.
fn power_iteration<T: Scalar>(cov: &RealMatrix<T>, scale: T, orthogonal_to: Option<&[T]>) -> Result<(T, Vec<T>)> {
    let d = cov.rows();
    let tol = T::lit(PCA_TOL) * scale;
    // iterate with C^8 (same eigenvectors, eigengap raised to the 8th power);
    // convergence is still judged on C itself
    let mut accel = cov.scale(T::one() / scale);
    for _ in 0..3 {
        accel = accel.matmul(&accel)?;
        let s = (0..d).map(|i| accel[(i, i)]).sum::<T>();
        if s > T::zero() {
            accel = accel.scale(T::one() / s);
        }
    }
    let project_out = |v: &mut [T]| {
        if let Some(u) = orthogonal_to {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, &ui)| *x -= c * ui);
        }
    };
    let normalize = |v: &mut [T]| {
        let nv = norm(v);
        v.iter_mut().for_each(|x| *x /= nv);
    };
    // deterministic start with distinct entries
    let mut v: Vec<T> = (0..d).map(|i| T::one() + T::of_usize(i) / T::of_usize(d)).collect();
    project_out(&mut v);
    normalize(&mut v);
    let mut restarted = false;
    let mut previous: Option<T> = None;
    for _ in 0..PCA_MAX_ITER {
        let mut w = mat_vec(cov, &v);
        project_out(&mut w);
        let lambda = dot(&v, &w);
        let residual = norm(&w.iter().zip(&v).map(|(&a, &b)| a - lambda * b).collect::<Vec<_>>());
        if norm(&w) <= tol {
            // the start may lie in the null space while the spectrum is not
            // zero: restart once from the largest allowed column
            let best = (0..d)
                .map(|j| {
                    let mut c: Vec<T> = (0..d).map(|i| cov[(i, j)]).collect();
                    project_out(&mut c);
                    c
                })
                .max_by(|a, b| norm(a).partial_cmp(&norm(b)).unwrap_or(std::cmp::Ordering::Equal));
            match best {
                Some(c) if !restarted && norm(&c) > tol => {
                    restarted = true;
                    v = c;
                    normalize(&mut v);
                    previous = None;
                    continue;
                }
                _ => return Ok((T::zero(), canonical_sign(v))),
            }
        }
        let stalled = previous.is_some_and(|p| (lambda - p).abs() <= tol);
        if residual <= tol || stalled {
            return Ok((lambda, canonical_sign(v)));
        }
        previous = Some(lambda);
        let mut w = mat_vec(&accel, &v);
        project_out(&mut w);
        if norm(&w) == T::zero() {
            w = mat_vec(cov, &v);
            project_out(&mut w);
        }
        v = w;
        normalize(&mut v);
    }
    Err(Error::NoConvergence {
        iterations: PCA_MAX_ITER,
    })
}

fn mat_vec<T: Scalar>(m: &RealMatrix<T>, v: &[T]) -> Vec<T> {
    m.row_iter().map(|r| dot(r, v)).collect()
}

fn canonical_sign<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let thresh = v.iter().fold(T::zero(), |m, x| m.max(x.abs())) * T::lit(1e-9);
    if let Some(&lead) = v.iter().find(|x| x.abs() > thresh) {
        if lead < T::zero() {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

/// Between-class over within-class scatter of a projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterRatio<T> {
    pub value: T,
    /// Set when the within-class scatter is zero; `value` is then `T::max_value()`.
    pub saturated: bool,
}

/// `Σ_k N_k ‖m_k − m‖² / Σ_i ‖p_i − m_{y_i}‖²` over the classes present.
pub fn scatter_ratio<T: Scalar>(projection: &RealMatrix<T>, labels: &[usize]) -> Result<ScatterRatio<T>> {
    let n = projection.rows();
    if labels.len() != n {
        return Err(Error::shape("scatter_ratio", format!("{n} labels"), labels.len()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let dim = projection.cols();
    let mut sums = RealMatrix::zeros(classes, dim);
    let mut counts = vec![0usize; classes];
    for (row, &y) in projection.row_iter().zip(labels) {
        counts[y] += 1;
        for (s, &v) in sums.row_mut(y).iter_mut().zip(row) {
            *s += v;
        }
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::contract("scatter_ratio needs at least two classes"));
    }
    let grand = projection.column_means();
    let mut between = T::zero();
    for k in (0..classes).filter(|&k| counts[k] > 0) {
        let nk = T::of_usize(counts[k]);
        sums.row_mut(k).iter_mut().for_each(|s| *s /= nk);
        between += nk
            * sums
                .row(k)
                .iter()
                .zip(&grand)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<T>();
    }
    let within: T = projection
        .row_iter()
        .zip(labels)
        .map(|(row, &y)| row.iter().zip(sums.row(y)).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>())
        .sum();
    if within <= T::zero() && between <= T::zero() {
        // every point coincides: nothing is separated
        return Ok(ScatterRatio {
            value: T::zero(),
            saturated: false,
        });
    }
    if within <= T::zero() {
        return Ok(ScatterRatio {
            value: T::max_value(),
            saturated: true,
        });
    }
    Ok(ScatterRatio {
        value: between / within,
        saturated: false,
    })
}

/// Writes `pc1,pc2,label` rows.
pub fn write_pca_csv<T: Scalar, W: Write>(mut out: W, projection: &RealMatrix<T>, labels: &[usize]) -> io::Result<()> {
    writeln!(out, "pc1,pc2,label")?;
    for (row, y) in projection.row_iter().zip(labels) {
        writeln!(out, "{},{},{}", row[0].as_f64(), row[1].as_f64(), y)?;
    }
    Ok(())
}
