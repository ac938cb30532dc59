//! Class-conditional Gaussian prior with adaptive means.
//!
//! Each class `k` owns a diagonal Gaussian `N(μ_k, σ²_k I)` from which
//! reference vectors are drawn. The variances are fixed at initialization.
//! The means follow the running class means `μ̄_k` of the training features
//! (`ℓ_intra`) while being pushed apart from each other (`ℓ_inter`).

use crate::error::{check_labels, Error, Result};
use crate::numerics::{dot, gaussian_sample, norm, RealMatrix, RngStream, Scalar};
use serde::{Deserialize, Serialize};

/// Guards the cosine denominator against zero vectors.
pub const NORM_EPS: f64 = 1e-12;
/// Lower bound applied to every initial class variance.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    /// `1 − u·v / ((‖u‖+ε)(‖v‖+ε))`
    #[default]
    Cosine,
    /// `‖u − v‖²`, offered for ablations.
    SquaredEuclidean,
}

impl Distance {
    pub fn eval<T: Scalar>(self, u: &[T], v: &[T]) -> T {
        match self {
            Distance::Cosine => cosine_distance(u, v),
            Distance::SquaredEuclidean => u.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum(),
        }
    }

    /// Adds `scale · ∂D(u, v)/∂u` into `out`.
    pub fn add_grad_first<T: Scalar>(self, u: &[T], v: &[T], scale: T, out: &mut [T]) {
        match self {
            Distance::Cosine => {
                let nu = norm(u);
                let a = nu + T::lit(NORM_EPS);
                let b = norm(v) + T::lit(NORM_EPS);
                let s = dot(u, v);
                let inv_ab = T::one() / (a * b);
                // d‖u‖/du = u/‖u‖, taken as zero at the origin
                let radial = if nu > T::zero() {
                    s * inv_ab / (a * nu)
                } else {
                    T::zero()
                };
                for ((o, &ui), &vi) in out.iter_mut().zip(u).zip(v) {
                    *o += scale * (radial * ui - vi * inv_ab);
                }
            }
            Distance::SquaredEuclidean => {
                let two = T::lit(2.0);
                for ((o, &ui), &vi) in out.iter_mut().zip(u).zip(v) {
                    *o += scale * two * (ui - vi);
                }
            }
        }
    }

    /// Adds `scale · ∂D(u, v)/∂v` into `out`.
    pub fn add_grad_second<T: Scalar>(self, u: &[T], v: &[T], scale: T, out: &mut [T]) {
        // both distances are symmetric in their arguments
        self.add_grad_first(v, u, scale, out);
    }
}

/// Cosine distance `1 − u·v / ((‖u‖+ε)(‖v‖+ε))` with `ε = 1e−12`.
pub fn cosine_distance<T: Scalar>(u: &[T], v: &[T]) -> T {
    assert_eq!(u.len(), v.len(), "cosine_distance: length mismatch");
    let eps = T::lit(NORM_EPS);
    T::one() - dot(u, v) / ((norm(u) + eps) * (norm(v) + eps))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorConfig<T> {
    /// EMA decay: weight kept on the previous running mean.
    pub alpha: T,
    /// Step size of the mean update.
    pub xi: T,
    pub distance: Distance,
    pub var_floor: T,
}

impl<T: Scalar> Default for PriorConfig<T> {
    fn default() -> Self {
        Self {
            alpha: T::lit(0.5),
            xi: T::lit(0.1),
            distance: Distance::Cosine,
            var_floor: T::lit(DEFAULT_VAR_FLOOR),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalPrior<T> {
    mu: RealMatrix<T>,
    sigma2: RealMatrix<T>,
    mu_bar: RealMatrix<T>,
    alpha: T,
    xi: T,
    distance: Distance,
}

impl<T: Scalar> ConditionalPrior<T> {
    /// Class-wise mean and population variance of pretrained features, with
    /// variances floored at `cfg.var_floor`. The running means start at `μ`.
    pub fn init_from_features(
        features: &RealMatrix<T>,
        labels: &[usize],
        classes: usize,
        cfg: PriorConfig<T>,
    ) -> Result<Self> {
        validate_hyper(cfg.alpha, cfg.xi)?;
        if !(cfg.var_floor >= T::zero()) {
            return Err(Error::contract("variance floor must be non-negative"));
        }
        if labels.len() != features.rows() {
            return Err(Error::shape(
                "init_from_features",
                format!("{} labels", features.rows()),
                labels.len(),
            ));
        }
        check_labels(labels, classes)?;
        let d = features.cols();
        let mut counts = vec![0usize; classes];
        let mut mu = RealMatrix::zeros(classes, d);
        for (row, &y) in features.row_iter().zip(labels) {
            counts[y] += 1;
            for (m, &v) in mu.row_mut(y).iter_mut().zip(row) {
                *m += v;
            }
        }
        let missing: Vec<usize> = (0..classes).filter(|&k| counts[k] == 0).collect();
        if !missing.is_empty() {
            return Err(Error::MissingClasses(missing));
        }
        for (k, &n) in counts.iter().enumerate() {
            let n = T::of_usize(n);
            mu.row_mut(k).iter_mut().for_each(|m| *m /= n);
        }
        let mut sigma2: RealMatrix<T> = RealMatrix::zeros(classes, d);
        for (row, &y) in features.row_iter().zip(labels) {
            let mean = mu.row(y).to_vec();
            for ((s, &v), m) in sigma2.row_mut(y).iter_mut().zip(row).zip(mean) {
                *s += (v - m) * (v - m);
            }
        }
        for (k, &n) in counts.iter().enumerate() {
            let n = T::of_usize(n);
            sigma2
                .row_mut(k)
                .iter_mut()
                .for_each(|s| *s = (*s / n).max(cfg.var_floor));
        }
        Ok(Self {
            mu_bar: mu.clone(),
            mu,
            sigma2,
            alpha: cfg.alpha,
            xi: cfg.xi,
            distance: cfg.distance,
        })
    }

    /// Assembles a prior from explicit tables.
    pub fn from_parts(
        mu: RealMatrix<T>,
        sigma2: RealMatrix<T>,
        mu_bar: RealMatrix<T>,
        alpha: T,
        xi: T,
        distance: Distance,
    ) -> Result<Self> {
        validate_hyper(alpha, xi)?;
        if !mu.same_shape(&sigma2) || !mu.same_shape(&mu_bar) {
            return Err(Error::shape(
                "ConditionalPrior::from_parts",
                format!("three {}x{} tables", mu.rows(), mu.cols()),
                format!(
                    "sigma2 {}x{}, mu_bar {}x{}",
                    sigma2.rows(),
                    sigma2.cols(),
                    mu_bar.rows(),
                    mu_bar.cols()
                ),
            ));
        }
        if mu.rows() == 0 {
            return Err(Error::contract("prior needs at least one class"));
        }
        for (name, m) in [("mu", &mu), ("sigma2", &sigma2), ("mu_bar", &mu_bar)] {
            m.ensure_finite(name)?;
        }
        if sigma2.as_slice().iter().any(|&v| v < T::zero()) {
            return Err(Error::contract("negative prior variance"));
        }
        Ok(Self {
            mu,
            sigma2,
            mu_bar,
            alpha,
            xi,
            distance,
        })
    }

    pub fn classes(&self) -> usize {
        self.mu.rows()
    }

    pub fn dim(&self) -> usize {
        self.mu.cols()
    }

    pub fn mu(&self) -> &RealMatrix<T> {
        &self.mu
    }

    pub fn sigma2(&self) -> &RealMatrix<T> {
        &self.sigma2
    }

    pub fn mu_bar(&self) -> &RealMatrix<T> {
        &self.mu_bar
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn xi(&self) -> T {
        self.xi
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    /// Row `i` is drawn from `N(μ_{y_i}, σ²_{y_i} I)`.
    pub fn sample_reference(&self, labels: &[usize], rng: &mut RngStream) -> Result<RealMatrix<T>> {
        check_labels(labels, self.classes())?;
        let mu = self.mu.select_rows(labels);
        let sigma2 = self.sigma2.select_rows(labels);
        gaussian_sample(rng, &mu, &sigma2)
    }

    /// `μ̄_k ← α μ̄_k + (1 − α) μ̂_k` for each class present in the batch,
    /// where `μ̂_k` is the batch mean of that class. Absent classes keep their
    /// running mean.
    pub fn ema_update(&mut self, features: &RealMatrix<T>, labels: &[usize]) -> Result<()> {
        features.expect_shape("ema_update", labels.len(), self.dim())?;
        check_labels(labels, self.classes())?;
        let mut sums: RealMatrix<T> = RealMatrix::zeros(self.classes(), self.dim());
        let mut counts = vec![0usize; self.classes()];
        for (row, &y) in features.row_iter().zip(labels) {
            counts[y] += 1;
            for (s, &v) in sums.row_mut(y).iter_mut().zip(row) {
                *s += v;
            }
        }
        let keep = self.alpha;
        let take = T::one() - self.alpha;
        for (k, &n) in counts.iter().enumerate() {
            if n == 0 {
                continue;
            }
            let n = T::of_usize(n);
            for (bar, &s) in self.mu_bar.row_mut(k).iter_mut().zip(sums.row(k)) {
                *bar = keep * *bar + take * (s / n);
            }
        }
        Ok(())
    }

    /// `ℓ_intra = (1/K) Σ_k D(μ_k, μ̄_k)`.
    pub fn intra_loss(&self) -> T {
        let k = self.classes();
        let total: T = (0..k)
            .map(|c| self.distance.eval(self.mu.row(c), self.mu_bar.row(c)))
            .sum();
        total / T::of_usize(k)
    }

    /// `ℓ_inter = −(1/(K(K−1))) Σ_k Σ_{l≠k} D(μ_k, μ_l)`, zero when `K = 1`.
    pub fn inter_loss(&self) -> T {
        let k = self.classes();
        if k < 2 {
            return T::zero();
        }
        let mut total = T::zero();
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    total += self.distance.eval(self.mu.row(a), self.mu.row(b));
                }
            }
        }
        -total / T::of_usize(k * (k - 1))
    }

    /// `L_ada = ℓ_intra + ℓ_inter`.
    pub fn ada_loss(&self) -> T {
        self.intra_loss() + self.inter_loss()
    }

    /// Analytic `∇_μ L_ada`, a `K × d` table.
    pub fn ada_grad(&self) -> RealMatrix<T> {
        let k = self.classes();
        let d = self.dim();
        let mut grad = RealMatrix::zeros(k, d);
        let intra_scale = T::one() / T::of_usize(k);
        for c in 0..k {
            self.distance
                .add_grad_first(self.mu.row(c), self.mu_bar.row(c), intra_scale, grad.row_mut(c));
        }
        if k >= 2 {
            let inter_scale = -T::one() / T::of_usize(k * (k - 1));
            let mut buf = vec![T::zero(); d];
            for a in 0..k {
                for b in 0..k {
                    if a == b {
                        continue;
                    }
                    // pair (a, b) depends on μ_a through its first argument and
                    // on μ_b through its second
                    self.distance
                        .add_grad_first(self.mu.row(a), self.mu.row(b), inter_scale, grad.row_mut(a));
                    buf.iter_mut().for_each(|v| *v = T::zero());
                    self.distance
                        .add_grad_second(self.mu.row(a), self.mu.row(b), inter_scale, &mut buf);
                    for (g, &v) in grad.row_mut(b).iter_mut().zip(&buf) {
                        *g += v;
                    }
                }
            }
        }
        grad
    }

    /// One plain gradient step `μ ← μ − ξ ∇_μ L_ada`. `μ̄` and `σ²` are untouched.
    pub fn adaptive_step(&mut self) -> Result<()> {
        let grad = self.ada_grad();
        grad.ensure_finite("prior mean gradient")?;
        let xi = self.xi;
        let mut next = self.mu.clone();
        for (m, &g) in next.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *m -= xi * g;
        }
        next.ensure_finite("prior means")?;
        self.mu = next;
        Ok(())
    }

    /// Overwrites the means, keeping every other table. Used by tests and by
    /// callers that evaluate `L_ada` at trial points.
    pub fn with_mu(&self, mu: RealMatrix<T>) -> Result<Self> {
        Self::from_parts(
            mu,
            self.sigma2.clone(),
            self.mu_bar.clone(),
            self.alpha,
            self.xi,
            self.distance,
        )
    }
}

fn validate_hyper<T: Scalar>(alpha: T, xi: T) -> Result<()> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::contract(format!(
            "EMA decay alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if !(xi >= T::zero()) || !xi.is_finite() {
        return Err(Error::contract(format!(
            "prior step size xi must be non-negative, got {xi}"
        )));
    }
    Ok(())
}
