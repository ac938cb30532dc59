use super::{DenseLayer, ExtractorParams, HeadMatrix};
use crate::error::{Error, Result};
use crate::numerics::{RealMatrix, Scalar};

/// Gradients congruent with a [`ModelState`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    pub extractor: Vec<DenseLayer<T>>,
    pub head: RealMatrix<T>,
}

impl<T: Scalar> ModelGrads<T> {
    pub fn zeros_like(state: &ModelState<T>) -> Self {
        Self {
            extractor: state.extractor.zeros_like(),
            head: RealMatrix::zeros(state.head.feature_dim(), state.head.classes()),
        }
    }

    /// In-place `self += c · other`.
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        if self.extractor.len() != other.extractor.len() {
            return Err(Error::shape(
                "ModelGrads::axpy",
                self.extractor.len(),
                other.extractor.len(),
            ));
        }
        for (a, b) in self.extractor.iter_mut().zip(&other.extractor) {
            a.weight.axpy(c, &b.weight)?;
            if a.bias.len() != b.bias.len() {
                return Err(Error::shape("ModelGrads::axpy", a.bias.len(), b.bias.len()));
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += c * y;
            }
        }
        self.head.axpy(c, &other.head)
    }
}

/// Optimizer hyperparameters of the joint parameter step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig<T> {
    pub lr: T,
    pub momentum: T,
    pub nesterov: bool,
    /// Coupled L2 decay: `wd·θ` is added to the gradient before the momentum update.
    pub weight_decay: T,
}

impl<T: Scalar> Default for SgdConfig<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(0.01),
            momentum: T::lit(0.9),
            nesterov: true,
            weight_decay: T::zero(),
        }
    }
}

/// Trainable classifier `f = Wᵀ g_φ` with momentum buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    pub extractor: ExtractorParams<T>,
    pub head: HeadMatrix<T>,
    velocity: ModelGrads<T>,
    pub sgd: SgdConfig<T>,
}

impl<T: Scalar> ModelState<T> {
    pub fn new(extractor: ExtractorParams<T>, head: HeadMatrix<T>, sgd: SgdConfig<T>) -> Result<Self> {
        if head.feature_dim() != extractor.feature_dim() {
            return Err(Error::shape(
                "ModelState::new",
                format!("head with {} feature rows", extractor.feature_dim()),
                head.feature_dim(),
            ));
        }
        let velocity = ModelGrads {
            extractor: extractor.zeros_like(),
            head: RealMatrix::zeros(head.feature_dim(), head.classes()),
        };
        Ok(Self {
            extractor,
            head,
            velocity,
            sgd,
        })
    }

    pub fn velocity(&self) -> &ModelGrads<T> {
        &self.velocity
    }

    pub fn set_lr(&mut self, lr: T) {
        self.sgd.lr = lr;
    }

    fn check_grads(&self, grads: &ModelGrads<T>) -> Result<()> {
        if grads.extractor.len() != self.extractor.layers().len() {
            return Err(Error::shape(
                "sgd_step",
                format!("{} layer gradients", self.extractor.layers().len()),
                grads.extractor.len(),
            ));
        }
        for (i, (g, p)) in grads.extractor.iter().zip(self.extractor.layers()).enumerate() {
            if !g.weight.same_shape(&p.weight) || g.bias.len() != p.bias.len() {
                return Err(Error::shape(
                    "sgd_step",
                    format!("layer {i} gradient {}x{}", p.inputs(), p.outputs()),
                    format!("{}x{}", g.weight.rows(), g.weight.cols()),
                ));
            }
            if !g.weight.is_finite() {
                return Err(Error::NonFinite(format!("gradient of extractor.layer{i}.weight")));
            }
            if g.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of extractor.layer{i}.bias")));
            }
        }
        grads
            .head
            .expect_shape("sgd_step", self.head.feature_dim(), self.head.classes())?;
        grads.head.ensure_finite("gradient of head.weight")
    }

    /// One momentum SGD step on every parameter:
    /// `v ← μ·v + g`, then `p ← p − η·(g + μ·v)` with Nesterov or `p ← p − η·v` without.
    pub fn sgd_step(&mut self, grads: &ModelGrads<T>) -> Result<()> {
        self.check_grads(grads)?;
        let cfg = self.sgd;
        let layers = self.extractor.layers_mut();
        for ((p, v), g) in layers
            .iter_mut()
            .zip(&mut self.velocity.extractor)
            .zip(&grads.extractor)
        {
            momentum_update(
                p.weight.as_mut_slice(),
                v.weight.as_mut_slice(),
                g.weight.as_slice(),
                cfg,
            );
            momentum_update(&mut p.bias, &mut v.bias, &g.bias, cfg);
        }
        momentum_update(
            self.head.weights_mut().as_mut_slice(),
            self.velocity.head.as_mut_slice(),
            grads.head.as_slice(),
            cfg,
        );
        Ok(())
    }
}

fn momentum_update<T: Scalar>(params: &mut [T], velocity: &mut [T], grad: &[T], cfg: SgdConfig<T>) {
    let decay = cfg.weight_decay != T::zero();
    for ((p, v), &g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        let g = if decay { g + cfg.weight_decay * *p } else { g };
        *v = cfg.momentum * *v + g;
        let step = if cfg.nesterov { g + cfg.momentum * *v } else { *v };
        *p -= cfg.lr * step;
    }
}
