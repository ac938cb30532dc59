//! Feature and parameter regularizers behind one interface.
//!
//! Random-feature kinds penalize `‖g_φ(x) − z‖²` for a reference vector `z`
//! drawn per sample and step; FNP is the `z = 0` case. L2SP penalizes the
//! distance of the extractor parameters to their pretrained values.
//! Reference vectors are constants for the model's backward pass.

use crate::error::{Error, Result};
use crate::model::{DenseLayer, ExtractorParams, HeadMatrix, ModelGrads};
use crate::numerics::{gaussian_sample, standard_normal_sample, uniform_sample, RealMatrix, RngStream, Scalar};
use crate::priors::{ConditionalPrior, Distance, PriorConfig, DEFAULT_VAR_FLOOR};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegKind {
    #[serde(rename = "ft")]
    Ft,
    #[serde(rename = "fnp")]
    Fnp,
    #[serde(rename = "l2sp")]
    L2sp,
    #[serde(rename = "randreg-u01")]
    RandRegUniform01,
    #[serde(rename = "randreg-n01")]
    RandRegStdNormal,
    #[serde(rename = "randreg-stats")]
    RandRegPrecompStats,
    #[serde(rename = "randreg-cp")]
    RandRegCp,
    #[serde(rename = "adarand")]
    AdaRand,
}

impl RegKind {
    pub const ALL: [RegKind; 8] = [
        RegKind::Ft,
        RegKind::Fnp,
        RegKind::L2sp,
        RegKind::RandRegUniform01,
        RegKind::RandRegStdNormal,
        RegKind::RandRegPrecompStats,
        RegKind::RandRegCp,
        RegKind::AdaRand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::Ft => "ft",
            RegKind::Fnp => "fnp",
            RegKind::L2sp => "l2sp",
            RegKind::RandRegUniform01 => "randreg-u01",
            RegKind::RandRegStdNormal => "randreg-n01",
            RegKind::RandRegPrecompStats => "randreg-stats",
            RegKind::RandRegCp => "randreg-cp",
            RegKind::AdaRand => "adarand",
        }
    }

    /// Kinds whose references depend on the sample's label.
    pub fn is_conditional(self) -> bool {
        matches!(self, RegKind::RandRegCp | RegKind::AdaRand)
    }

    /// Kinds that draw from the noise stream.
    pub fn is_random(self) -> bool {
        matches!(
            self,
            RegKind::RandRegUniform01
                | RegKind::RandRegStdNormal
                | RegKind::RandRegPrecompStats
                | RegKind::RandRegCp
                | RegKind::AdaRand
        )
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::contract(format!("unknown regularizer kind {s:?}")))
    }
}

fn default_lambda() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.5
}
fn default_xi() -> f64 {
    0.1
}
fn default_var_floor() -> f64 {
    DEFAULT_VAR_FLOOR
}
fn default_head_weight() -> f64 {
    1.0
}

/// Declarative regularizer choice, part of the experiment config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegSpec {
    pub kind: RegKind,
    /// Trade-off `λ` between classification loss and penalty.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_xi")]
    pub xi: f64,
    #[serde(default = "default_var_floor")]
    pub var_floor: f64,
    #[serde(default)]
    pub distance: Distance,
    /// Weight of the `‖W‖²` head term inside the L2SP penalty.
    #[serde(default = "default_head_weight")]
    pub l2sp_head_weight: f64,
}

impl RegSpec {
    pub fn new(kind: RegKind) -> Self {
        Self {
            kind,
            lambda: default_lambda(),
            alpha: default_alpha(),
            xi: default_xi(),
            var_floor: default_var_floor(),
            distance: Distance::Cosine,
            l2sp_head_weight: default_head_weight(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::contract(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::contract(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return Err(Error::contract(format!("xi must be finite and >= 0, got {}", self.xi)));
        }
        if !(self.var_floor.is_finite() && self.var_floor >= 0.0) {
            return Err(Error::contract("var_floor must be finite and >= 0"));
        }
        if !(self.l2sp_head_weight.is_finite() && self.l2sp_head_weight >= 0.0) {
            return Err(Error::contract("l2sp_head_weight must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn prior_config<T: Scalar>(&self) -> PriorConfig<T> {
        PriorConfig {
            alpha: T::lit(self.alpha),
            xi: T::lit(self.xi),
            distance: self.distance,
            var_floor: T::lit(self.var_floor),
        }
    }
}

/// Features tagged with the fingerprint of the extractor that produced them.
#[derive(Clone, Debug)]
pub struct TaggedFeatures<T> {
    features: RealMatrix<T>,
    extractor_fingerprint: u64,
}

impl<T: Scalar> TaggedFeatures<T> {
    pub fn extract(extractor: &ExtractorParams<T>, inputs: &RealMatrix<T>) -> Result<Self> {
        Ok(Self {
            features: extractor.extract_features(inputs)?,
            extractor_fingerprint: extractor.fingerprint(),
        })
    }

    pub fn features(&self) -> &RealMatrix<T> {
        &self.features
    }

    pub fn extractor_fingerprint(&self) -> u64 {
        self.extractor_fingerprint
    }
}

/// Materialized state of a regularizer. Each variant carries exactly what
/// its kind needs.
#[derive(Clone, Debug, PartialEq)]
pub enum RegState<T> {
    Ft,
    Fnp,
    L2sp { source: ExtractorParams<T>, head_weight: T },
    Uniform01,
    StdNormal,
    PrecompStats { mean: RealMatrix<T>, var: RealMatrix<T> },
    ConditionalFixed(ConditionalPrior<T>),
    AdaRand(ConditionalPrior<T>),
}

/// Penalty value and its gradient with respect to the batch features.
#[derive(Clone, Debug)]
pub struct Penalty<T> {
    pub value: T,
    pub grad_features: RealMatrix<T>,
}

/// L2SP penalty value and its parameter gradients.
#[derive(Clone, Debug)]
pub struct L2spPenalty<T> {
    pub value: T,
    pub grads: ModelGrads<T>,
}

impl<T: Scalar> RegState<T> {
    /// Builds the state for `spec` from the pretrained extractor and the target
    /// training features it produced.
    pub fn build(
        spec: &RegSpec,
        pretrained: &ExtractorParams<T>,
        target: &TaggedFeatures<T>,
        labels: &[usize],
        classes: usize,
    ) -> Result<Self> {
        spec.validate()?;
        if target.extractor_fingerprint != pretrained.fingerprint() {
            return Err(Error::contract(
                "target features were not extracted with the pretrained extractor",
            ));
        }
        let features = target.features();
        Ok(match spec.kind {
            RegKind::Ft => RegState::Ft,
            RegKind::Fnp => RegState::Fnp,
            RegKind::RandRegUniform01 => RegState::Uniform01,
            RegKind::RandRegStdNormal => RegState::StdNormal,
            RegKind::L2sp => RegState::L2sp {
                source: pretrained.clone(),
                head_weight: T::lit(spec.l2sp_head_weight),
            },
            RegKind::RandRegPrecompStats => {
                if features.rows() == 0 {
                    return Err(Error::TooFewSamples {
                        op: "precomputed statistics",
                        needed: 1,
                        got: 0,
                    });
                }
                let mean = features.column_means();
                let n = T::of_usize(features.rows());
                let mut var = vec![T::zero(); features.cols()];
                for row in features.row_iter() {
                    for ((v, &x), &m) in var.iter_mut().zip(row).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= n);
                let d = features.cols();
                RegState::PrecompStats {
                    mean: RealMatrix::new(1, d, mean)?,
                    var: RealMatrix::new(1, d, var)?,
                }
            }
            RegKind::RandRegCp => RegState::ConditionalFixed(ConditionalPrior::init_from_features(
                features,
                labels,
                classes,
                spec.prior_config(),
            )?),
            RegKind::AdaRand => RegState::AdaRand(ConditionalPrior::init_from_features(
                features,
                labels,
                classes,
                spec.prior_config(),
            )?),
        })
    }

    pub fn kind(&self) -> RegKind {
        match self {
            RegState::Ft => RegKind::Ft,
            RegState::Fnp => RegKind::Fnp,
            RegState::L2sp { .. } => RegKind::L2sp,
            RegState::Uniform01 => RegKind::RandRegUniform01,
            RegState::StdNormal => RegKind::RandRegStdNormal,
            RegState::PrecompStats { .. } => RegKind::RandRegPrecompStats,
            RegState::ConditionalFixed(_) => RegKind::RandRegCp,
            RegState::AdaRand(_) => RegKind::AdaRand,
        }
    }

    pub fn prior(&self) -> Option<&ConditionalPrior<T>> {
        match self {
            RegState::ConditionalFixed(p) | RegState::AdaRand(p) => Some(p),
            _ => None,
        }
    }

    /// Draws this step's reference vectors for a `batch × dim` feature batch.
    /// `None` for kinds without a feature penalty. Only random kinds consume
    /// `rng`.
    pub fn draw_references(
        &self,
        batch: usize,
        dim: usize,
        labels: Option<&[usize]>,
        rng: &mut RngStream,
    ) -> Result<Option<RealMatrix<T>>> {
        let refs = match self {
            RegState::Ft | RegState::L2sp { .. } => return Ok(None),
            RegState::Fnp => RealMatrix::zeros(batch, dim),
            RegState::Uniform01 => uniform_sample(rng, batch, dim)?,
            RegState::StdNormal => standard_normal_sample(rng, batch, dim),
            RegState::PrecompStats { mean, var } => {
                check_dim(mean.cols(), dim)?;
                let idx = vec![0; batch];
                gaussian_sample(rng, &mean.select_rows(&idx), &var.select_rows(&idx))?
            }
            RegState::ConditionalFixed(prior) | RegState::AdaRand(prior) => {
                check_dim(prior.dim(), dim)?;
                let labels = labels
                    .ok_or_else(|| Error::contract(format!("{} needs labels to draw references", self.kind())))?;
                if labels.len() != batch {
                    return Err(Error::shape("draw_references", format!("{batch} labels"), labels.len()));
                }
                prior.sample_reference(labels, rng)?
            }
        };
        Ok(Some(refs))
    }

    /// Batch mean of `‖g_i − z_i‖²` with fresh references, and its gradient
    /// with respect to the features. Zero for FT and L2SP.
    pub fn penalty(
        &self,
        features: &RealMatrix<T>,
        labels: Option<&[usize]>,
        rng: &mut RngStream,
    ) -> Result<Penalty<T>> {
        match self.draw_references(features.rows(), features.cols(), labels, rng)? {
            Some(refs) => penalty_against(features, &refs),
            None => Ok(Penalty {
                value: T::zero(),
                grad_features: RealMatrix::zeros(features.rows(), features.cols()),
            }),
        }
    }

    /// Prior update after the model step: EMA of the running means followed by
    /// one adaptive mean step. Only AdaRand changes.
    pub fn post_step_hook(&mut self, features: &RealMatrix<T>, labels: &[usize]) -> Result<()> {
        if let RegState::AdaRand(prior) = self {
            prior.ema_update(features, labels)?;
            prior.adaptive_step()?;
        }
        Ok(())
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape("regularizer", format!("feature dim {expected}"), got));
    }
    Ok(())
}

/// `(1/B) Σ_i ‖g_i − z_i‖²` and `2 (g − z) / B`, with `z` held constant.
pub fn penalty_against<T: Scalar>(features: &RealMatrix<T>, refs: &RealMatrix<T>) -> Result<Penalty<T>> {
    let diff = features.sub(refs)?;
    if features.rows() == 0 {
        return Ok(Penalty {
            value: T::zero(),
            grad_features: diff,
        });
    }
    let inv_b = T::one() / T::of_usize(features.rows());
    Ok(Penalty {
        value: diff.frobenius_sq() * inv_b,
        grad_features: diff.scale(T::lit(2.0) * inv_b),
    })
}

/// `‖φ − φ_s‖² + β‖W‖²` summed over every extractor parameter, with gradients.
pub fn l2sp_penalty<T: Scalar>(
    current: &ExtractorParams<T>,
    source: &ExtractorParams<T>,
    head: &HeadMatrix<T>,
    head_weight: T,
) -> Result<L2spPenalty<T>> {
    if current.widths() != source.widths() {
        return Err(Error::shape(
            "l2sp_penalty",
            format!("{:?}", source.widths()),
            format!("{:?}", current.widths()),
        ));
    }
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut layers = Vec::with_capacity(current.layers().len());
    for (c, s) in current.layers().iter().zip(source.layers()) {
        let dw = c.weight.sub(&s.weight)?;
        let db: Vec<T> = c.bias.iter().zip(&s.bias).map(|(&a, &b)| a - b).collect();
        value += dw.frobenius_sq() + db.iter().map(|&v| v * v).sum::<T>();
        layers.push(DenseLayer {
            weight: dw.scale(two),
            bias: db.into_iter().map(|v| v * two).collect(),
        });
    }
    value += head_weight * head.weights().frobenius_sq();
    Ok(L2spPenalty {
        value,
        grads: ModelGrads {
            extractor: layers,
            head: head.weights().scale(two * head_weight),
        },
    })
}
