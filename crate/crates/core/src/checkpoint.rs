//! Versioned JSON container for model and prior checkpoints.
//!
//! Values are stored as 64-bit floats; serialization uses shortest
//! round-trip formatting, so save/load is exact.

use crate::error::{Error, Result};
use crate::model::{DenseLayer, ExtractorParams, HeadMatrix};
use crate::numerics::{RealMatrix, Scalar};
use crate::priors::{ConditionalPrior, Distance};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT: &str = "adarand-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix<T: Scalar>(m: &RealMatrix<T>) -> Self {
        Self {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_matrix<T: Scalar>(&self) -> Result<RealMatrix<T>> {
        RealMatrix::new(self.rows, self.cols, self.data.iter().map(|&v| T::lit(v)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weight: MatrixRecord,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Payload {
    Model {
        layers: Vec<LayerRecord>,
        /// Absent for pretrained extractors, whose source head is discarded.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        head: Option<MatrixRecord>,
    },
    Prior {
        mu: MatrixRecord,
        sigma2: MatrixRecord,
        mu_bar: MatrixRecord,
        alpha: f64,
        xi: f64,
        distance: Distance,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub payload: Payload,
}

impl Checkpoint {
    pub fn wrap(payload: Payload) -> Self {
        Self {
            format: FORMAT.to_string(),
            version: VERSION,
            payload,
        }
    }

    pub fn from_model<T: Scalar>(extractor: &ExtractorParams<T>, head: Option<&HeadMatrix<T>>) -> Self {
        let layers = extractor
            .layers()
            .iter()
            .map(|l| LayerRecord {
                weight: MatrixRecord::from_matrix(&l.weight),
                bias: l.bias.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self::wrap(Payload::Model {
            layers,
            head: head.map(|h| MatrixRecord::from_matrix(h.weights())),
        })
    }

    pub fn from_prior<T: Scalar>(prior: &ConditionalPrior<T>) -> Self {
        Self::wrap(Payload::Prior {
            mu: MatrixRecord::from_matrix(prior.mu()),
            sigma2: MatrixRecord::from_matrix(prior.sigma2()),
            mu_bar: MatrixRecord::from_matrix(prior.mu_bar()),
            alpha: prior.alpha().as_f64(),
            xi: prior.xi().as_f64(),
            distance: prior.distance(),
        })
    }

    #[allow(clippy::type_complexity)]
    pub fn to_model<T: Scalar>(&self) -> Result<(ExtractorParams<T>, Option<HeadMatrix<T>>)> {
        match &self.payload {
            Payload::Model { layers, head } => {
                let layers = layers
                    .iter()
                    .map(|l| {
                        Ok(DenseLayer {
                            weight: l.weight.to_matrix()?,
                            bias: l.bias.iter().map(|&v| T::lit(v)).collect(),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let extractor = ExtractorParams::new(layers)?;
                let head = head.as_ref().map(|h| HeadMatrix::new(h.to_matrix()?)).transpose()?;
                if let Some(h) = &head {
                    if h.feature_dim() != extractor.feature_dim() {
                        return Err(Error::Checkpoint(format!(
                            "head has {} feature rows, extractor emits {}",
                            h.feature_dim(),
                            extractor.feature_dim()
                        )));
                    }
                }
                Ok((extractor, head))
            }
            Payload::Prior { .. } => Err(Error::Checkpoint("expected a model checkpoint, found a prior".into())),
        }
    }

    pub fn to_prior<T: Scalar>(&self) -> Result<ConditionalPrior<T>> {
        match &self.payload {
            Payload::Prior {
                mu,
                sigma2,
                mu_bar,
                alpha,
                xi,
                distance,
            } => ConditionalPrior::from_parts(
                mu.to_matrix()?,
                sigma2.to_matrix()?,
                mu_bar.to_matrix()?,
                T::lit(*alpha),
                T::lit(*xi),
                *distance,
            ),
            Payload::Model { .. } => Err(Error::Checkpoint("expected a prior checkpoint, found a model".into())),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", ckpt.format)));
        }
        if ckpt.version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_json())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }
}
