//! Experiment configuration: a single JSON document with explicit defaults.

use crate::error::{HarnessError, Result};
use adarand_core::regularizers::{RegKind, RegSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Where the samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    SyntheticBlobs(SyntheticSpec),
    CsvFile(CsvSpec),
}

/// Gaussian blobs. Each class is a mixture of `modes_per_class` isotropic
/// blobs whose centers sit at distance ≈ `separation` from the origin. The
/// target task is the source task rotated by `rotation` radians in every
/// coordinate plane `(2i, 2i+1)` and translated by `shift` along the all-ones
/// direction, sampled afresh.
/// Omitted fields take their default values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub input_dim: usize,
    pub classes: usize,
    /// Target pool per class, before the train/validation split.
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Source-task training samples per class (used by pretraining).
    pub source_per_class: usize,
    pub modes_per_class: usize,
    pub spread: f64,
    pub separation: f64,
    pub rotation: f64,
    pub shift: f64,
    /// Label source samples by mode (`classes × modes_per_class` source
    /// classes) instead of by class.
    pub source_by_mode: bool,
    /// Seed for the blob geometry (shared by source and target).
    pub geometry_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            input_dim: 64,
            classes: 10,
            samples_per_class: 22,
            test_per_class: 100,
            source_per_class: 200,
            modes_per_class: 4,
            spread: 0.3,
            separation: 2.0,
            rotation: 0.0,
            shift: 0.15,
            source_by_mode: true,
            geometry_seed: 7,
        }
    }
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::SyntheticBlobs(SyntheticSpec::default())
    }
}

/// CSV files with header `f0,…,f{m−1},label`. Without `test_path`, a
/// stratified tenth of `path` is held out for testing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSpec {
    pub path: PathBuf,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default)]
    pub source: DataSource,
    /// Share of the training split kept, in (0, 1].
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Seed of the train/validation split and of the fraction reduction.
    #[serde(default)]
    pub split_seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::default(),
            fraction: 1.0,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden widths followed by the feature dimension; the input width comes
    /// from the data.
    pub widths: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            widths: vec![128, 128, 64],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f64,
    /// Coupled L2 weight decay.
    pub weight_decay: f64,
    /// Multiplies the extractor's gradients before the optimizer step, so the
    /// body learns at `lr · extractor_lr_scale` while the head uses `lr`.
    /// Fine-tuning only; pretraining always uses 1.
    pub extractor_lr_scale: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            nesterov: true,
            batch_size: 8,
            epochs: 60,
            milestones: vec![20, 40],
            decay: 0.1,
            weight_decay: 0.0,
            extractor_lr_scale: 0.003,
        }
    }
}

impl OptimizerConfig {
    /// Step schedule: `lr · decay^(#milestones ≤ epoch)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.decay.powi(passed as i32)
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(cfg(format!("{what}.lr must be positive")));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(cfg(format!("{what}.momentum must lie in [0, 1)")));
        }
        if self.batch_size == 0 {
            return Err(cfg(format!("{what}.batch_size must be positive")));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(cfg(format!("{what}.decay must be positive")));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(cfg(format!("{what}.weight_decay must be >= 0")));
        }
        if !(self.extractor_lr_scale.is_finite() && self.extractor_lr_scale >= 0.0) {
            return Err(cfg(format!("{what}.extractor_lr_scale must be >= 0")));
        }
        Ok(())
    }
}

/// Source-task training. `dataset` defaults to the source task of a
/// synthetic target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub dataset: Option<PathBuf>,
    pub optimizer: OptimizerConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            optimizer: OptimizerConfig {
                lr: 0.05,
                epochs: 30,
                batch_size: 32,
                milestones: vec![20],
                weight_decay: 5e-3,
                ..OptimizerConfig::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub noise: u64,
    pub data: u64,
}

impl Seeds {
    /// Every seed moved by `r`; used for seed replicates.
    pub fn offset(self, r: u64) -> Self {
        Self {
            init: self.init.wrapping_add(r),
            shuffle: self.shuffle.wrapping_add(r),
            noise: self.noise.wrapping_add(r),
            data: self.data.wrapping_add(r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    /// Size cap of the per-epoch diagnostics subset and of the entropy estimator.
    pub subset: usize,
    /// Cap on test samples projected for the PCA export.
    pub pca_samples: usize,
    pub write_pca: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            subset: 512,
            pca_samples: 1024,
            write_pca: true,
        }
    }
}

fn default_reg() -> RegSpec {
    RegSpec::new(RegKind::Ft)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_reg")]
    pub reg: RegSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    /// Used when no `--out` is given on the command line.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            model: ModelConfig::default(),
            reg: default_reg(),
            optimizer: OptimizerConfig::default(),
            pretrain: PretrainConfig::default(),
            seeds: Seeds::default(),
            diagnostics: DiagnosticsConfig::default(),
            output_dir: None,
        }
    }
}

fn cfg(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| cfg(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Config(m) => cfg(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Pretty JSON with every default filled in.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.dataset.fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(cfg(format!("dataset.fraction must lie in (0, 1], got {f}")));
        }
        if let DataSource::SyntheticBlobs(s) = &self.dataset.source {
            if s.classes < 2 {
                return Err(cfg("synthetic classes must be at least 2"));
            }
            if s.samples_per_class < 2 || s.test_per_class < 1 || s.source_per_class < 1 {
                return Err(cfg("synthetic samples per class must be at least 2"));
            }
            if s.input_dim == 0 || s.modes_per_class == 0 {
                return Err(cfg("synthetic input_dim and modes_per_class must be positive"));
            }
            if !(s.spread.is_finite() && s.spread > 0.0) {
                return Err(cfg(format!("synthetic spread must be positive, got {}", s.spread)));
            }
            if !(s.separation.is_finite() && s.rotation.is_finite() && s.shift.is_finite()) {
                return Err(cfg("synthetic geometry must be finite"));
            }
        }
        if self.model.widths.is_empty() || self.model.widths.contains(&0) {
            return Err(cfg("model.widths must be non-empty and positive"));
        }
        self.reg.validate()?;
        self.optimizer.validate("optimizer")?;
        self.pretrain.optimizer.validate("pretrain.optimizer")?;
        if self.diagnostics.subset < 2 {
            return Err(cfg("diagnostics.subset must be at least 2"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.model.widths.last().expect("validated widths")
    }
}
