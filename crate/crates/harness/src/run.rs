//! On-disk layout of single runs.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{write_json, write_metrics_csv};
use crate::train::{FinetuneOutcome, PretrainOutcome};
use adarand_core::checkpoint::Checkpoint;
use adarand_core::diagnostics::write_pca_csv;
use serde::Serialize;
use std::path::Path;

pub const CONFIG_FILE: &str = "config.resolved.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PCA_FILE: &str = "pca.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MODEL_FILE: &str = "model.json";
pub const PRIOR_FILE: &str = "prior.json";

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn save(ckpt: Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_json()).map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    epochs: usize,
    final_train_accuracy: Option<f64>,
    train_accuracy: &'a [f64],
}

/// `config.resolved.json`, `checkpoint.json` (extractor only) and `summary.json`.
pub fn write_pretrain(dir: &Path, cfg: &ExperimentConfig, out: &PretrainOutcome) -> Result<()> {
    create_dir(dir)?;
    write_json(dir.join(CONFIG_FILE), cfg)?;
    save(Checkpoint::from_model(&out.extractor, None), &dir.join(CHECKPOINT_FILE))?;
    write_json(
        dir.join(SUMMARY_FILE),
        &PretrainSummary {
            epochs: out.train_accuracy.len(),
            final_train_accuracy: out.final_train_accuracy(),
            train_accuracy: &out.train_accuracy,
        },
    )
}

/// `config.resolved.json`, `metrics.csv`, `summary.json`, the selected model,
/// the learned prior for conditional kinds and, if enabled, `pca.csv`.
pub fn write_finetune(dir: &Path, cfg: &ExperimentConfig, out: &FinetuneOutcome) -> Result<()> {
    create_dir(dir)?;
    write_json(dir.join(CONFIG_FILE), cfg)?;
    write_metrics_csv(dir.join(METRICS_FILE), &out.rows)?;
    write_json(dir.join(SUMMARY_FILE), &out.summary)?;
    save(
        Checkpoint::from_model(&out.selected.extractor, Some(&out.selected.head)),
        &dir.join(MODEL_FILE),
    )?;
    if let Some(prior) = out.regularizer.prior() {
        save(Checkpoint::from_prior(prior), &dir.join(PRIOR_FILE))?;
    }
    if cfg.diagnostics.write_pca {
        if let Some((proj, labels)) = &out.pca {
            write_pca(&dir.join(PCA_FILE), proj, labels)?;
        }
    }
    Ok(())
}

pub fn write_pca(path: &Path, proj: &adarand_core::Matrix, labels: &[usize]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    write_pca_csv(std::io::BufWriter::new(file), proj, labels).map_err(|e| HarnessError::io(path, e))
}
