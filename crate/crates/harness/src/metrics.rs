//! Per-epoch metric rows, run summaries and their on-disk formats.

use crate::error::{HarnessError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// One epoch of a run. Optional fields are written as empty CSV cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub lr: f64,
    /// Batch mean of `L_cls + λ·L_reg`.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub l_cls: f64,
    /// Batch mean of `λ·L_reg`.
    pub l_reg: f64,
    /// Prior objective after the epoch; AdaRand only.
    pub l_ada: Option<f64>,
    pub feature_norm: f64,
    pub entropy: f64,
    pub cond_entropy: f64,
    pub mutual_info: f64,
    pub ce_grad_norm: Option<f64>,
}

/// Final-epoch feature statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalDiagnostics {
    pub feature_norm: f64,
    pub entropy: f64,
    pub cond_entropy: f64,
    pub mutual_info: f64,
    pub ce_grad_norm: Option<f64>,
}

impl From<&MetricsRow> for FinalDiagnostics {
    fn from(r: &MetricsRow) -> Self {
        Self {
            feature_norm: r.feature_norm,
            entropy: r.entropy,
            cond_entropy: r.cond_entropy,
            mutual_info: r.mutual_info,
            ce_grad_norm: r.ce_grad_norm,
        }
    }
}

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub lambda: f64,
    pub alpha: f64,
    pub fraction: f64,
    pub train_size: usize,
    pub epochs: usize,
    /// Epoch with the best validation accuracy (latest among ties).
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    /// Test accuracy of the best-validation model.
    pub test_accuracy: f64,
    pub final_test_accuracy: f64,
    pub final_diagnostics: Option<FinalDiagnostics>,
    /// Between/within class scatter of the 2-D PCA of test features.
    pub scatter_ratio: Option<f64>,
    pub scatter_saturated: bool,
    pub pca_explained: Option<[f64; 2]>,
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(METRICS_HEADER).map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

const METRICS_HEADER: [&str; 14] = [
    "epoch",
    "lr",
    "train_loss",
    "train_accuracy",
    "val_accuracy",
    "test_accuracy",
    "l_cls",
    "l_reg",
    "l_ada",
    "feature_norm",
    "entropy",
    "cond_entropy",
    "mutual_info",
    "ce_grad_norm",
];

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<RunSummary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Standard error of the difference of two independent sample means,
/// `sqrt(s_a²/n_a + s_b²/n_b)`.
pub fn joint_standard_error(a: &[f64], b: &[f64]) -> f64 {
    let (_, sa) = mean_std(a);
    let (_, sb) = mean_std(b);
    (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt()
}
