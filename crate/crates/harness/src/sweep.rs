//! One-axis hyperparameter sweeps with seed replicates.

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};
use crate::metrics::{mean_std, RunSummary};
use crate::run::{create_dir, write_finetune};
use crate::train::{finetune, pretrain};
use adarand_core::regularizers::RegKind;
use adarand_core::Extractor;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Lambda,
    Alpha,
    Fraction,
    Kind,
}

impl FromStr for Axis {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Axis::Lambda),
            "alpha" => Ok(Axis::Alpha),
            "fraction" => Ok(Axis::Fraction),
            "kind" => Ok(Axis::Kind),
            _ => Err(HarnessError::Config(format!(
                "unknown sweep axis {s:?} (expected lambda, alpha, fraction or kind)"
            ))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Lambda => "lambda",
            Axis::Alpha => "alpha",
            Axis::Fraction => "fraction",
            Axis::Kind => "kind",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AxisValue {
    Number(f64),
    Kind(RegKind),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Number(v) => write!(f, "{v}"),
            AxisValue::Kind(k) => write!(f, "{k}"),
        }
    }
}

impl Axis {
    pub fn parse_value(self, s: &str) -> Result<AxisValue> {
        let s = s.trim();
        match self {
            Axis::Kind => s
                .parse()
                .map(AxisValue::Kind)
                .map_err(|_| HarnessError::Config(format!("unknown regularizer kind {s:?}"))),
            _ => s
                .parse()
                .map(AxisValue::Number)
                .map_err(|_| HarnessError::Config(format!("{self} value {s:?} is not a number"))),
        }
    }

    pub fn parse_values(self, list: &str) -> Result<Vec<AxisValue>> {
        let values: Vec<AxisValue> = list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| self.parse_value(s))
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(HarnessError::Config("sweep needs at least one value".into()));
        }
        Ok(values)
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ExperimentConfig, value: AxisValue) -> Result<ExperimentConfig> {
        let mut cfg = base.clone();
        match (self, value) {
            (Axis::Lambda, AxisValue::Number(v)) => cfg.reg.lambda = v,
            (Axis::Alpha, AxisValue::Number(v)) => cfg.reg.alpha = v,
            (Axis::Fraction, AxisValue::Number(v)) => cfg.dataset.fraction = v,
            (Axis::Kind, AxisValue::Kind(k)) => cfg.reg.kind = k,
            _ => return Err(HarnessError::Config(format!("value {value} does not fit axis {self}"))),
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One (value, replicate) run.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub value: AxisValue,
    pub replicate: usize,
    pub outcome: std::result::Result<RunSummary, String>,
}

/// Aggregate over the replicates of one value.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: Axis,
    pub value: String,
    pub runs: usize,
    pub failures: usize,
    pub test_accuracy_mean: f64,
    pub test_accuracy_std: f64,
    pub feature_norm_mean: f64,
    pub entropy_mean: f64,
    pub mutual_info_mean: f64,
    pub scatter_ratio_mean: f64,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub axis: Axis,
    pub cells: Vec<SweepCell>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

/// Per-cell output directory below the sweep root.
pub fn cell_dir(root: &Path, value: AxisValue, replicate: usize) -> PathBuf {
    root.join(format!("{value}")).join(format!("seed-{replicate}"))
}

/// Runs `base` with every value of `axis` on `replicates` seed replicates.
/// Replicate `r` offsets every seed by `r`; one pretrained extractor is shared
/// by all values of a replicate. A failing cell is recorded and the rest run.
pub fn sweep(
    base: &ExperimentConfig,
    axis: Axis,
    values: &[AxisValue],
    replicates: usize,
    out: Option<&Path>,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    if replicates == 0 {
        return Err(HarnessError::Config("sweep needs at least one seed replicate".into()));
    }
    base.validate()?;
    let configs: Vec<ExperimentConfig> = values.iter().map(|&v| axis.apply(base, v)).collect::<Result<_>>()?;
    let pretrained: Vec<std::result::Result<Extractor, String>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut cfg = base.clone();
            cfg.seeds = base.seeds.offset(r as u64);
            pretrain(&cfg)
                .map(|p| p.extractor)
                .map_err(|e| format!("pretrain: {e}"))
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..replicates).map(move |r| (v, r)))
        .collect();
    let cells: Vec<SweepCell> = jobs
        .into_par_iter()
        .map(|(v, r)| {
            let outcome = pretrained[r].clone().and_then(|ex| {
                let mut cfg = configs[v].clone();
                cfg.seeds = configs[v].seeds.offset(r as u64);
                let run = finetune(&cfg, &ex).map_err(|e| e.to_string())?;
                if let Some(root) = out {
                    write_finetune(&cell_dir(root, values[v], r), &cfg, &run).map_err(|e| e.to_string())?;
                }
                Ok(run.summary)
            });
            SweepCell {
                value: values[v],
                replicate: r,
                outcome,
            }
        })
        .collect();
    let rows = aggregate(axis, values, &cells);
    if let Some(root) = out {
        create_dir(root)?;
        write_rows(&root.join("summary.csv"), &rows)?;
        write_cells(&root.join("cells.csv"), &cells)?;
    }
    Ok(SweepResult { axis, cells, rows })
}

/// Mean ± sample std over the successful replicates of each value. Saturated
/// scatter ratios (a sentinel, not a measurement) are left out of the mean.
pub fn aggregate(axis: Axis, values: &[AxisValue], cells: &[SweepCell]) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&v| {
            let ok: Vec<&RunSummary> = cells
                .iter()
                .filter(|c| c.value == v)
                .filter_map(|c| c.outcome.as_ref().ok())
                .collect();
            let failures = cells.iter().filter(|c| c.value == v && c.outcome.is_err()).count();
            let acc: Vec<f64> = ok.iter().map(|s| s.test_accuracy).collect();
            let (test_accuracy_mean, test_accuracy_std) = mean_std(&acc);
            let diag = |f: fn(&RunSummary) -> Option<f64>| {
                let v: Vec<f64> = ok.iter().filter_map(|s| f(s)).collect();
                mean_std(&v).0
            };
            SweepRow {
                axis,
                value: v.to_string(),
                runs: ok.len(),
                failures,
                test_accuracy_mean,
                test_accuracy_std,
                feature_norm_mean: diag(|s| s.final_diagnostics.as_ref().map(|d| d.feature_norm)),
                entropy_mean: diag(|s| s.final_diagnostics.as_ref().map(|d| d.entropy)),
                mutual_info_mean: diag(|s| s.final_diagnostics.as_ref().map(|d| d.mutual_info)),
                scatter_ratio_mean: diag(|s| s.scatter_ratio.filter(|_| !s.scatter_saturated)),
            }
        })
        .collect()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
}

fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct CellRecord<'a> {
    value: String,
    replicate: usize,
    status: &'a str,
    test_accuracy: Option<f64>,
    error: Option<&'a str>,
}

fn write_cells(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for c in cells {
        let rec = CellRecord {
            value: c.value.to_string(),
            replicate: c.replicate,
            status: if c.outcome.is_ok() { "ok" } else { "failed" },
            test_accuracy: c.outcome.as_ref().ok().map(|s| s.test_accuracy),
            error: c.outcome.as_ref().err().map(String::as_str),
        };
        w.serialize(rec)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
