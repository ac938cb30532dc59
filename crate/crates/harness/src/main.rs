use adarand_core::checkpoint::Checkpoint;
use adarand_core::diagnostics::{pca2, scatter_ratio, DiagnosticsReport, EntropyEstimator};
use adarand_harness::data::load_csv_dataset;
use adarand_harness::error::{HarnessError, Result};
use adarand_harness::metrics::write_json;
use adarand_harness::run::{write_finetune, write_pca, write_pretrain, CHECKPOINT_FILE, PCA_FILE};
use adarand_harness::sweep::{sweep, Axis};
use adarand_harness::train::{finetune, pretrain};
use adarand_harness::ExperimentConfig;
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adarand", version, about = "Regularized fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an extractor on the source task and save it.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a pretrained extractor on the target task.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pretrained: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune over the values of one axis with seed replicates.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// lambda, alpha, fraction or kind
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Feature diagnostics of a checkpoint on a CSV dataset.
    Diag {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorRecord {
    status: &'static str,
    kind: &'static str,
    message: String,
}

#[derive(Serialize)]
struct DiagOutput {
    samples: usize,
    report: DiagReportRecord,
    scatter_ratio: Option<f64>,
    scatter_saturated: bool,
    pca_explained: Option<[f64; 2]>,
}

#[derive(Serialize)]
struct DiagReportRecord {
    mean_feature_norm: f64,
    entropy: f64,
    cond_entropy: f64,
    mutual_info: f64,
    mean_ce_grad_norm: Option<f64>,
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli.or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| HarnessError::Config("no output directory: pass --out or set output_dir".into()))
}

fn diag(checkpoint: &Path, data: &Path, out: &Path) -> Result<()> {
    let (extractor, head) = Checkpoint::load(checkpoint)?.to_model::<f64>()?;
    let data = load_csv_dataset(data)?;
    if data.dim() != extractor.input_dim() {
        return Err(HarnessError::Config(format!(
            "data has {} features, checkpoint expects {}",
            data.dim(),
            extractor.input_dim()
        )));
    }
    let g = extractor.extract_features(&data.features)?;
    let head = head.filter(|h| h.classes() >= data.classes);
    let classes = head.as_ref().map_or(data.classes, |h| h.classes());
    let report = DiagnosticsReport::compute(&g, &data.labels, classes, head.as_ref(), &EntropyEstimator::default())?;
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let pca = if g.rows() >= 2 { Some(pca2(&g)?) } else { None };
    let scatter = match &pca {
        Some(p) => Some(scatter_ratio(&p.projection, &data.labels)?),
        None => None,
    };
    if let Some(p) = &pca {
        write_pca(&out.join(PCA_FILE), &p.projection, &data.labels)?;
    }
    write_json(
        out.join("diagnostics.json"),
        &DiagOutput {
            samples: data.len(),
            report: DiagReportRecord {
                mean_feature_norm: report.mean_feature_norm,
                entropy: report.entropy,
                cond_entropy: report.cond_entropy,
                mutual_info: report.mutual_info,
                mean_ce_grad_norm: report.mean_ce_grad_norm,
            },
            scatter_ratio: scatter.map(|s| s.value),
            scatter_saturated: scatter.is_some_and(|s| s.saturated),
            pca_explained: pca.map(|p| p.explained),
        },
    )
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, &cfg)?;
            let result = pretrain(&cfg)?;
            write_pretrain(&dir, &cfg, &result)?;
            println!("{}", dir.join(CHECKPOINT_FILE).display());
        }
        Command::Finetune {
            config,
            pretrained,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, &cfg)?;
            let (extractor, _) = Checkpoint::load(&pretrained)?.to_model::<f64>()?;
            let result = finetune(&cfg, &extractor)?;
            write_finetune(&dir, &cfg, &result)?;
            println!("test_accuracy={}", result.summary.test_accuracy);
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = out_dir(out, &cfg)?;
            let axis: Axis = axis.parse()?;
            let values = axis.parse_values(&values)?;
            let result = sweep(&cfg, axis, &values, seeds, Some(&dir))?;
            for r in &result.rows {
                println!(
                    "{}={} runs={} failures={} test_accuracy={:.4}±{:.4}",
                    r.axis, r.value, r.runs, r.failures, r.test_accuracy_mean, r.test_accuracy_std
                );
            }
        }
        Command::Diag { checkpoint, data, out } => diag(&checkpoint, &data, &out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let rec = ErrorRecord {
                status: "error",
                kind: e.kind(),
                message: e.to_string(),
            };
            eprintln!("{}", serde_json::to_string(&rec).expect("error record serializes"));
            ExitCode::FAILURE
        }
    }
}
