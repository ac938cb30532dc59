//! Pretraining on the source task and regularized fine-tuning on the target.

use crate::config::{DataSource, ExperimentConfig, OptimizerConfig};
use crate::data::{load_csv_dataset, prepare_target, source_task, Dataset, Splits};
use crate::error::{HarnessError, Result};
use crate::metrics::{FinalDiagnostics, MetricsRow, RunSummary};
use adarand_core::diagnostics::{pca2, scatter_ratio, DiagnosticsReport, EntropyEstimator};
use adarand_core::model::{ce_loss, ModelGrads, SgdConfig};
use adarand_core::regularizers::{l2sp_penalty, penalty_against, RegState, TaggedFeatures};
use adarand_core::{Error as CoreError, Extractor, Head, Matrix, Model, Regularizer, RngStream, StreamId};

/// Result of source-task training.
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub extractor: Extractor,
    /// Source head; not part of the checkpoint.
    pub head: Head,
    /// Source-train accuracy after every epoch.
    pub train_accuracy: Vec<f64>,
}

impl PretrainOutcome {
    pub fn final_train_accuracy(&self) -> Option<f64> {
        self.train_accuracy.last().copied()
    }
}

/// Result of one fine-tuning run.
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// Model with the best validation accuracy (latest among ties).
    pub selected: Model,
    pub final_state: Model,
    pub rows: Vec<MetricsRow>,
    pub summary: RunSummary,
    /// Final regularizer state (carries the learned prior for AdaRand).
    pub regularizer: Regularizer,
    /// PCA projection of the test features under the selected model, with labels.
    pub pca: Option<(Matrix, Vec<usize>)>,
    /// Parameters after every optimizer step, when requested.
    pub trajectory: Vec<Vec<f64>>,
}

/// Source data for pretraining: the configured CSV file or the source task of
/// a synthetic target.
pub fn source_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match (&cfg.pretrain.dataset, &cfg.dataset.source) {
        (Some(path), _) => load_csv_dataset(path),
        (None, DataSource::SyntheticBlobs(s)) => source_task(s),
        (None, DataSource::CsvFile(_)) => Err(HarnessError::Config(
            "pretrain.dataset is required when the target is a CSV file".into(),
        )),
    }
}

fn sgd(opt: &OptimizerConfig) -> SgdConfig<f64> {
    SgdConfig {
        lr: opt.lr,
        momentum: opt.momentum,
        nesterov: opt.nesterov,
        weight_decay: opt.weight_decay,
    }
}

fn widths(input_dim: usize, cfg: &ExperimentConfig) -> Vec<usize> {
    std::iter::once(input_dim)
        .chain(cfg.model.widths.iter().copied())
        .collect()
}

/// Trains extractor and head with plain cross-entropy on the source task. The
/// regularizer section of the config does not apply here.
pub fn pretrain(cfg: &ExperimentConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let data = source_dataset(cfg)?;
    pretrain_on(cfg, &data)
}

pub fn pretrain_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<PretrainOutcome> {
    let opt = &cfg.pretrain.optimizer;
    let mut init = RngStream::new(cfg.seeds.init, StreamId::Init);
    let extractor = Extractor::init(&widths(data.dim(), cfg), &mut init)?;
    let head = Head::init(cfg.feature_dim(), data.classes, &mut init);
    let mut model = Model::new(extractor, head, sgd(opt))?;
    let mut reg = RegState::Ft;
    let mut shuffle = RngStream::new(cfg.seeds.shuffle, StreamId::Shuffle);
    let mut noise = RngStream::new(cfg.seeds.noise, StreamId::Noise);
    let mut acc = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        model.set_lr(opt.lr_at(epoch));
        // the whole network learns from scratch here, so no extractor scaling
        run_epoch(
            &mut model,
            &mut reg,
            0.0,
            data,
            opt.batch_size,
            &mut shuffle,
            &mut noise,
            epoch,
            None,
            1.0,
        )?;
        let g = model.extractor.extract_features(&data.features)?;
        acc.push(model.head.accuracy(&g, &data.labels)?);
    }
    Ok(PretrainOutcome {
        extractor: model.extractor,
        head: model.head,
        train_accuracy: acc,
    })
}

struct EpochLoss {
    total: f64,
    cls: f64,
    reg: f64,
}

/// One pass over `data` in shuffled mini-batches: draw references, take the
/// joint step on `L_cls + λ·L_reg`, then run the regularizer's post-step hook
/// on the step's (detached) features.
#[allow(clippy::too_many_arguments)]
fn run_epoch(
    model: &mut Model,
    reg: &mut Regularizer,
    lambda: f64,
    data: &Dataset,
    batch: usize,
    shuffle: &mut RngStream,
    noise: &mut RngStream,
    epoch: usize,
    mut trajectory: Option<&mut Vec<Vec<f64>>>,
    ext_scale: f64,
) -> Result<EpochLoss> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle.shuffle(&mut order);
    let diverged = |what: &str| HarnessError::Diverged {
        epoch,
        what: what.to_string(),
    };
    let (mut cls_sum, mut reg_sum, mut batches) = (0.0, 0.0, 0usize);
    for idx in order.chunks(batch) {
        let x = data.features.select_rows(idx);
        let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let cache = model.extractor.forward(&x)?;
        let g = cache.features();
        let ce = ce_loss(&model.head, g, &y)?;
        let mut grad_features = ce.grad_features;
        let mut reg_value = 0.0;
        if let Some(z) = reg.draw_references(g.rows(), g.cols(), Some(&y), noise)? {
            let p = penalty_against(g, &z)?;
            if lambda != 0.0 {
                grad_features.axpy(lambda, &p.grad_features)?;
            }
            reg_value = p.value;
        }
        let mut grads = ModelGrads {
            extractor: model.extractor.backward(&cache, &grad_features)?,
            head: ce.grad_w,
        };
        if let RegState::L2sp { source, head_weight } = &*reg {
            let l2 = l2sp_penalty(&model.extractor, source, &model.head, *head_weight)?;
            if lambda != 0.0 {
                grads.axpy(lambda, &l2.grads)?;
            }
            reg_value = l2.value;
        }
        if ext_scale != 1.0 {
            for l in &mut grads.extractor {
                l.weight = l.weight.scale(ext_scale);
                l.bias.iter_mut().for_each(|b| *b *= ext_scale);
            }
        }
        let weighted = lambda * reg_value;
        if !ce.loss.is_finite() {
            return Err(diverged("classification loss"));
        }
        if !weighted.is_finite() {
            return Err(diverged("regularization loss"));
        }
        model.sgd_step(&grads).map_err(|e| match e {
            CoreError::NonFinite(what) => diverged(&what),
            other => other.into(),
        })?;
        reg.post_step_hook(g, &y)?;
        if let Some(t) = trajectory.as_deref_mut() {
            t.push(flatten(model));
        }
        cls_sum += ce.loss;
        reg_sum += weighted;
        batches += 1;
    }
    let n = batches.max(1) as f64;
    Ok(EpochLoss {
        total: (cls_sum + reg_sum) / n,
        cls: cls_sum / n,
        reg: reg_sum / n,
    })
}

/// Every model parameter in a fixed order.
pub fn flatten(model: &Model) -> Vec<f64> {
    let mut out = Vec::new();
    for l in model.extractor.layers() {
        out.extend_from_slice(l.weight.as_slice());
        out.extend_from_slice(&l.bias);
    }
    out.extend_from_slice(model.head.weights().as_slice());
    out
}

/// Options that do not change the training itself.
#[derive(Clone, Copy, Debug, Default)]
pub struct FinetuneOptions {
    /// Record the parameters after every step.
    pub record_trajectory: bool,
}

pub fn finetune(cfg: &ExperimentConfig, pretrained: &Extractor) -> Result<FinetuneOutcome> {
    finetune_with(cfg, pretrained, FinetuneOptions::default())
}

pub fn finetune_with(cfg: &ExperimentConfig, pretrained: &Extractor, opts: FinetuneOptions) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let splits = prepare_target(&cfg.dataset, cfg.seeds.data)?;
    finetune_on(cfg, pretrained, &splits, opts)
}

/// Fine-tunes `pretrained` on already prepared splits.
pub fn finetune_on(
    cfg: &ExperimentConfig,
    pretrained: &Extractor,
    splits: &Splits,
    opts: FinetuneOptions,
) -> Result<FinetuneOutcome> {
    let Splits { train, val, test } = splits;
    if pretrained.feature_dim() != cfg.feature_dim() {
        return Err(HarnessError::Config(format!(
            "checkpoint feature dim {} does not match model.widths ({})",
            pretrained.feature_dim(),
            cfg.feature_dim()
        )));
    }
    if pretrained.input_dim() != train.dim() {
        return Err(HarnessError::Config(format!(
            "checkpoint input dim {} does not match the data ({})",
            pretrained.input_dim(),
            train.dim()
        )));
    }
    let classes = train.classes;
    let opt = &cfg.optimizer;
    let lambda = cfg.reg.lambda;

    let mut init = RngStream::new(cfg.seeds.init, StreamId::Init);
    let head = Head::init(cfg.feature_dim(), classes, &mut init);
    let mut model = Model::new(pretrained.clone(), head, sgd(opt))?;
    let tagged = TaggedFeatures::extract(pretrained, &train.features)?;
    let mut reg = RegState::build(&cfg.reg, pretrained, &tagged, &train.labels, classes)?;

    let mut shuffle = RngStream::new(cfg.seeds.shuffle, StreamId::Shuffle);
    let mut noise = RngStream::new(cfg.seeds.noise, StreamId::Noise);
    let diag = diagnostics_subset(train, cfg.diagnostics.subset, cfg.seeds.data);
    let estimator = EntropyEstimator {
        cap: cfg.diagnostics.subset,
        seed: cfg.seeds.data,
    };

    let mut rows = Vec::with_capacity(opt.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut trajectory = Vec::new();
    for epoch in 0..opt.epochs {
        let lr = opt.lr_at(epoch);
        model.set_lr(lr);
        let loss = run_epoch(
            &mut model,
            &mut reg,
            lambda,
            train,
            opt.batch_size,
            &mut shuffle,
            &mut noise,
            epoch,
            opts.record_trajectory.then_some(&mut trajectory),
            opt.extractor_lr_scale,
        )?;
        let accuracy = |d: &Dataset| -> Result<f64> {
            let g = model.extractor.extract_features(&d.features)?;
            Ok(model.head.accuracy(&g, &d.labels)?)
        };
        let train_accuracy = accuracy(train)?;
        let val_accuracy = if val.is_empty() { f64::NAN } else { accuracy(val)? };
        let test_accuracy = accuracy(test)?;
        let g = model.extractor.extract_features(&diag.features)?;
        let report = DiagnosticsReport::compute(&g, &diag.labels, classes, Some(&model.head), &estimator)?;
        let l_ada = match &reg {
            RegState::AdaRand(p) => Some(p.ada_loss()),
            _ => None,
        };
        rows.push(MetricsRow {
            epoch,
            lr,
            train_loss: loss.total,
            train_accuracy,
            val_accuracy,
            test_accuracy,
            l_cls: loss.cls,
            l_reg: loss.reg,
            l_ada,
            feature_norm: report.mean_feature_norm,
            entropy: report.entropy,
            cond_entropy: report.cond_entropy,
            mutual_info: report.mutual_info,
            ce_grad_norm: report.mean_ce_grad_norm,
        });
        // Without a validation split every epoch ties and the last one wins.
        let score = if val_accuracy.is_nan() {
            f64::NEG_INFINITY
        } else {
            val_accuracy
        };
        if best.as_ref().is_none_or(|(b, _, _)| score >= *b) {
            best = Some((score, epoch, model.clone()));
        }
    }

    let (best_val, best_epoch, selected) = match best {
        Some((v, e, m)) => (Some(v).filter(|v| v.is_finite()), Some(e), m),
        None => (None, None, model.clone()),
    };
    let test_accuracy = match best_epoch {
        Some(e) => rows[e].test_accuracy,
        None => {
            let g = selected.extractor.extract_features(&test.features)?;
            selected.head.accuracy(&g, &test.labels)?
        }
    };

    let pca_idx = diagnostics_subset_indices(test.len(), cfg.diagnostics.pca_samples, cfg.seeds.data ^ 0x9CA);
    let pca_data = test.subset(&pca_idx);
    let (pca, scatter, explained) = if pca_data.len() >= 2 {
        let g = selected.extractor.extract_features(&pca_data.features)?;
        let p = pca2(&g)?;
        let s = scatter_ratio(&p.projection, &pca_data.labels)?;
        (
            Some((p.projection, pca_data.labels.clone())),
            Some(s),
            Some(p.explained),
        )
    } else {
        (None, None, None)
    };

    let summary = RunSummary {
        kind: cfg.reg.kind.name().to_string(),
        lambda,
        alpha: cfg.reg.alpha,
        fraction: cfg.dataset.fraction,
        train_size: train.len(),
        epochs: opt.epochs,
        best_epoch,
        best_val_accuracy: best_val,
        test_accuracy,
        final_test_accuracy: rows.last().map_or(test_accuracy, |r| r.test_accuracy),
        final_diagnostics: rows.last().map(FinalDiagnostics::from),
        scatter_ratio: scatter.map(|s| s.value),
        scatter_saturated: scatter.is_some_and(|s| s.saturated),
        pca_explained: explained,
    };
    Ok(FinetuneOutcome {
        selected,
        final_state: model,
        rows,
        summary,
        regularizer: reg,
        pca,
        trajectory,
    })
}

/// Fixed per-run sample of at most `cap` rows, reused every epoch.
fn diagnostics_subset(train: &Dataset, cap: usize, seed: u64) -> Dataset {
    train.subset(&diagnostics_subset_indices(train.len(), cap, seed))
}

fn diagnostics_subset_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    // Salted so the subset does not replay the data-sampling stream.
    let mut idx = RngStream::new(seed ^ 0xD1A6_0000_0000_0001, StreamId::Data).sample_indices(n, cap);
    idx.sort_unstable();
    idx
}
