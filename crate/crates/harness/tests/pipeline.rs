mod common;

use adarand_core::model::HeadMatrix;
use adarand_core::regularizers::RegKind;
use adarand_core::{Extractor, Matrix, RngStream, StreamId};
use adarand_harness::config::SyntheticSpec;
use adarand_harness::data::{generate_synthetic, prepare_target, source_task, Dataset};
use adarand_harness::metrics::{mean_std, read_metrics_csv, read_summary};
use adarand_harness::run::{
    write_finetune, write_pretrain, CHECKPOINT_FILE, METRICS_FILE, MODEL_FILE, PRIOR_FILE, SUMMARY_FILE,
};
use adarand_harness::sweep::{cell_dir, sweep, Axis, AxisValue};
use adarand_harness::train::{finetune, finetune_with, pretrain, FinetuneOptions};
use adarand_harness::ExperimentConfig;
use common::{synthetic, tiny};
use std::fs;

fn trajectory(cfg: &ExperimentConfig, ex: &Extractor) -> Vec<Vec<f64>> {
    finetune_with(
        cfg,
        ex,
        FinetuneOptions {
            record_trajectory: true,
        },
    )
    .unwrap()
    .trajectory
}

fn bits(t: &[Vec<f64>]) -> Vec<Vec<u64>> {
    t.iter().map(|s| s.iter().map(|v| v.to_bits()).collect()).collect()
}

#[test]
fn repeated_runs_write_identical_files() {
    let mut cfg = tiny();
    cfg.reg.kind = RegKind::AdaRand;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let pre = pretrain(&cfg).unwrap();
        write_pretrain(d.path(), &cfg, &pre).unwrap();
        let run = finetune(&cfg, &pre.extractor).unwrap();
        write_finetune(d.path(), &cfg, &run).unwrap();
    }
    for f in [METRICS_FILE, SUMMARY_FILE, CHECKPOINT_FILE, MODEL_FILE, PRIOR_FILE] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn zero_lambda_adarand_follows_fine_tuning_exactly() {
    let cfg = tiny();
    let ex = pretrain(&cfg).unwrap().extractor;
    let ft = trajectory(&cfg, &ex);
    let mut ada = cfg.clone();
    ada.reg.kind = RegKind::AdaRand;
    ada.reg.lambda = 0.0;
    let t = trajectory(&ada, &ex);
    assert!(!ft.is_empty());
    assert_eq!(bits(&ft), bits(&t));
}

#[test]
fn frozen_adarand_equals_fixed_conditional_prior() {
    let cfg = tiny();
    let ex = pretrain(&cfg).unwrap().extractor;
    let mut cp = cfg.clone();
    cp.reg.kind = RegKind::RandRegCp;
    let mut ada = cfg.clone();
    ada.reg.kind = RegKind::AdaRand;
    ada.reg.alpha = 1.0;
    ada.reg.xi = 0.0;
    assert_eq!(bits(&trajectory(&cp, &ex)), bits(&trajectory(&ada, &ex)));
}

#[test]
fn noise_seed_does_not_touch_fine_tuning() {
    let cfg = tiny();
    let ex = pretrain(&cfg).unwrap().extractor;
    let mut other = cfg.clone();
    other.seeds.noise = 12345;
    assert_eq!(bits(&trajectory(&cfg, &ex)), bits(&trajectory(&other, &ex)));
    // while it does change a random regularizer
    let mut rn = cfg.clone();
    rn.reg.kind = RegKind::RandRegStdNormal;
    let mut rn2 = rn.clone();
    rn2.seeds.noise = 12345;
    assert_ne!(bits(&trajectory(&rn, &ex)), bits(&trajectory(&rn2, &ex)));
}

#[test]
fn one_row_per_epoch_and_reported_accuracy_is_the_selected_epoch() {
    let mut cfg = tiny();
    cfg.reg.kind = RegKind::AdaRand;
    let ex = pretrain(&cfg).unwrap().extractor;
    let run = finetune(&cfg, &ex).unwrap();
    assert_eq!(run.rows.len(), cfg.optimizer.epochs);
    let best = run.summary.best_epoch.unwrap();
    let max_val = run.rows.iter().map(|r| r.val_accuracy).fold(f64::MIN, f64::max);
    assert_eq!(run.rows[best].val_accuracy, max_val);
    assert!(run.rows[best + 1..].iter().all(|r| r.val_accuracy < max_val));
    assert_eq!(run.summary.test_accuracy, run.rows[best].test_accuracy);
    for r in &run.rows {
        for a in [r.train_accuracy, r.val_accuracy, r.test_accuracy] {
            assert!((0.0..=1.0).contains(&a));
        }
        assert!(r.l_ada.is_some());
        assert_eq!(r.mutual_info, r.entropy - r.cond_entropy);
    }
    let ft = finetune(&tiny(), &ex).unwrap();
    assert!(ft.rows.iter().all(|r| r.l_ada.is_none()));
}

#[test]
fn synthetic_data_is_deterministic() {
    let cfg = tiny();
    let a = prepare_target(&cfg.dataset, 4).unwrap();
    let b = prepare_target(&cfg.dataset, 4).unwrap();
    assert_eq!(a.train.features, b.train.features);
    assert_eq!(a.test.labels, b.test.labels);
    let c = prepare_target(&cfg.dataset, 5).unwrap();
    assert_ne!(a.train.features, c.train.features);
}

#[test]
fn nine_to_one_split_is_stratified() {
    let cfg = tiny();
    let s = generate_synthetic(&cfg.dataset, &mut RngStream::new(0, StreamId::Data)).unwrap();
    assert_eq!(s.train.len() + s.val.len(), 60);
    assert_eq!(s.val.len(), 6);
    assert_eq!(s.val.class_counts(), vec![2, 2, 2]);
    assert_eq!(s.test.len(), 45);
}

#[test]
fn half_fraction_keeps_floor_half_and_the_test_set() {
    let mut cfg = tiny();
    let full = prepare_target(&cfg.dataset, 1).unwrap();
    cfg.dataset.fraction = 0.5;
    let half = prepare_target(&cfg.dataset, 1).unwrap();
    assert_eq!(half.train.len(), full.train.len() / 2);
    assert_eq!(half.test.features, full.test.features);
    assert_eq!(half.test.labels, full.test.labels);
    assert_eq!(half.val.labels, full.val.labels);
    assert!(half.train.class_counts().iter().all(|&c| c >= 1));
}

#[test]
fn degenerate_spread_is_rejected() {
    let mut cfg = tiny();
    synthetic(&mut cfg).spread = 0.0;
    assert!(prepare_target(&cfg.dataset, 0).is_err());
    assert!(cfg.validate().is_err());
}

#[test]
fn zero_epoch_pretraining_returns_the_initialization() {
    let mut cfg = tiny();
    cfg.pretrain.optimizer.epochs = 0;
    let ex = pretrain(&cfg).unwrap().extractor;
    let init = Extractor::init(&[6, 12, 12, 4], &mut RngStream::new(cfg.seeds.init, StreamId::Init)).unwrap();
    assert_eq!(ex, init);
}

#[test]
fn pretraining_fits_the_source_task() {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds.init = 1;
    let out = pretrain(&cfg).unwrap();
    let acc = out.final_train_accuracy().unwrap();
    assert!(acc >= 0.95, "source-train accuracy {acc}");
}

/// Softmax regression with a bias column, trained by full-batch gradient descent.
fn logistic_probe(train: &Dataset, test: &Dataset) -> f64 {
    let with_bias = |d: &Dataset| {
        Matrix::from_fn(
            d.len(),
            d.dim() + 1,
            |i, j| if j < d.dim() { d.features[(i, j)] } else { 1.0 },
        )
    };
    let (xtr, xte) = (with_bias(train), with_bias(test));
    let mut w = Matrix::zeros(xtr.cols(), train.classes);
    for _ in 0..500 {
        let head = HeadMatrix::new(w.clone()).unwrap();
        let ce = adarand_core::model::ce_loss(&head, &xtr, &train.labels).unwrap();
        w.axpy(-0.5, &ce.grad_w).unwrap();
    }
    HeadMatrix::new(w).unwrap().accuracy(&xte, &test.labels).unwrap()
}

#[test]
fn well_separated_blobs_are_linearly_separable() {
    let spec = SyntheticSpec {
        spread: 0.05,
        separation: 5.0,
        ..SyntheticSpec::default()
    };
    let mut cfg = tiny();
    cfg.dataset.source = adarand_harness::config::DataSource::SyntheticBlobs(spec.clone());
    let s = prepare_target(&cfg.dataset, 0).unwrap();
    let acc = logistic_probe(&s.train, &s.test);
    assert!(acc >= 0.99, "probe accuracy {acc}");
    // the source task labels either every mode or every class
    assert_eq!(source_task(&spec).unwrap().classes, spec.classes * spec.modes_per_class);
    let by_class = SyntheticSpec {
        source_by_mode: false,
        ..spec
    };
    assert_eq!(source_task(&by_class).unwrap().classes, by_class.classes);
}

#[test]
fn sweep_summary_matches_per_run_files() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let values = Axis::Lambda.parse_values("0,1").unwrap();
    let res = sweep(&cfg, Axis::Lambda, &values, 3, Some(dir.path())).unwrap();
    assert!(res.cells.iter().all(|c| c.outcome.is_ok()));
    for &v in &values {
        let accs: Vec<f64> = (0..3)
            .map(|r| {
                read_summary(cell_dir(dir.path(), v, r).join(SUMMARY_FILE))
                    .unwrap()
                    .test_accuracy
            })
            .collect();
        let (m, s) = mean_std(&accs);
        let row = res.row(&v.to_string()).unwrap();
        assert_eq!((row.test_accuracy_mean, row.test_accuracy_std), (m, s));
        assert_eq!(row.runs, 3);
        let rows = read_metrics_csv(cell_dir(dir.path(), v, 0).join(METRICS_FILE)).unwrap();
        assert_eq!(rows.len(), cfg.optimizer.epochs);
    }
    let text = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(!text.contains('\r'));
}

#[test]
fn zero_lambda_cell_equals_the_fine_tuning_cell() {
    let mut cfg = tiny();
    cfg.reg.kind = RegKind::RandRegStdNormal;
    let lam = sweep(&cfg, Axis::Lambda, &[AxisValue::Number(0.0)], 2, None).unwrap();
    let kind = sweep(&cfg, Axis::Kind, &[AxisValue::Kind(RegKind::Ft)], 2, None).unwrap();
    for (a, b) in lam.cells.iter().zip(&kind.cells) {
        let (a, b) = (a.outcome.as_ref().unwrap(), b.outcome.as_ref().unwrap());
        assert_eq!(a.test_accuracy, b.test_accuracy);
        assert_eq!(a.final_diagnostics, b.final_diagnostics);
    }
}

#[test]
fn failing_cells_are_recorded_and_the_rest_complete() {
    let cfg = tiny();
    let mut hot = cfg.clone();
    hot.reg.kind = RegKind::Fnp;
    let values = [AxisValue::Number(0.0), AxisValue::Number(1e300)];
    let res = sweep(&hot, Axis::Lambda, &values, 1, None).unwrap();
    assert!(res.cells[0].outcome.is_ok());
    let err = res.cells[1].outcome.as_ref().unwrap_err();
    assert!(err.contains("diverged"), "{err}");
    assert_eq!(res.rows[1].failures, 1);
}

#[test]
fn conditional_kinds_need_every_class_in_training() {
    let mut cfg = tiny();
    cfg.reg.kind = RegKind::AdaRand;
    // 54 training samples: 5% keeps two, so one class is necessarily absent
    cfg.dataset.fraction = 0.05;
    let ex = pretrain(&cfg).unwrap().extractor;
    let err = finetune(&cfg, &ex).unwrap_err();
    assert!(err.to_string().contains("classes without samples"), "{err}");
    // 12% keeps six, two per class
    cfg.dataset.fraction = 0.12;
    if let Err(e) = finetune(&cfg, &ex) {
        panic!("{e}");
    }
    let mut wrong = cfg.clone();
    wrong.model.widths = vec![12, 5];
    assert!(finetune(&wrong, &ex).is_err());
}
