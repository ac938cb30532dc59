//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

// `!(a < b)` is deliberate: a NaN measurement must fail its check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use adarand_core::diagnostics::{ce_grad_norm, entropy_estimate};
use adarand_core::model::{ce_loss, DenseLayer, HeadMatrix};
use adarand_core::numerics::{finite_diff_grad, relative_error, standard_normal_sample};
use adarand_core::priors::{ConditionalPrior, Distance};
use adarand_core::regularizers::{l2sp_penalty, penalty_against, RegKind, RegSpec, RegState, TaggedFeatures};
use adarand_core::{Extractor, Matrix, RngStream, StreamId};
use adarand_harness::metrics::{joint_standard_error, mean_std, RunSummary};
use adarand_harness::run::{write_finetune, METRICS_FILE, SUMMARY_FILE};
use adarand_harness::sweep::{sweep, Axis, AxisValue, SweepResult};
use adarand_harness::train::{finetune, finetune_with, pretrain, FinetuneOptions};
use adarand_harness::ExperimentConfig;
use std::process::ExitCode;
use std::time::Instant;

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn normal(rng: &mut RngStream, r: usize, c: usize) -> Matrix {
    standard_normal_sample(rng, r, c)
}

fn within(what: &str, analytic: &Matrix, fd: &Matrix) -> Result<(), String> {
    let err = relative_error(analytic.as_slice(), fd.as_slice(), 1e-8);
    ensure!(err < 1e-4, "{what}: relative error {err:e}");
    Ok(())
}

fn flat(layers: &[DenseLayer<f64>]) -> Matrix {
    let v: Vec<f64> = layers
        .iter()
        .flat_map(|l| l.weight.as_slice().iter().chain(&l.bias).copied())
        .collect();
    Matrix::new(1, v.len(), v).unwrap()
}

/// Central differences over every extractor parameter, flattened like [`flat`].
fn extractor_fd(ex: &Extractor, loss: impl Fn(&Extractor) -> f64) -> Matrix {
    let h = 1e-6;
    let mut layers = ex.layers().to_vec();
    let mut out = Vec::new();
    for i in 0..layers.len() {
        let n = layers[i].weight.as_slice().len() + layers[i].bias.len();
        for p in 0..n {
            let at = |delta: f64| {
                let mut ls = layers.clone();
                let nw = ls[i].weight.as_slice().len();
                if p < nw {
                    let (r, c) = (p / ls[i].weight.cols(), p % ls[i].weight.cols());
                    ls[i].weight[(r, c)] += delta;
                } else {
                    ls[i].bias[p - nw] += delta;
                }
                loss(&Extractor::new(ls).unwrap())
            };
            out.push((at(h) - at(-h)) / (2.0 * h));
        }
        layers = ex.layers().to_vec();
    }
    Matrix::new(1, out.len(), out).unwrap()
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let h = 1e-6;
    for seed in 0..20u64 {
        let mut rng = RngStream::new(seed, StreamId::Data);
        let d = 2 + rng.below(9) as usize;
        let k = 2 + rng.below(4) as usize;
        let b = 1 + rng.below(6) as usize;
        let m = 2 + rng.below(5) as usize;
        let y: Vec<usize> = (0..b).map(|_| rng.below(k as u64) as usize).collect();
        let w = normal(&mut rng, d, k);
        let g = normal(&mut rng, b, d);
        let z = normal(&mut rng, b, d);
        let head = HeadMatrix::new(w.clone()).unwrap();

        let ce = ce_loss(&head, &g, &y).unwrap();
        let fd = finite_diff_grad(
            |w: &Matrix| ce_loss(&HeadMatrix::new(w.clone()).unwrap(), &g, &y).unwrap().loss,
            &w,
            h,
        )
        .unwrap();
        within("cross-entropy / head", &ce.grad_w, &fd)?;
        let fd = finite_diff_grad(|g: &Matrix| ce_loss(&head, g, &y).unwrap().loss, &g, h).unwrap();
        within("cross-entropy / features", &ce.grad_features, &fd)?;

        let p = penalty_against(&g, &z).unwrap();
        let fd = finite_diff_grad(|g: &Matrix| penalty_against(g, &z).unwrap().value, &g, h).unwrap();
        within("feature penalty", &p.grad_features, &fd)?;

        let widths = [m, 2 + rng.below(6) as usize, d];
        let ex = Extractor::init(&widths, &mut rng).unwrap();
        let x = normal(&mut rng, b, m);
        let objective = |e: &Extractor| {
            let g = e.extract_features(&x).unwrap();
            ce_loss(&head, &g, &y).unwrap().loss + penalty_against(&g, &z).unwrap().value
        };
        let cache = ex.forward(&x).unwrap();
        let mut grad_g = ce_loss(&head, cache.features(), &y).unwrap().grad_features;
        grad_g
            .axpy(1.0, &penalty_against(cache.features(), &z).unwrap().grad_features)
            .unwrap();
        within(
            "extractor backprop",
            &flat(&ex.backward(&cache, &grad_g).unwrap()),
            &extractor_fd(&ex, objective),
        )?;

        let source = Extractor::init(&widths, &mut rng).unwrap();
        let l2sp = l2sp_penalty(&ex, &source, &head, 0.5).unwrap();
        let fd = extractor_fd(&ex, |e| l2sp_penalty(e, &source, &head, 0.5).unwrap().value);
        within("L2SP / extractor", &flat(&l2sp.grads.extractor), &fd)?;
        let fd = finite_diff_grad(
            |w: &Matrix| {
                l2sp_penalty(&ex, &source, &HeadMatrix::new(w.clone()).unwrap(), 0.5)
                    .unwrap()
                    .value
            },
            &w,
            h,
        )
        .unwrap();
        within("L2SP / head", &l2sp.grads.head, &fd)?;

        for distance in [Distance::Cosine, Distance::SquaredEuclidean] {
            let mu = normal(&mut rng, k, d);
            let mu_bar = normal(&mut rng, k, d);
            let prior = ConditionalPrior::from_parts(mu.clone(), Matrix::filled(k, d, 0.3), mu_bar, 0.5, 0.1, distance)
                .unwrap();
            let fd = finite_diff_grad(|mu: &Matrix| prior.with_mu(mu.clone()).unwrap().ada_loss(), &mu, h).unwrap();
            within(&format!("prior loss ({distance:?})"), &prior.ada_grad(), &fd)?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s");
    Ok(format!("20 instances per gradient, {secs:.2}s"))
}

fn gradient_norm_identity() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = RngStream::new(seed, StreamId::Noise);
        let d = 1 + rng.below(12) as usize;
        let k = 2 + rng.below(8) as usize;
        let b = 1 + rng.below(10) as usize;
        let head = HeadMatrix::new(normal(&mut rng, d, k)).unwrap();
        let g = normal(&mut rng, b, d);
        let y: Vec<usize> = (0..b).map(|_| rng.below(k as u64) as usize).collect();
        let n = ce_grad_norm(&head, &g, &y).unwrap();
        let rel = (n.direct - n.identity).abs() / n.direct.abs().max(n.identity.abs()).max(1e-300);
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst <= 1e-9, "worst relative gap {worst:e}");
    ensure!(secs < 1.0, "took {secs:.2}s");
    Ok(format!("100 instances, worst relative gap {worst:.1e}"))
}

fn estimator_algebra() -> Check {
    let col = |v: &[f64]| Matrix::new(v.len(), 1, v.to_vec()).unwrap();
    let h01 = entropy_estimate(&col(&[0.0, 1.0])).unwrap();
    ensure!(h01.abs() <= 1e-12, "H({{0,1}}) = {h01}");
    let he = entropy_estimate(&col(&[0.0, std::f64::consts::E.sqrt()])).unwrap();
    ensure!((he - 1.0).abs() <= 1e-12, "H({{0,√e}}) = {he}");
    let x = normal(&mut RngStream::new(1, StreamId::Data), 40, 5);
    let h = entropy_estimate(&x).unwrap();
    for c in [0.5, 2.0, 10.0] {
        let got = entropy_estimate(&x.scale(c)).unwrap();
        let want = h + 5.0 * (c * c).ln();
        ensure!((got - want).abs() <= 1e-9, "dilation by {c}: {got} vs {want}");
    }
    let x = normal(&mut RngStream::new(2, StreamId::Data), 50, 4);
    let mut brute = 0.0;
    for i in 0..50 {
        for j in 0..50 {
            if i != j {
                brute += (0..4).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum::<f64>().ln();
            }
        }
    }
    brute *= 4.0 / (50.0 * 49.0);
    let fast = entropy_estimate(&x).unwrap();
    ensure!(
        (fast - brute).abs() <= 1e-10 * brute.abs().max(1.0),
        "pair loop {brute} vs {fast}"
    );
    Ok("two-point values, dilation law, pair-loop equivalence".into())
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.as_slice().iter().map(|v| v.to_bits()).collect()
}

fn prior_algebra() -> Check {
    let mut rng = RngStream::new(3, StreamId::Data);
    let mk = |rng: &mut RngStream, k, d, alpha, xi| {
        let mu = normal(rng, k, d);
        let s2 = normal(rng, k, d).map(|v| v * v + 0.1);
        let bar = normal(rng, k, d);
        ConditionalPrior::from_parts(mu, s2, bar, alpha, xi, Distance::Cosine).unwrap()
    };
    let batch = normal(&mut rng, 6, 3);
    let labels = [0, 1, 0, 1, 1, 0];
    let mut keep = mk(&mut rng, 2, 3, 1.0, 0.1);
    let before = keep.mu_bar().clone();
    keep.ema_update(&batch, &labels).unwrap();
    ensure!(bits(keep.mu_bar()) == bits(&before), "alpha = 1 moved the running mean");
    let mut replace = mk(&mut rng, 2, 3, 0.0, 0.1);
    replace.ema_update(&batch, &labels).unwrap();
    for k in 0..2 {
        let rows: Vec<usize> = (0..6).filter(|&i| labels[i] == k).collect();
        let mean = batch.select_rows(&rows).column_means();
        let gap = replace
            .mu_bar()
            .row(k)
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure!(gap < 1e-15, "alpha = 0 did not take the batch mean of class {k}");
    }

    let mut p = mk(&mut rng, 4, 5, 0.5, 0.1);
    let before = p.mu_bar().clone();
    p.ema_update(&normal(&mut rng, 3, 5), &[1, 1, 3]).unwrap();
    for k in [0, 2] {
        let a: Vec<u64> = p.mu_bar().row(k).iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = before.row(k).iter().map(|v| v.to_bits()).collect();
        ensure!(a == b, "absent class {k} changed");
    }

    let eye = Matrix::identity(2);
    let orth =
        ConditionalPrior::from_parts(eye.clone(), Matrix::filled(2, 2, 1.0), eye, 0.5, 0.1, Distance::Cosine).unwrap();
    ensure!(
        (orth.inter_loss() + 1.0).abs() < 1e-15,
        "orthogonal inter loss {}",
        orth.inter_loss()
    );

    let g = normal(&mut rng, 40, 6);
    let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let ex = Extractor::new(vec![DenseLayer {
        weight: Matrix::identity(6),
        bias: vec![0.0; 6],
    }])
    .unwrap();
    let tagged = TaggedFeatures::extract(&ex, &g).unwrap();
    let mut state = RegState::build(&RegSpec::new(RegKind::AdaRand), &ex, &tagged, &y, 3).unwrap();
    let sigma = bits(state.prior().unwrap().sigma2());
    for _ in 0..1000 {
        let idx: Vec<usize> = (0..8).map(|_| rng.below(40) as usize).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        state.post_step_hook(&normal(&mut rng, 8, 6), &labels).unwrap();
    }
    ensure!(bits(state.prior().unwrap().sigma2()) == sigma, "variances moved");

    for seed in 0..20u64 {
        let mut r = RngStream::new(100 + seed, StreamId::Init);
        let k = 2 + r.below(6) as usize;
        let d = 2 + r.below(9) as usize;
        let mut p = mk(&mut r, k, d, 0.5, 1e-3);
        let before = p.ada_loss();
        p.adaptive_step().unwrap();
        ensure!(
            p.ada_loss() < before,
            "instance {seed}: loss {} !< {before}",
            p.ada_loss()
        );
    }
    Ok("EMA endpoints, skip rule, orthogonal pair, frozen variances, descent".into())
}

fn with_kind(base: &ExperimentConfig, kind: RegKind) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.reg.kind = kind;
    cfg
}

fn trajectory_bits(cfg: &ExperimentConfig, ex: &Extractor) -> Result<Vec<Vec<u64>>, String> {
    let run = finetune_with(
        cfg,
        ex,
        FinetuneOptions {
            record_trajectory: true,
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(run
        .trajectory
        .iter()
        .map(|s| s.iter().map(|v| v.to_bits()).collect())
        .collect())
}

fn ablations(base: &ExperimentConfig) -> Check {
    let start = Instant::now();
    let ex = pretrain(base).map_err(|e| e.to_string())?.extractor;
    let ft = trajectory_bits(&with_kind(base, RegKind::Ft), &ex)?;
    let mut ada = with_kind(base, RegKind::AdaRand);
    ada.reg.lambda = 0.0;
    ensure!(
        ft == trajectory_bits(&ada, &ex)?,
        "AdaRand with lambda = 0 differs from FT"
    );
    let cp = trajectory_bits(&with_kind(base, RegKind::RandRegCp), &ex)?;
    let mut frozen = with_kind(base, RegKind::AdaRand);
    frozen.reg.alpha = 1.0;
    frozen.reg.xi = 0.0;
    ensure!(
        cp == trajectory_bits(&frozen, &ex)?,
        "AdaRand with alpha = 1, xi = 0 differs from the fixed prior"
    );
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.0}s");
    Ok(format!(
        "{} parameter snapshots each, bit-identical, {secs:.0}s",
        ft.len()
    ))
}

fn summaries(res: &SweepResult, kind: RegKind) -> Result<Vec<&RunSummary>, String> {
    res.cells
        .iter()
        .filter(|c| c.value == AxisValue::Kind(kind))
        .map(|c| {
            c.outcome
                .as_ref()
                .map_err(|e| format!("{kind} replicate {}: {e}", c.replicate))
        })
        .collect()
}

fn accuracies(res: &SweepResult, kind: RegKind) -> Result<Vec<f64>, String> {
    Ok(summaries(res, kind)?.iter().map(|s| s.test_accuracy).collect())
}

fn ordering(res: &SweepResult, secs: f64) -> Check {
    let ft = accuracies(res, RegKind::Ft)?;
    let rn = accuracies(res, RegKind::RandRegStdNormal)?;
    let ada = accuracies(res, RegKind::AdaRand)?;
    let (m_ft, m_rn, m_ada) = (mean_std(&ft).0, mean_std(&rn).0, mean_std(&ada).0);
    let (se_rn_ft, se_ada_rn, se_ada_ft) = (
        joint_standard_error(&rn, &ft),
        joint_standard_error(&ada, &rn),
        joint_standard_error(&ada, &ft),
    );
    let detail = format!(
        "FT {m_ft:.4}, RandReg-N01 {m_rn:.4}, AdaRand {m_ada:.4}; gaps {:.4}/{se_rn_ft:.4}, {:.4}/{se_ada_rn:.4}, {:.4}/{se_ada_ft:.4} (gap/joint SE); {secs:.0}s",
        m_rn - m_ft,
        m_ada - m_rn,
        m_ada - m_ft
    );
    ensure!(
        m_rn - m_ft > se_rn_ft,
        "RandReg-N01 does not beat FT by a joint SE: {detail}"
    );
    ensure!(
        m_ada - m_rn > se_ada_rn,
        "AdaRand does not beat RandReg-N01 by a joint SE: {detail}"
    );
    ensure!(
        m_ada - m_ft > se_ada_ft,
        "AdaRand does not beat FT by a joint SE: {detail}"
    );
    ensure!(m_ada - m_ft >= 0.02, "AdaRand - FT below 2 points: {detail}");
    ensure!(secs < 1200.0, "took {secs:.0}s");
    Ok(detail)
}

fn diag_mean(res: &SweepResult, kind: RegKind, f: fn(&RunSummary) -> Option<f64>) -> Result<f64, String> {
    let v: Vec<f64> = summaries(res, kind)?
        .into_iter()
        .map(|s| f(s).ok_or_else(|| format!("{kind}: missing final diagnostics")))
        .collect::<Result<_, _>>()?;
    Ok(mean_std(&v).0)
}

fn feature_statistics(res: &SweepResult) -> Check {
    let norm = |s: &RunSummary| s.final_diagnostics.as_ref().map(|d| d.feature_norm);
    let ent = |s: &RunSummary| s.final_diagnostics.as_ref().map(|d| d.entropy);
    let mi = |s: &RunSummary| s.final_diagnostics.as_ref().map(|d| d.mutual_info);
    let get = |f| -> Result<[f64; 3], String> {
        Ok([
            diag_mean(res, RegKind::Ft, f)?,
            diag_mean(res, RegKind::RandRegStdNormal, f)?,
            diag_mean(res, RegKind::AdaRand, f)?,
        ])
    };
    let (n, h, i) = (get(norm)?, get(ent)?, get(mi)?);
    let detail = format!(
        "|g|² {:.2}/{:.2}/{:.2}, H {:.1}/{:.1}/{:.1}, I {:.1}/{:.1}/{:.1} (FT/RandReg-N01/AdaRand)",
        n[0], n[1], n[2], h[0], h[1], h[2], i[0], i[1], i[2]
    );
    ensure!(
        n[1] < n[0] && h[1] < h[0],
        "RandReg-N01 does not shrink norm and entropy below FT: {detail}"
    );
    ensure!(
        n[2] > n[1] && h[2] > h[1],
        "AdaRand does not keep norm and entropy above RandReg-N01: {detail}"
    );
    ensure!(
        i[2] > i[1],
        "AdaRand's mutual information does not exceed RandReg-N01's: {detail}"
    );
    Ok(detail)
}

fn scatter(res: &SweepResult) -> Check {
    let f = |s: &RunSummary| s.scatter_ratio.filter(|_| !s.scatter_saturated);
    let (ft, ada) = (diag_mean(res, RegKind::Ft, f)?, diag_mean(res, RegKind::AdaRand, f)?);
    let detail = format!("FT {ft:.3}, AdaRand {ada:.3}");
    ensure!(ada > ft, "AdaRand's classes are not more separated: {detail}");
    Ok(detail)
}

fn fraction_protocol(base: &ExperimentConfig) -> Check {
    let values: Vec<AxisValue> = [0.1, 0.25, 0.5, 1.0].into_iter().map(AxisValue::Number).collect();
    let mut means = Vec::new();
    for kind in [RegKind::Ft, RegKind::AdaRand] {
        let res = sweep(&with_kind(base, kind), Axis::Fraction, &values, 10, None).map_err(|e| e.to_string())?;
        if let Some(c) = res.cells.iter().find(|c| c.outcome.is_err()) {
            return Err(format!(
                "{kind} at fraction {} failed: {:?}",
                c.value,
                c.outcome.as_ref().err()
            ));
        }
        means.push(res.rows.iter().map(|r| r.test_accuracy_mean).collect::<Vec<_>>());
    }
    let (ft, ada) = (&means[0], &means[1]);
    let detail = format!("FT {ft:.4?}, AdaRand {ada:.4?}");
    ensure!(
        ft.windows(2).all(|w| w[1] >= w[0]),
        "FT accuracy decreases with more data: {detail}"
    );
    ensure!(
        ada.iter().zip(ft).all(|(a, f)| a > f),
        "AdaRand does not beat FT at every fraction: {detail}"
    );
    Ok(detail)
}

fn reproducibility(base: &ExperimentConfig) -> Check {
    let mut checked = 0;
    for kind in [RegKind::RandRegStdNormal, RegKind::AdaRand] {
        let mut cfg = with_kind(base, kind);
        cfg.seeds = cfg.seeds.offset(5);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let ex = pretrain(&cfg).map_err(|e| e.to_string())?.extractor;
            let run = finetune(&cfg, &ex).map_err(|e| e.to_string())?;
            write_finetune(d.path(), &cfg, &run).map_err(|e| e.to_string())?;
        }
        for f in [METRICS_FILE, SUMMARY_FILE] {
            let a = std::fs::read(dirs[0].path().join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(f)).unwrap();
            ensure!(a == b, "{kind}: {f} differs between reruns");
            checked += 1;
        }
    }
    Ok(format!("{checked} files byte-identical across reruns"))
}

fn main() -> ExitCode {
    let base = ExperimentConfig::default();
    let mut results: Vec<(usize, &str, Check)> = vec![
        (1, "gradient suite", gradient_suite()),
        (2, "gradient-norm identity", gradient_norm_identity()),
        (3, "entropy estimator algebra", estimator_algebra()),
        (4, "prior algebra", prior_algebra()),
        (5, "ablation equivalences", ablations(&base)),
    ];
    let start = Instant::now();
    let kinds: Vec<AxisValue> = [RegKind::Ft, RegKind::RandRegStdNormal, RegKind::AdaRand]
        .into_iter()
        .map(AxisValue::Kind)
        .collect();
    match sweep(&base, Axis::Kind, &kinds, 10, None) {
        Ok(res) => {
            let secs = start.elapsed().as_secs_f64();
            results.push((6, "accuracy ordering", ordering(&res, secs)));
            results.push((7, "feature statistics ordering", feature_statistics(&res)));
            results.push((8, "class separation", scatter(&res)));
        }
        Err(e) => {
            for (n, name) in [
                (6, "accuracy ordering"),
                (7, "feature statistics ordering"),
                (8, "class separation"),
            ] {
                results.push((n, name, Err(format!("sweep failed: {e}"))));
            }
        }
    }
    results.push((9, "fraction protocol", fraction_protocol(&base)));
    results.push((10, "reproducibility", reproducibility(&base)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("PASS criterion {n:>2} ({name}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n:>2} ({name}): {why}");
            }
        }
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
