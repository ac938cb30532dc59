//! Seed-averaged comparison of regularizer kinds on one config.
//!
//! `cargo run --release --example compare -- [config.json] [seeds] [kinds]`

use adarand_core::regularizers::RegKind;
use adarand_harness::metrics::joint_standard_error;
use adarand_harness::sweep::{sweep, Axis, AxisValue};
use adarand_harness::ExperimentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first() {
        Some(p) if p != "-" => ExperimentConfig::load(p)?,
        _ => ExperimentConfig::default(),
    };
    let seeds: usize = args.get(1).map_or(Ok(10), |s| s.parse())?;
    let kinds: Vec<AxisValue> = match args.get(2) {
        Some(list) => Axis::Kind.parse_values(list)?,
        None => [RegKind::Ft, RegKind::RandRegStdNormal, RegKind::AdaRand]
            .into_iter()
            .map(AxisValue::Kind)
            .collect(),
    };
    let t = std::time::Instant::now();
    let res = sweep(&cfg, Axis::Kind, &kinds, seeds, None)?;
    println!(
        "{:<14} {:>8} {:>7} {:>9} {:>9} {:>8} {:>8}",
        "kind", "acc", "std", "norm", "entropy", "mi", "scatter"
    );
    for r in &res.rows {
        println!(
            "{:<14} {:>8.4} {:>7.4} {:>9.3} {:>9.3} {:>8.3} {:>8.3}",
            r.value,
            r.test_accuracy_mean,
            r.test_accuracy_std,
            r.feature_norm_mean,
            r.entropy_mean,
            r.mutual_info_mean,
            r.scatter_ratio_mean
        );
    }
    for c in res.cells.iter().filter(|c| c.outcome.is_err()) {
        println!(
            "failed {} seed {}: {:?}",
            c.value,
            c.replicate,
            c.outcome.as_ref().err()
        );
    }
    let acc = |i: usize| -> Vec<f64> {
        res.cells
            .iter()
            .filter(|c| c.value == kinds[i])
            .filter_map(|c| c.outcome.as_ref().ok().map(|s| s.test_accuracy))
            .collect()
    };
    for i in 1..kinds.len() {
        let (a, b) = (&res.rows[i], &res.rows[i - 1]);
        println!(
            "{} - {}: {:+.4} (joint SE {:.4})",
            a.value,
            b.value,
            a.test_accuracy_mean - b.test_accuracy_mean,
            joint_standard_error(&acc(i), &acc(i - 1))
        );
    }
    eprintln!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
