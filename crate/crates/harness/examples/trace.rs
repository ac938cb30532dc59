//! Per-epoch trace of one fine-tuning run.
//!
//! `cargo run --release --example trace -- [config.json|-] [kind] [seed]`

use adarand_harness::train::{finetune, pretrain};
use adarand_harness::ExperimentConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.first() {
        Some(p) if p != "-" => ExperimentConfig::load(p)?,
        _ => ExperimentConfig::default(),
    };
    if let Some(k) = args.get(1) {
        cfg.reg.kind = k.parse()?;
    }
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;
    cfg.seeds = cfg.seeds.offset(seed);
    let pre = pretrain(&cfg)?;
    println!("source accuracy {:?}", pre.final_train_accuracy());
    let splits = adarand_harness::data::prepare_target(&cfg.dataset, cfg.seeds.data)?;
    let g = pre.extractor.extract_features(&splits.train.features)?;
    let norms = g.row_norms_sq();
    println!(
        "pretrained target feature norm {:.3}, input norm {:.3}",
        norms.iter().sum::<f64>() / norms.len() as f64,
        splits.train.features.row_norms_sq().iter().sum::<f64>() / norms.len() as f64
    );
    let run = finetune(&cfg, &pre.extractor)?;
    println!("epoch  train   val    test   l_cls   l_reg    norm     H      MI");
    for r in &run.rows {
        println!(
            "{:>5} {:.3} {:.3} {:.3} {:>7.4} {:>7.3} {:>8.3} {:>7.2} {:>6.2}",
            r.epoch,
            r.train_accuracy,
            r.val_accuracy,
            r.test_accuracy,
            r.l_cls,
            r.l_reg,
            r.feature_norm,
            r.entropy,
            r.mutual_info
        );
    }
    println!(
        "selected epoch {:?} test {:.4}",
        run.summary.best_epoch, run.summary.test_accuracy
    );
    Ok(())
}
