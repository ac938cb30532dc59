#![allow(dead_code)]

use adarand_harness::config::{DataSource, SyntheticSpec};
use adarand_harness::ExperimentConfig;

/// A small synthetic task that trains in well under a second.
pub fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.source = DataSource::SyntheticBlobs(SyntheticSpec {
        input_dim: 6,
        classes: 3,
        samples_per_class: 20,
        test_per_class: 15,
        source_per_class: 40,
        modes_per_class: 1,
        spread: 0.3,
        separation: 2.0,
        rotation: 0.2,
        shift: 0.1,
        source_by_mode: false,
        geometry_seed: 3,
    });
    cfg.model.widths = vec![12, 12, 4];
    cfg.optimizer.epochs = 4;
    cfg.optimizer.milestones = vec![2];
    cfg.pretrain.optimizer.epochs = 5;
    cfg.pretrain.optimizer.milestones = vec![];
    cfg
}

pub fn synthetic(cfg: &mut ExperimentConfig) -> &mut SyntheticSpec {
    match &mut cfg.dataset.source {
        DataSource::SyntheticBlobs(s) => s,
        DataSource::CsvFile(_) => panic!("not synthetic"),
    }
}
