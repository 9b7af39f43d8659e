#![allow(dead_code)]

use parkbench_core::corpus::generate_corpus;
use parkbench_core::dataset::FilterTable;
use parkbench_core::scenario::LotConfig;
use parkbench_planner::data::samples_from_records;
use parkbench_planner::train::{prepare, Prepared};
use parkbench_planner::ModelConfig;

/// Prepared windows of a small seeded corpus.
pub fn fixture(cfg: &ModelConfig, scenarios: usize, stride: usize) -> Vec<Prepared> {
    let lot = LotConfig::default();
    let corpus = generate_corpus(5, scenarios, &lot, &FilterTable::default()).unwrap();
    let samples = samples_from_records(&corpus.records, &lot, cfg.horizon, stride).unwrap();
    prepare(samples, cfg).unwrap()
}

pub fn config_for(set: parkbench_planner::Ablation) -> (ModelConfig, parkbench_planner::TrainConfig) {
    let mut m = ModelConfig::default();
    let mut t = parkbench_planner::TrainConfig::default();
    set.apply(&mut m, &mut t);
    (m, t)
}
