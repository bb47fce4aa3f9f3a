//! Shared setup for the benchmarks under `benches/`.

use focal_core::config::ModelConfig;
use focal_core::corpus::Example;
use focal_core::encoders::Vocab;
use focal_core::model::{FocalModel, PreparedExample};
use focal_core::synthetic::fact_matching_dataset;

/// A dropout-free model of width `d` and `n` prepared synthetic examples.
pub fn workload(d: usize, n: usize) -> (FocalModel, Vec<Example>, Vec<PreparedExample>) {
    let examples = fact_matching_dataset(n, 5);
    let config = ModelConfig {
        d,
        max_seq_len: 32,
        dropout: 0.0,
        ..ModelConfig::default()
    };
    let model = FocalModel::new(config, Vocab::build(&examples)).expect("valid config");
    let prepared = examples
        .iter()
        .map(|e| model.prepare(e, None).expect("synthetic example prepares"))
        .collect();
    (model, examples, prepared)
}
