use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub loss: f64,
    pub l_ans: f64,
    pub l_lfr: f64,
    pub dev_acc: Option<f64>,
}

pub fn metrics_to_jsonl(records: &[EpochMetrics]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("metrics serialize") + "\n")
        .collect()
}

pub fn write_metrics(path: impl AsRef<Path>, records: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(metrics_to_jsonl(records).as_bytes())
        .map_err(|e| Error::io(path, e))
}
