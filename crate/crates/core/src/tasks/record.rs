use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric names a RunRecord may carry. Keeping the registry closed means
/// CSV columns stay stable across the whole harness.
pub const METRIC_REGISTRY: &[&str] = &[
    "accuracy",
    "f1",
    "train_loss",
    "mse",
    "mae",
    "naive_mse",
    "naive_mae",
    "pass",
    "single_chunk",
    "sequence_length",
    "chunk_size",
    "masked_positions",
];

/// One row of experiment output: a (task, variant, seed, epoch) cell and
/// its metric values. Wall-clock time is kept for console reporting but
/// never serialized, so emitted metrics files are bit-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn new(task: &str, variant: &str, seed: u64, config_hash: &str, epoch: usize) -> RunRecord {
        RunRecord {
            task: task.to_string(),
            variant: variant.to_string(),
            seed,
            config_hash: config_hash.to_string(),
            epoch,
            metrics: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn with_metric(mut self, name: &str, value: f64) -> Result<RunRecord> {
        if !METRIC_REGISTRY.contains(&name) {
            return Err(Error::invalid(
                "run_record",
                format!("metric {name} is not in the registry"),
            ));
        }
        self.metrics.insert(name.to_string(), value);
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rejects_unknown_metric() {
        let r = RunRecord::new("mlm", "mac", 1, "abc", 0);
        assert!(r.clone().with_metric("accuracy", 0.5).is_ok());
        assert!(r.with_metric("acuracy", 0.5).is_err());
    }

    #[test]
    fn wall_clock_not_serialized() {
        let mut r = RunRecord::new("mlm", "mac", 1, "abc", 0);
        r.wall_clock_secs = 123.0;
        let json = serde_json::to_string(&r).unwrap();
        assert!(!json.contains("wall_clock"));
    }
}
