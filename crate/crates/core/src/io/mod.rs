//! Reproducibility shell: config files with typo-safe overrides, the
//! binary checkpoint container, and metrics emission as JSONL and CSV.

mod checkpoint;
mod config_file;
mod metrics_out;

pub use checkpoint::Checkpoint;
pub use config_file::{DataConfig, ExperimentConfig, RunConfig, SplitMode};
pub use metrics_out::emit_metrics;
