use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::record::RunRecord;

/// Write `metrics.jsonl` (one record per line) and `metrics.csv`
/// (columns: task, variant, seed, epoch, then metric names
/// alphabetically; absent metrics leave the cell empty). Identical
/// records produce byte-identical files.
pub fn emit_metrics(records: &[RunRecord], dir: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid("emit_metrics", "no records to emit"));
    }
    std::fs::create_dir_all(dir)?;

    let mut jsonl = String::new();
    for r in records {
        jsonl.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Data(format!("jsonl encode: {e}")))?,
        );
        jsonl.push('\n');
    }
    std::fs::write(dir.join("metrics.jsonl"), jsonl)?;

    let metric_names: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.metrics.keys().map(|s| s.as_str()))
        .collect();
    let mut writer = csv::Writer::from_path(dir.join("metrics.csv"))
        .map_err(|e| Error::Data(format!("csv open: {e}")))?;
    let mut header = vec!["task".to_string(), "variant".into(), "seed".into(), "epoch".into()];
    header.extend(metric_names.iter().map(|s| s.to_string()));
    writer
        .write_record(&header)
        .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    for r in records {
        let mut row = vec![r.task.clone(), r.variant.clone(), r.seed.to_string(), r.epoch.to_string()];
        for name in &metric_names {
            row.push(match r.metrics.get(*name) {
                Some(v) => format!("{v}"),
                None => String::new(),
            });
        }
        writer
            .write_record(&row)
            .map_err(|e| Error::Data(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Data(format!("csv flush: {e}")))?;
    Ok(())
}
