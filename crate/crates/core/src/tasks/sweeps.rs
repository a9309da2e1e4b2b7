use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::numerics::Rng;

use super::optim::TrainSettings;
use super::record::RunRecord;
use super::train::{evaluate_mlm, train_mlm_model, MlmTrainSet};
use super::{prepare_mlm, MlmTaskSpec};

/// Sequence-length and chunk-size sweeps. The length sweep holds the
/// base chunk size and runs both the memory model and the plain
/// baseline per length; the chunk sweep holds the base sequence length
/// and varies chunk width on the memory model. One final-epoch record
/// per cell and seed. A chunk wider than the sequence degenerates to a
/// single chunk and is flagged, not rejected.
pub fn run_sweeps(
    base: &ModelConfig,
    settings: &TrainSettings,
    task: &MlmTaskSpec,
    docs: &[String],
    lengths: &[usize],
    chunk_sizes: &[usize],
    seeds: &[u64],
    config_hash: &str,
) -> Result<Vec<RunRecord>> {
    if lengths.is_empty() && chunk_sizes.is_empty() {
        return Err(Error::invalid("run_sweeps", "no lengths or chunk sizes to sweep"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("run_sweeps", "at least one seed required"));
    }
    let mut records = Vec::new();

    for &len in lengths {
        for &seed in seeds {
            let spec = MlmTaskSpec {
                sequence_length: len,
                ..task.clone()
            };
            let data = prepare_mlm(docs, &spec, seed)?;
            for variant in [Variant::Mac, Variant::Baseline] {
                let label = match variant {
                    Variant::Mac => "mac",
                    _ => "baseline",
                };
                let cfg = ModelConfig {
                    variant,
                    use_memory: variant == Variant::Mac,
                    use_persistent: variant == Variant::Mac,
                    vocab_size: data.vocab_size,
                    seed,
                    ..base.clone()
                };
                let record = run_cell("mlm-length-sweep", label, &cfg, settings, &data, task.mask_prob, seed, config_hash)?
                    .with_metric("sequence_length", len as f64)?
                    .with_metric("chunk_size", base.chunk_size as f64)?;
                records.push(record);
            }
        }
    }

    for &w in chunk_sizes {
        for &seed in seeds {
            let data = prepare_mlm(docs, task, seed)?;
            let cfg = ModelConfig {
                variant: Variant::Mac,
                chunk_size: w,
                vocab_size: data.vocab_size,
                seed,
                ..base.clone()
            };
            let mut record = run_cell("mlm-chunk-sweep", "mac", &cfg, settings, &data, task.mask_prob, seed, config_hash)?
                .with_metric("sequence_length", task.sequence_length as f64)?
                .with_metric("chunk_size", w as f64)?;
            if w >= task.sequence_length {
                record = record.with_metric("single_chunk", 1.0)?;
            }
            records.push(record);
        }
    }
    Ok(records)
}

fn run_cell(
    task_name: &str,
    label: &str,
    cfg: &ModelConfig,
    settings: &TrainSettings,
    data: &super::PreparedMlm,
    mask_prob: f64,
    seed: u64,
    config_hash: &str,
) -> Result<RunRecord> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::init(cfg, &mut rng)?;
    let losses = train_mlm_model(
        cfg,
        settings,
        &mut params,
        MlmTrainSet::Remask {
            sequences: &data.train_sequences,
            mask_prob,
        },
        &mut rng,
    )?;
    let (accuracy, f1) = evaluate_mlm(cfg, &params, &data.eval)?;
    RunRecord::new(task_name, label, seed, config_hash, settings.epochs)
        .with_metric("accuracy", accuracy)?
        .with_metric("f1", f1)?
        .with_metric("train_loss", *losses.last().unwrap_or(&f64::NAN))
}
