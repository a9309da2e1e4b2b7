use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::numerics::Rng;

use super::optim::TrainSettings;
use super::record::RunRecord;
use super::train::{evaluate_mlm, train_mlm_model, MlmTrainSet};
use super::{prepare_mlm, MlmTaskSpec};

/// The five controlled variants, as config points over the same base.
pub fn ablation_variants(base: &ModelConfig) -> Vec<(&'static str, ModelConfig)> {
    vec![
        (
            "mac",
            ModelConfig {
                variant: Variant::Mac,
                use_memory: true,
                use_persistent: true,
                ..base.clone()
            },
        ),
        (
            "mac-only-attention",
            ModelConfig {
                variant: Variant::Mac,
                use_memory: false,
                use_persistent: false,
                ..base.clone()
            },
        ),
        (
            "mac-without-persistent",
            ModelConfig {
                variant: Variant::Mac,
                use_memory: true,
                use_persistent: false,
                ..base.clone()
            },
        ),
        (
            "mac-without-memory",
            ModelConfig {
                variant: Variant::Mac,
                use_memory: false,
                use_persistent: true,
                ..base.clone()
            },
        ),
        (
            "baseline",
            ModelConfig {
                variant: Variant::Baseline,
                use_memory: false,
                use_persistent: false,
                ..base.clone()
            },
        ),
    ]
}

/// Train and evaluate all five variants under identical data order and
/// masking per seed. One final record per (variant, seed). A failing
/// cell aborts the whole matrix, flagging how much completed.
pub fn run_ablation_matrix(
    base: &ModelConfig,
    settings: &TrainSettings,
    task: &MlmTaskSpec,
    docs: &[String],
    seeds: &[u64],
    config_hash: &str,
) -> Result<Vec<RunRecord>> {
    if seeds.is_empty() {
        return Err(Error::invalid("run_ablation_matrix", "at least one seed required"));
    }
    let mut records = Vec::new();
    for &seed in seeds {
        let data = prepare_mlm(docs, task, seed)?;
        for (label, cfg) in ablation_variants(base) {
            let run = || -> Result<RunRecord> {
                let cfg = ModelConfig {
                    vocab_size: data.vocab_size,
                    seed,
                    ..cfg.clone()
                };
                let mut rng = Rng::new(seed);
                let mut params = ModelParams::init(&cfg, &mut rng)?;
                let losses = train_mlm_model(
                    &cfg,
                    settings,
                    &mut params,
                    MlmTrainSet::Remask {
                        sequences: &data.train_sequences,
                        mask_prob: task.mask_prob,
                    },
                    &mut rng,
                )?;
                let (accuracy, f1) = evaluate_mlm(&cfg, &params, &data.eval)?;
                RunRecord::new("mlm-ablation", label, seed, config_hash, settings.epochs)
                    .with_metric("accuracy", accuracy)?
                    .with_metric("f1", f1)?
                    .with_metric("train_loss", *losses.last().unwrap_or(&f64::NAN))
            };
            match run() {
                Ok(r) => records.push(r),
                Err(e) => {
                    return Err(Error::Data(format!(
                        "ablation matrix aborted at variant '{label}' seed {seed} \
                         after {} completed rows: {e}",
                        records.len()
                    )))
                }
            }
        }
    }
    Ok(records)
}
