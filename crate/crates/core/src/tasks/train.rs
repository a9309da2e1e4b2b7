use rayon::prelude::*;

use crate::error::Result;
use crate::memory::MemoryState;
use crate::model::{
    forward_on_tape, masked_logits_on_tape, mlm_loss_and_grads, MemoryPolicy, ModelConfig,
    ModelParams, ParamNodes, SequenceSource, TrainMode,
};
use crate::numerics::{Rng, Tape};

use super::metrics::{argmax, metrics_from_predictions};
use super::mlm::{mask_tokens, MlmExample};
use super::optim::{mean_grads, SgdMomentum, TrainSettings};

/// What one training epoch sees: a fixed masking (planted tasks), or a
/// fresh random masking of the raw sequences drawn every epoch.
pub enum MlmTrainSet<'a> {
    Fixed(&'a [MlmExample]),
    Remask {
        sequences: &'a [Vec<usize>],
        mask_prob: f64,
    },
}

impl MlmTrainSet<'_> {
    fn len(&self) -> usize {
        match self {
            MlmTrainSet::Fixed(ex) => ex.len(),
            MlmTrainSet::Remask { sequences, .. } => sequences.len(),
        }
    }
}

/// Train with fresh per-sequence memory. Batches run as independent
/// model instances in parallel; their gradients merge in example order,
/// so results do not depend on scheduling.
pub fn train_mlm_model(
    config: &ModelConfig,
    settings: &TrainSettings,
    params: &mut ModelParams,
    data: MlmTrainSet,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut opt = SgdMomentum::new(settings.clone());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(settings.epochs);

    for _ in 0..settings.epochs {
        let remasked: Vec<MlmExample>;
        let examples: &[MlmExample] = match data {
            MlmTrainSet::Fixed(ex) => ex,
            MlmTrainSet::Remask { sequences, mask_prob } => {
                remasked = sequences
                    .iter()
                    .map(|ids| mask_tokens(ids, mask_prob, rng))
                    .collect::<Result<Vec<_>>>()?;
                &remasked
            }
        };
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(settings.batch_size.max(1)) {
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &examples[i];
                    mlm_loss_and_grads(
                        config,
                        params,
                        &ex.input,
                        &ex.positions,
                        &ex.targets,
                        None,
                        TrainMode::TrainAll,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let mut batch_grads = Vec::new();
            for r in results.into_iter().flatten() {
                loss_sum += r.loss;
                loss_count += 1;
                batch_grads.push(r.grads);
            }
            if batch_grads.is_empty() {
                continue;
            }
            let grads = mean_grads(&batch_grads)?;
            let deltas = opt.updates(&grads)?;
            params.visit_mut(|name, m| {
                if let Some(d) = deltas.get(name) {
                    *m = m.add(d).expect("update shapes match");
                }
            });
        }
        epoch_losses.push(if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        });
    }
    Ok(epoch_losses)
}

/// Predictions at the masked positions of one example.
pub fn predict_masked(
    config: &ModelConfig,
    params: &ModelParams,
    example: &MlmExample,
    initial_states: Option<&[MemoryState]>,
) -> Result<(Vec<usize>, Vec<usize>, Vec<MemoryState>)> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::leaf_all(&mut tape, params);
    let pass = forward_on_tape(
        &mut tape,
        &nodes,
        params,
        config,
        SequenceSource::Tokens(&example.input),
        initial_states,
        MemoryPolicy::Online,
    )?;
    let final_states = pass.final_states.clone();
    let picked = masked_logits_on_tape(&mut tape, &pass, nodes.output, &example.positions, &example.targets)?;
    match picked {
        Some((logits, kept_targets)) => {
            let v = tape.value(logits);
            let preds = (0..v.rows()).map(|i| argmax(v.row(i))).collect();
            Ok((preds, kept_targets, final_states))
        }
        None => Ok((Vec::new(), Vec::new(), final_states)),
    }
}

/// Accuracy and macro F1 over all masked positions of an example set,
/// memory reset per sequence. Examples evaluate in parallel and merge in
/// order.
pub fn evaluate_mlm(
    config: &ModelConfig,
    params: &ModelParams,
    examples: &[MlmExample],
) -> Result<(f64, f64)> {
    let per_example: Vec<(Vec<usize>, Vec<usize>)> = examples
        .par_iter()
        .map(|ex| predict_masked(config, params, ex, None).map(|(p, t, _)| (p, t)))
        .collect::<Result<Vec<_>>>()?;
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for (p, t) in per_example {
        preds.extend(p);
        targets.extend(t);
    }
    metrics_from_predictions(&preds, &targets)
}

/// Same scoring, but memory states thread across sequences in order.
/// Returns the carried states for the next pass.
pub fn evaluate_mlm_streaming(
    config: &ModelConfig,
    params: &ModelParams,
    examples: &[MlmExample],
    mut states: Vec<MemoryState>,
) -> Result<(f64, f64, Vec<MemoryState>)> {
    let mut preds = Vec::new();
    let mut targets = Vec::new();
    for ex in examples {
        let (p, t, next) = predict_masked(config, params, ex, Some(&states))?;
        preds.extend(p);
        targets.extend(t);
        states = next;
    }
    let (acc, f1) = metrics_from_predictions(&preds, &targets)?;
    Ok((acc, f1, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::tasks::corpus::RESERVED_TOKENS;
    use crate::tasks::mlm::mask_tokens;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            variant: Variant::Mac,
            chunk_size: 4,
            n_persistent: 2,
            model_dim: 8,
            memory_dim: 8,
            heads: 2,
            layers: 1,
            vocab_size: RESERVED_TOKENS + 5,
            seed: 1,
            ..ModelConfig::default()
        }
    }

    fn examples(rng: &mut Rng, count: usize, vocab: usize) -> Vec<MlmExample> {
        (0..count)
            .map(|_| {
                let ids: Vec<usize> = (0..8).map(|_| RESERVED_TOKENS + rng.below(vocab)).collect();
                mask_tokens(&ids, 0.2, rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_on_a_memorizable_set() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(&cfg, &mut Rng::new(cfg.seed)).unwrap();
        let mut rng = Rng::new(2);
        let train = examples(&mut rng, 12, 5);
        let settings = TrainSettings {
            epochs: 8,
            batch_size: 4,
            warmup_steps: 4,
            learning_rate: 0.02,
            ..TrainSettings::default()
        };
        let losses =
            train_mlm_model(&cfg, &settings, &mut params, MlmTrainSet::Fixed(&train), &mut Rng::new(3)).unwrap();
        assert!(
            losses.last().unwrap() < &(losses[0] * 0.9),
            "losses {losses:?} did not drop"
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_parallel_merge_is_ordered() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(cfg.seed)).unwrap();
        let mut rng = Rng::new(5);
        let evals = examples(&mut rng, 10, 5);
        let a = evaluate_mlm(&cfg, &params, &evals).unwrap();
        let b = evaluate_mlm(&cfg, &params, &evals).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn streaming_eval_threads_memory() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(cfg.seed)).unwrap();
        let mut rng = Rng::new(6);
        let evals = examples(&mut rng, 4, 5);
        let states = params.fresh_states().unwrap();
        let (_, _, carried) = evaluate_mlm_streaming(&cfg, &params, &evals, states).unwrap();
        // 4 sequences x 2 chunks each
        assert_eq!(carried[0].update_count(), 8);
    }
}
