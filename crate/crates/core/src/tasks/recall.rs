use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, Variant};
use crate::numerics::Rng;

use super::corpus::{MASK_ID, RESERVED_TOKENS};
use super::mlm::MlmExample;
use super::optim::TrainSettings;
use super::record::RunRecord;
use super::train::{evaluate_mlm, train_mlm_model, MlmTrainSet};

/// Parameters of the synthetic cross-chunk recall task.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecallSpec {
    /// Content vocabulary size; reserved ids come on top.
    pub vocab: usize,
    pub seq_len: usize,
    pub chunk_size: usize,
    pub train_examples: usize,
    pub test_examples: usize,
}

impl Default for RecallSpec {
    fn default() -> Self {
        RecallSpec {
            vocab: 16,
            seq_len: 64,
            chunk_size: 16,
            train_examples: 2000,
            test_examples: 500,
        }
    }
}

/// Each sequence plants a (key, value) token pair inside chunk 1 and a
/// masked probe of that key in a strictly later chunk; answering the
/// probe requires transporting the binding across the chunk boundary.
/// The key token appears nowhere else, so the probe chunk alone carries
/// no information about the value and a memoryless guesser sits at
/// 1/vocab.
pub fn synthetic_recall_task(
    vocab: usize,
    seq_len: usize,
    chunk_size: usize,
    count: usize,
    rng: &mut Rng,
) -> Result<Vec<MlmExample>> {
    if vocab < 2 {
        return Err(Error::invalid("synthetic_recall_task", "vocab must be at least 2"));
    }
    if seq_len < 2 * chunk_size || chunk_size < 2 {
        return Err(Error::invalid(
            "synthetic_recall_task",
            format!("need seq_len >= 2 * chunk_size and chunk_size >= 2, got {seq_len} and {chunk_size}"),
        ));
    }
    let n_chunks = seq_len / chunk_size;
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let key = RESERVED_TOKENS + rng.below(vocab);
        let value = RESERVED_TOKENS + rng.below(vocab);
        // fillers never collide with the key, so the planted binding is
        // unambiguous
        let mut filler = || {
            loop {
                let t = RESERVED_TOKENS + rng.below(vocab);
                if t != key {
                    return t;
                }
            }
        };
        let mut input: Vec<usize> = (0..seq_len).map(|_| filler()).collect();

        let key_pos = rng.below(chunk_size - 1);
        input[key_pos] = key;
        input[key_pos + 1] = value;

        let probe_chunk = 1 + rng.below(n_chunks - 1);
        let probe_pos = probe_chunk * chunk_size + rng.below(chunk_size - 1);
        input[probe_pos] = key;
        input[probe_pos + 1] = MASK_ID;

        examples.push(MlmExample {
            input,
            targets: vec![value],
            positions: vec![probe_pos + 1],
        });
    }
    Ok(examples)
}

/// Train and evaluate the full memory model and the attention-only
/// ablation on the recall task. One record per variant and seed.
pub fn run_recall(
    base: &ModelConfig,
    settings: &TrainSettings,
    spec: &RecallSpec,
    seeds: &[u64],
    config_hash: &str,
) -> Result<Vec<RunRecord>> {
    if seeds.is_empty() {
        return Err(Error::invalid("run_recall", "at least one seed required"));
    }
    let mut records = Vec::new();
    for &seed in seeds {
        let mut rng = Rng::new(seed);
        let train = synthetic_recall_task(
            spec.vocab,
            spec.seq_len,
            spec.chunk_size,
            spec.train_examples,
            &mut rng,
        )?;
        let test = synthetic_recall_task(
            spec.vocab,
            spec.seq_len,
            spec.chunk_size,
            spec.test_examples,
            &mut rng,
        )?;
        for (label, use_memory, use_persistent) in
            [("mac", true, true), ("mac-only-attention", false, false)]
        {
            let cfg = ModelConfig {
                variant: Variant::Mac,
                chunk_size: spec.chunk_size,
                use_memory,
                use_persistent,
                vocab_size: RESERVED_TOKENS + spec.vocab,
                seed,
                ..base.clone()
            };
            let mut train_rng = Rng::new(seed);
            let mut params = ModelParams::init(&cfg, &mut train_rng)?;
            let losses = train_mlm_model(&cfg, settings, &mut params, MlmTrainSet::Fixed(&train), &mut train_rng)?;
            let (accuracy, f1) = evaluate_mlm(&cfg, &params, &test)?;
            records.push(
                RunRecord::new("recall", label, seed, config_hash, settings.epochs)
                    .with_metric("accuracy", accuracy)?
                    .with_metric("f1", f1)?
                    .with_metric("train_loss", *losses.last().unwrap_or(&f64::NAN))?,
            );
        }
    }
    Ok(records)
}
