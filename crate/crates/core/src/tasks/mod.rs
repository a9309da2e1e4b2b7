//! Experiment harness: toy masked language modeling with the ablation
//! matrix, chunk/length sweeps, series forecasting, test-time learning
//! and the synthetic cross-chunk recall task.

pub mod ablation;
pub mod corpus;
pub mod forecast;
pub mod gradcheck;
pub mod metrics;
pub mod mlm;
pub mod optim;
pub mod recall;
pub mod record;
pub mod sweeps;
pub mod train;
pub mod ttl;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Rng;

use corpus::Vocabulary;
use mlm::{mask_tokens, MlmExample};

/// Settings of the toy masked-language-modeling task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlmTaskSpec {
    pub mask_prob: f64,
    pub sequence_length: usize,
    pub train_frac: f64,
    pub vocab_cap: usize,
}

impl Default for MlmTaskSpec {
    fn default() -> Self {
        MlmTaskSpec {
            mask_prob: 0.15,
            sequence_length: 128,
            train_frac: 0.8,
            vocab_cap: 8192,
        }
    }
}

/// Encoded and masked splits, plus the vocabulary size the model needs.
/// Raw train sequences stay available for per-epoch re-masking.
pub struct PreparedMlm {
    pub train: Vec<MlmExample>,
    pub train_sequences: Vec<Vec<usize>>,
    pub eval: Vec<MlmExample>,
    pub vocab_size: usize,
}

/// Split by `train_frac`, build the vocabulary from the training split
/// only, then encode, truncate and mask. Masking depends only on
/// (docs, seed), so every model variant sees identical layouts.
pub fn prepare_mlm(docs: &[String], task: &MlmTaskSpec, seed: u64) -> Result<PreparedMlm> {
    let (train_docs, eval_docs) = corpus::frac_split(docs, task.train_frac);
    prepare_mlm_docs(train_docs, eval_docs, task, seed)
}

/// Same preparation with explicit splits (the 30/10/60 protocol hands
/// its own).
pub fn prepare_mlm_docs(
    train_docs: &[String],
    eval_docs: &[String],
    task: &MlmTaskSpec,
    seed: u64,
) -> Result<PreparedMlm> {
    let vocab = Vocabulary::build(train_docs, task.vocab_cap);
    let mut rng = Rng::new(seed);
    let encode_all = |docs: &[String], rng: &mut Rng| -> Result<(Vec<MlmExample>, Vec<Vec<usize>>)> {
        let mut masked = Vec::new();
        let mut raw = Vec::new();
        for doc in docs {
            let ids = vocab.encode(doc, task.sequence_length);
            if ids.len() < 2 {
                continue;
            }
            masked.push(mask_tokens(&ids, task.mask_prob, rng)?);
            raw.push(ids);
        }
        Ok((masked, raw))
    };
    let (train, train_sequences) = encode_all(train_docs, &mut rng)?;
    let (eval, _) = encode_all(eval_docs, &mut rng)?;
    Ok(PreparedMlm {
        train,
        train_sequences,
        eval,
        vocab_size: vocab.size(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use corpus::UNK_ID;

    #[test]
    fn masking_layout_is_shared_across_variants() {
        let docs: Vec<String> = (0..10)
            .map(|i| format!("alpha beta gamma delta epsilon zeta eta theta run{i}"))
            .collect();
        let task = MlmTaskSpec {
            sequence_length: 9,
            ..MlmTaskSpec::default()
        };
        let a = prepare_mlm(&docs, &task, 7).unwrap();
        let b = prepare_mlm(&docs, &task, 7).unwrap();
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.positions, y.positions);
            assert_eq!(x.input, y.input);
        }
    }

    #[test]
    fn test_split_tokens_never_enter_the_vocabulary() {
        let docs = vec![
            "shared words everywhere".to_string(),
            "shared words again here".to_string(),
            "shared words third time".to_string(),
            "shared words fourth line".to_string(),
            "exclusive vocabulary material".to_string(),
        ];
        let task = MlmTaskSpec {
            train_frac: 0.8,
            sequence_length: 8,
            mask_prob: 0.0,
            ..MlmTaskSpec::default()
        };
        let prepared = prepare_mlm(&docs, &task, 1).unwrap();
        // the last document is eval-only; its unique words must be unk
        let eval_ids = &prepared.eval[0].input;
        let unk_count = eval_ids.iter().filter(|&&t| t == UNK_ID).count();
        assert!(unk_count >= 2, "eval-only words leaked into the vocab");
    }
}
