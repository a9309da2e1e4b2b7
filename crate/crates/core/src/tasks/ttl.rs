use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

use super::record::RunRecord;
use super::train::{evaluate_mlm, evaluate_mlm_streaming};
use super::{prepare_mlm_docs, MlmTaskSpec};

/// Test-time learning over a trained model: the corpus splits 30/10/60
/// by document, the 60% test stream repeats for `passes` passes with the
/// backbone frozen and memory carried across sequences, updated only by
/// the associative-loss rule. Pass 0 is the frozen-model baseline,
/// measured before any carried updates apply.
pub fn run_test_time_learning(
    config: &ModelConfig,
    params: &ModelParams,
    task: &MlmTaskSpec,
    docs: &[String],
    passes: usize,
    seed: u64,
    config_hash: &str,
) -> Result<Vec<RunRecord>> {
    if passes == 0 {
        return Err(Error::invalid("run_test_time_learning", "passes must be at least 1"));
    }
    let (train_docs, _val_docs, test_docs) = super::corpus::ttl_split(docs);
    if train_docs.is_empty() || test_docs.is_empty() {
        return Err(Error::Data(
            "corpus too small for a 30/10/60 split with nonempty train and test".into(),
        ));
    }
    // vocabulary comes from the training split alone
    let data = prepare_mlm_docs(train_docs, test_docs, task, seed)?;
    let examples = data.eval;

    let streaming_config = ModelConfig {
        keep_memory_across_sequences: true,
        ..config.clone()
    };

    let mut records = Vec::with_capacity(passes);
    let (acc0, f10) = evaluate_mlm(config, params, &examples)?;
    records.push(
        RunRecord::new("ttl", "freeze-backbone", seed, config_hash, 0)
            .with_metric("pass", 0.0)?
            .with_metric("accuracy", acc0)?
            .with_metric("f1", f10)?,
    );

    let mut states = params.fresh_states()?;
    for pass in 1..passes {
        let (acc, f1, carried) = evaluate_mlm_streaming(&streaming_config, params, &examples, states)?;
        states = carried;
        records.push(
            RunRecord::new("ttl", "freeze-backbone", seed, config_hash, pass)
                .with_metric("pass", pass as f64)?
                .with_metric("accuracy", acc)?
                .with_metric("f1", f1)?,
        );
    }
    Ok(records)
}
