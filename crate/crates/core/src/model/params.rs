use std::collections::BTreeMap;

use crate::attention::{AttentionParams, PersistentTokens};
use crate::error::{Error, Result};
use crate::memory::{GateParams, MemoryProjections, MemoryState};
use crate::numerics::{Matrix, Rng};

use super::config::{GateMode, ModelConfig, Reduction, Variant};

/// Parameters for one composition block: attention stack, persistent
/// tokens, memory projections, gate maps, memory init weights and the
/// optional reduction projection.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub attention: AttentionParams,
    pub persistent: PersistentTokens,
    pub proj: MemoryProjections,
    pub gates: GateParams,
    pub memory_init: Vec<Matrix>,
    pub reduce: Option<Matrix>,
}

/// All trainable state of a model instance. Stacked mode holds one
/// block per level; shallow is a single block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Matrix,
    pub blocks: Vec<BlockParams>,
    pub output: Matrix,
}

/// Which parameters a training phase may touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    TrainAll,
    /// Backbone frozen; only the neural memory weights remain, and those
    /// move exclusively through the associative-loss update rule.
    FreezeBackbone,
}

impl ModelParams {
    pub fn init(config: &ModelConfig, rng: &mut Rng) -> Result<ModelParams> {
        config.validate()?;
        let d = config.model_dim;
        let blocks = (0..config.stacking)
            .map(|_| -> Result<BlockParams> {
                let attention = if config.variant == Variant::Lmm {
                    AttentionParams {
                        layers: Vec::new(),
                        heads: 1,
                    }
                } else {
                    AttentionParams::init(d, config.heads, config.layers, rng)?
                };
                let eff = config.effective_len(config.chunk_size);
                let reduce = match (config.reduction, config.variant) {
                    (Reduction::LinearProjection, Variant::Mac) => {
                        Some(rng.xavier_matrix(config.chunk_size, eff))
                    }
                    _ => None,
                };
                Ok(BlockParams {
                    attention,
                    persistent: PersistentTokens::init(config.n_persistent, d, rng),
                    proj: MemoryProjections::init(d, config.memory_dim, rng),
                    gates: GateParams::init(d, rng),
                    memory_init: crate::memory::memory_init(config.memory_dim, config.memory_depth, rng)?
                        .weights()
                        .to_vec(),
                    reduce,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let head_in = if config.variant == Variant::Lmm {
            config.memory_dim
        } else {
            d
        };
        Ok(ModelParams {
            embedding: rng.xavier_matrix(config.vocab_size, d),
            blocks,
            output: rng.xavier_matrix(head_in, config.vocab_size),
        })
    }

    /// Fresh per-sequence memory states seeded from the init weights.
    pub fn fresh_states(&self) -> Result<Vec<MemoryState>> {
        self.blocks
            .iter()
            .map(|b| MemoryState::with_weights(b.memory_init.clone()))
            .collect()
    }

    /// Walk every parameter with its stable name, in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Matrix)) {
        f("embedding", &self.embedding);
        for (b, block) in self.blocks.iter().enumerate() {
            for (l, layer) in block.attention.layers.iter().enumerate() {
                f(&format!("block{b}.attn{l}.w_q"), &layer.w_q);
                f(&format!("block{b}.attn{l}.w_k"), &layer.w_k);
                f(&format!("block{b}.attn{l}.w_v"), &layer.w_v);
                f(&format!("block{b}.attn{l}.w_o"), &layer.w_o);
                f(&format!("block{b}.attn{l}.w_ff1"), &layer.w_ff1);
                f(&format!("block{b}.attn{l}.w_ff2"), &layer.w_ff2);
                f(&format!("block{b}.attn{l}.ln1_gain"), &layer.ln1_gain);
                f(&format!("block{b}.attn{l}.ln1_bias"), &layer.ln1_bias);
                f(&format!("block{b}.attn{l}.ln2_gain"), &layer.ln2_gain);
                f(&format!("block{b}.attn{l}.ln2_bias"), &layer.ln2_bias);
            }
            f(&format!("block{b}.persistent"), &block.persistent.embeddings);
            f(&format!("block{b}.proj.key"), &block.proj.key);
            f(&format!("block{b}.proj.value"), &block.proj.value);
            f(&format!("block{b}.proj.query"), &block.proj.query);
            f(&format!("block{b}.gate.w_alpha"), &block.gates.w_alpha);
            f(&format!("block{b}.gate.b_alpha"), &block.gates.b_alpha);
            f(&format!("block{b}.gate.w_eta"), &block.gates.w_eta);
            f(&format!("block{b}.gate.b_eta"), &block.gates.b_eta);
            f(&format!("block{b}.gate.w_theta"), &block.gates.w_theta);
            f(&format!("block{b}.gate.b_theta"), &block.gates.b_theta);
            for (i, w) in block.memory_init.iter().enumerate() {
                f(&format!("block{b}.mem.w{i}"), w);
            }
            if let Some(r) = &block.reduce {
                f(&format!("block{b}.reduce"), r);
            }
        }
        f("output", &self.output);
    }

    /// Same walk with mutable access, for the optimizer.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Matrix)) {
        f("embedding", &mut self.embedding);
        for (b, block) in self.blocks.iter_mut().enumerate() {
            for (l, layer) in block.attention.layers.iter_mut().enumerate() {
                f(&format!("block{b}.attn{l}.w_q"), &mut layer.w_q);
                f(&format!("block{b}.attn{l}.w_k"), &mut layer.w_k);
                f(&format!("block{b}.attn{l}.w_v"), &mut layer.w_v);
                f(&format!("block{b}.attn{l}.w_o"), &mut layer.w_o);
                f(&format!("block{b}.attn{l}.w_ff1"), &mut layer.w_ff1);
                f(&format!("block{b}.attn{l}.w_ff2"), &mut layer.w_ff2);
                f(&format!("block{b}.attn{l}.ln1_gain"), &mut layer.ln1_gain);
                f(&format!("block{b}.attn{l}.ln1_bias"), &mut layer.ln1_bias);
                f(&format!("block{b}.attn{l}.ln2_gain"), &mut layer.ln2_gain);
                f(&format!("block{b}.attn{l}.ln2_bias"), &mut layer.ln2_bias);
            }
            f(&format!("block{b}.persistent"), &mut block.persistent.embeddings);
            f(&format!("block{b}.proj.key"), &mut block.proj.key);
            f(&format!("block{b}.proj.value"), &mut block.proj.value);
            f(&format!("block{b}.proj.query"), &mut block.proj.query);
            f(&format!("block{b}.gate.w_alpha"), &mut block.gates.w_alpha);
            f(&format!("block{b}.gate.b_alpha"), &mut block.gates.b_alpha);
            f(&format!("block{b}.gate.w_eta"), &mut block.gates.w_eta);
            f(&format!("block{b}.gate.b_eta"), &mut block.gates.b_eta);
            f(&format!("block{b}.gate.w_theta"), &mut block.gates.w_theta);
            f(&format!("block{b}.gate.b_theta"), &mut block.gates.b_theta);
            for (i, w) in block.memory_init.iter_mut().enumerate() {
                f(&format!("block{b}.mem.w{i}"), w);
            }
            if let Some(r) = &mut block.reduce {
                f(&format!("block{b}.reduce"), r);
            }
        }
        f("output", &mut self.output);
    }

    /// Snapshot of every parameter by name, for checkpointing or
    /// bit-identity assertions.
    pub fn to_map(&self) -> BTreeMap<String, Matrix> {
        let mut map = BTreeMap::new();
        self.visit(|name, m| {
            map.insert(name.to_string(), m.clone());
        });
        map
    }

    pub fn from_map(config: &ModelConfig, map: &BTreeMap<String, Matrix>) -> Result<ModelParams> {
        let mut rng = Rng::new(config.seed);
        let mut params = ModelParams::init(config, &mut rng)?;
        let mut missing = Vec::new();
        params.visit_mut(|name, m| match map.get(name) {
            Some(stored) if stored.shape() == m.shape() => *m = stored.clone(),
            Some(stored) => missing.push(format!(
                "{name}: shape {:?} in checkpoint, {:?} expected",
                stored.shape(),
                m.shape()
            )),
            None => missing.push(format!("{name}: absent from checkpoint")),
        });
        if missing.is_empty() {
            Ok(params)
        } else {
            Err(Error::invalid("from_map", missing.join("; ")))
        }
    }
}

/// Names of the parameters a given mode may update, in visit order.
///
/// Train-all covers embeddings, attention, persistent tokens,
/// projections, gate maps, memory init and the output head, honoring the
/// config's component toggles. Freeze-backbone keeps only the memory
/// weights, which then move solely through the associative-loss rule.
pub fn trainable_parameters(config: &ModelConfig, params: &ModelParams, mode: TrainMode) -> Vec<String> {
    let mut names = Vec::new();
    params.visit(|name, _| {
        if is_trainable(config, name, mode) {
            names.push(name.to_string());
        }
    });
    names
}

pub(crate) fn is_trainable(config: &ModelConfig, name: &str, mode: TrainMode) -> bool {
    let mem = name.contains(".mem.");
    if mode == TrainMode::FreezeBackbone {
        return mem;
    }
    if name == "embedding" || name == "output" {
        return true;
    }
    if name.contains(".attn") {
        return config.variant != Variant::Lmm;
    }
    if name.contains(".persistent") {
        return config.persistent_active();
    }
    if name.contains(".proj.") {
        return config.memory_active();
    }
    if name.contains(".gate.") {
        return config.memory_active() && config.gate_mode == GateMode::LearnedPerChunk;
    }
    if mem {
        return config.memory_active();
    }
    if name.contains(".reduce") {
        return config.reduction == Reduction::LinearProjection && config.variant == Variant::Mac;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            model_dim: 8,
            memory_dim: 8,
            heads: 2,
            layers: 1,
            chunk_size: 4,
            n_persistent: 2,
            vocab_size: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn train_all_count_matches_component_arithmetic() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(1)).unwrap();
        let names = trainable_parameters(&cfg, &params, TrainMode::TrainAll);
        // embedding + output + 1 layer x 10 + persistent + 3 projections
        // + 2 memory layers; fixed gates and slice reduction add nothing
        assert_eq!(names.len(), 2 + 10 + 1 + 3 + 2);
    }

    #[test]
    fn freeze_backbone_keeps_only_memory_weights() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(1)).unwrap();
        let names = trainable_parameters(&cfg, &params, TrainMode::FreezeBackbone);
        assert_eq!(names, vec!["block0.mem.w0", "block0.mem.w1"]);
    }

    #[test]
    fn persistent_excluded_when_disabled() {
        let cfg = ModelConfig {
            use_persistent: false,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, &mut Rng::new(1)).unwrap();
        let names = trainable_parameters(&cfg, &params, TrainMode::TrainAll);
        assert!(names.iter().all(|n| !n.contains("persistent")));
    }

    #[test]
    fn learned_gates_join_the_trainable_set() {
        let cfg = ModelConfig {
            gate_mode: GateMode::LearnedPerChunk,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, &mut Rng::new(1)).unwrap();
        let names = trainable_parameters(&cfg, &params, TrainMode::TrainAll);
        assert_eq!(names.iter().filter(|n| n.contains(".gate.")).count(), 6);
    }

    #[test]
    fn map_roundtrip_restores_every_parameter() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, &mut Rng::new(5)).unwrap();
        let map = params.to_map();
        let restored = ModelParams::from_map(&cfg, &map).unwrap();
        assert_eq!(params, restored);
    }

    #[test]
    fn stacked_blocks_have_independent_parameters() {
        let cfg = ModelConfig {
            stacking: 2,
            ..tiny_config()
        };
        let params = ModelParams::init(&cfg, &mut Rng::new(3)).unwrap();
        assert_eq!(params.blocks.len(), 2);
        assert_ne!(params.blocks[0], params.blocks[1]);
    }
}
