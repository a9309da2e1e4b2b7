use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which composition runs: full memory-as-context, the memory-only
/// model, or a plain encoder over the whole sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Mac,
    Lmm,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionSource {
    AllChunks,
    LastChunk,
}

/// How the effective sequence comes back down to chunk width after
/// attention: keep the last w rows, or learn a projection over all rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    SliceChunk,
    LinearProjection,
}

/// Which rows feed the memory write: the attention-enriched chunk
/// output, or the raw embedded chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WriteSource {
    AttentionOutput,
    RawChunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateMode {
    Fixed,
    LearnedPerChunk,
}

/// Every architectural choice and every ambiguity axis as an explicit
/// field, so ablations are config points rather than code forks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub variant: Variant,
    pub chunk_size: usize,
    pub n_persistent: usize,
    pub model_dim: usize,
    pub memory_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub memory_depth: usize,
    pub gate_mode: GateMode,
    pub gate_alpha: f64,
    pub gate_eta: f64,
    pub gate_theta: f64,
    pub prediction_source: PredictionSource,
    pub reduction: Reduction,
    /// Number of stacked blocks; 1 is the shallow encoder.
    pub stacking: usize,
    pub memory_write_source: WriteSource,
    pub use_memory: bool,
    pub use_persistent: bool,
    pub vocab_size: usize,
    pub seed: u64,
    /// Thread memory state across sequences in an evaluation stream
    /// instead of resetting per sequence.
    pub keep_memory_across_sequences: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Mac,
            chunk_size: 32,
            n_persistent: 8,
            model_dim: 64,
            memory_dim: 64,
            heads: 4,
            layers: 2,
            memory_depth: 2,
            gate_mode: GateMode::Fixed,
            gate_alpha: 0.01,
            gate_eta: 0.9,
            gate_theta: 0.05,
            prediction_source: PredictionSource::AllChunks,
            reduction: Reduction::SliceChunk,
            stacking: 1,
            memory_write_source: WriteSource::AttentionOutput,
            use_memory: true,
            use_persistent: true,
            vocab_size: 8192,
            seed: 0,
            keep_memory_across_sequences: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk_size must be at least 1".into()));
        }
        if self.model_dim == 0 || self.memory_dim == 0 {
            return Err(Error::Config("model_dim and memory_dim must be at least 1".into()));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be at least 1".into()));
        }
        if self.stacking == 0 {
            return Err(Error::Config("stacking must be at least 1".into()));
        }
        if !(1..=2).contains(&self.memory_depth) {
            return Err(Error::Config(format!(
                "memory_depth must be 1 or 2, got {}",
                self.memory_depth
            )));
        }
        if self.variant != Variant::Lmm {
            if self.heads == 0 || self.model_dim % self.heads != 0 {
                return Err(Error::Config(format!(
                    "model_dim {} not divisible by heads {}",
                    self.model_dim, self.heads
                )));
            }
            if self.layers == 0 {
                return Err(Error::Config("layers must be at least 1".into()));
            }
        }
        if self.variant == Variant::Mac && self.use_memory && self.memory_dim != self.model_dim {
            return Err(Error::Config(format!(
                "mac retrieval concatenates memory tokens with the chunk, so memory_dim ({}) must equal model_dim ({})",
                self.memory_dim, self.model_dim
            )));
        }
        if self.gate_mode == GateMode::Fixed {
            crate::memory::MemoryHyperGates::validated(self.gate_alpha, self.gate_eta, self.gate_theta)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Memory participates in the forward pass. The memory-only variant
    /// always uses it; the baseline never does.
    pub fn memory_active(&self) -> bool {
        match self.variant {
            Variant::Lmm => true,
            Variant::Baseline => false,
            Variant::Mac => self.use_memory,
        }
    }

    pub fn persistent_active(&self) -> bool {
        self.variant == Variant::Mac && self.use_persistent && self.n_persistent > 0
    }

    /// Rows entering attention for one chunk of width w.
    pub fn effective_len(&self, w: usize) -> usize {
        let mut len = w;
        if self.memory_active() {
            len += w;
        }
        if self.persistent_active() {
            len += self.n_persistent;
        }
        len
    }
}
