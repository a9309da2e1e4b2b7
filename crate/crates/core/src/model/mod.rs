//! Composition of chunking, persistent tokens, neural memory and
//! attention into the memory-as-context model, the memory-only model and
//! the plain baseline. Every architectural ambiguity is a config axis so
//! ablations are config points, not code forks.

mod chunking;
mod config;
mod forward;
mod params;

pub use chunking::{chunk_layout, chunk_sequence, ChunkStream};
pub use config::{GateMode, ModelConfig, PredictionSource, Reduction, Variant, WriteSource};
pub use forward::{
    extract_grads, forward_on_tape, lmm_forward, mac_block_forward, masked_logits_on_tape, masked_loss_on_tape,
    mlm_loss_and_grads, model_forward, write_chunk_to_memory, BlockNodes, ForwardPass, LossAndGrads,
    MemoryPolicy, ParamNodes, SequenceSource, ValueForward,
};
pub use params::{trainable_parameters, BlockParams, ModelParams, TrainMode};
