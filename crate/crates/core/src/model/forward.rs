use std::collections::BTreeMap;

use crate::attention::{encoder_stack, positional_encoding, LayerNodes};
use crate::error::{Error, Result};
use crate::memory::{
    compute_gates, memory_forward_on_tape, memory_update, surprise_gradient, GateSpec, MemoryState,
};
use crate::numerics::{Gradients, Matrix, NodeId, Tape};

use super::chunking::chunk_layout;
use super::config::{GateMode, ModelConfig, PredictionSource, Reduction, Variant, WriteSource};
use super::params::{is_trainable, BlockParams, ModelParams, TrainMode};

/// Tape handles for one block's parameters. Gate maps stay off the tape:
/// they only feed the detached memory updates.
pub struct BlockNodes {
    pub attn: Vec<LayerNodes>,
    pub persistent: NodeId,
    pub proj_key: NodeId,
    pub proj_value: NodeId,
    pub proj_query: NodeId,
    pub mem_init: Vec<NodeId>,
    pub reduce: Option<NodeId>,
}

impl BlockNodes {
    pub fn leaf(tape: &mut Tape, block: &BlockParams) -> BlockNodes {
        BlockNodes {
            attn: block
                .attention
                .layers
                .iter()
                .map(|l| LayerNodes::leaf(tape, l))
                .collect(),
            persistent: tape.leaf(block.persistent.embeddings.clone()),
            proj_key: tape.leaf(block.proj.key.clone()),
            proj_value: tape.leaf(block.proj.value.clone()),
            proj_query: tape.leaf(block.proj.query.clone()),
            mem_init: block.memory_init.iter().map(|w| tape.leaf(w.clone())).collect(),
            reduce: block.reduce.as_ref().map(|r| tape.leaf(r.clone())),
        }
    }
}

/// Every model parameter registered on a tape, addressable by the same
/// names [`ModelParams::visit`] produces.
pub struct ParamNodes {
    pub embedding: NodeId,
    pub blocks: Vec<BlockNodes>,
    pub output: NodeId,
    by_name: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn leaf_all(tape: &mut Tape, params: &ModelParams) -> ParamNodes {
        let embedding = tape.leaf(params.embedding.clone());
        let blocks: Vec<BlockNodes> = params.blocks.iter().map(|b| BlockNodes::leaf(tape, b)).collect();
        let output = tape.leaf(params.output.clone());

        let mut by_name = BTreeMap::new();
        by_name.insert("embedding".to_string(), embedding);
        by_name.insert("output".to_string(), output);
        for (b, nodes) in blocks.iter().enumerate() {
            for (l, layer) in nodes.attn.iter().enumerate() {
                by_name.insert(format!("block{b}.attn{l}.w_q"), layer.w_q);
                by_name.insert(format!("block{b}.attn{l}.w_k"), layer.w_k);
                by_name.insert(format!("block{b}.attn{l}.w_v"), layer.w_v);
                by_name.insert(format!("block{b}.attn{l}.w_o"), layer.w_o);
                by_name.insert(format!("block{b}.attn{l}.w_ff1"), layer.w_ff1);
                by_name.insert(format!("block{b}.attn{l}.w_ff2"), layer.w_ff2);
                by_name.insert(format!("block{b}.attn{l}.ln1_gain"), layer.ln1_gain);
                by_name.insert(format!("block{b}.attn{l}.ln1_bias"), layer.ln1_bias);
                by_name.insert(format!("block{b}.attn{l}.ln2_gain"), layer.ln2_gain);
                by_name.insert(format!("block{b}.attn{l}.ln2_bias"), layer.ln2_bias);
            }
            by_name.insert(format!("block{b}.persistent"), nodes.persistent);
            by_name.insert(format!("block{b}.proj.key"), nodes.proj_key);
            by_name.insert(format!("block{b}.proj.value"), nodes.proj_value);
            by_name.insert(format!("block{b}.proj.query"), nodes.proj_query);
            for (i, &w) in nodes.mem_init.iter().enumerate() {
                by_name.insert(format!("block{b}.mem.w{i}"), w);
            }
            if let Some(r) = nodes.reduce {
                by_name.insert(format!("block{b}.reduce"), r);
            }
        }
        ParamNodes {
            embedding,
            blocks,
            output,
            by_name,
        }
    }

    pub fn node(&self, name: &str) -> Option<NodeId> {
        self.by_name.get(name).copied()
    }
}

/// What the memory does while chunks stream through.
#[derive(Clone, Copy)]
pub enum MemoryPolicy<'a> {
    /// Surprise updates run per chunk. States between chunks are values,
    /// not tape nodes: task-loss gradients do not flow through updates.
    Online,
    /// Retrieval states come from a recorded trajectory and no writes
    /// happen. This is the function the tape actually differentiates,
    /// which makes finite-difference checks of the detached objective
    /// possible.
    Replay(&'a [Vec<MemoryState>]),
}

/// Where the input sequence comes from.
#[derive(Clone, Copy)]
pub enum SequenceSource<'a> {
    Tokens(&'a [usize]),
    /// Already-embedded rows registered on the tape (one row per step).
    Embedded(NodeId),
}

/// Everything a forward pass produces. `hidden` holds the emitted rows
/// before the output projection and stays on the tape, so a caller can
/// project all rows (full logits) or only the rows it will score.
pub struct ForwardPass {
    pub hidden: NodeId,
    /// Original sequence position of each hidden row.
    pub emitted_positions: Vec<usize>,
    /// Memory state per block after the last chunk's write.
    pub final_states: Vec<MemoryState>,
    /// Per block, the state each chunk's retrieval saw.
    pub trajectory: Vec<Vec<MemoryState>>,
    /// Attention input rows for every chunk-level attention call.
    pub attn_input_rows: Vec<usize>,
}

pub fn forward_on_tape(
    tape: &mut Tape,
    nodes: &ParamNodes,
    params: &ModelParams,
    config: &ModelConfig,
    source: SequenceSource,
    initial_states: Option<&[MemoryState]>,
    policy: MemoryPolicy,
) -> Result<ForwardPass> {
    config.validate()?;
    let embedded = match source {
        SequenceSource::Tokens(tokens) => {
            if tokens.is_empty() {
                return Err(Error::invalid("model_forward", "empty token sequence"));
            }
            if let Some(&bad) = tokens.iter().find(|&&t| t >= config.vocab_size) {
                return Err(Error::invalid(
                    "model_forward",
                    format!("token id {bad} outside vocab of {}", config.vocab_size),
                ));
            }
            tape.gather_rows(nodes.embedding, tokens)?
        }
        SequenceSource::Embedded(id) => id,
    };
    let seq_len = tape.value(embedded).rows();

    match config.variant {
        Variant::Lmm => lmm_path(tape, nodes, params, config, embedded, seq_len, initial_states, policy),
        Variant::Mac | Variant::Baseline => {
            let w = if config.variant == Variant::Baseline {
                seq_len
            } else {
                config.chunk_size
            };
            mac_path(tape, nodes, params, config, embedded, seq_len, w, initial_states, policy)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn mac_path(
    tape: &mut Tape,
    nodes: &ParamNodes,
    params: &ModelParams,
    config: &ModelConfig,
    embedded: NodeId,
    seq_len: usize,
    w: usize,
    initial_states: Option<&[MemoryState]>,
    policy: MemoryPolicy,
) -> Result<ForwardPass> {
    let layout = chunk_layout(seq_len, w);
    let mut attn_input_rows = Vec::new();
    let mut final_states = Vec::new();
    let mut trajectory = Vec::new();
    let mut seq = embedded;

    for (b, block) in params.blocks.iter().enumerate() {
        let block_nodes = &nodes.blocks[b];
        let mut state = match initial_states {
            Some(states) => states[b].clone(),
            None => MemoryState::with_weights(block.memory_init.clone())?,
        };
        let mut block_traj = Vec::with_capacity(layout.len());
        let mut out_parts = Vec::with_capacity(layout.len());

        for (c, &(start, len)) in layout.iter().enumerate() {
            if let MemoryPolicy::Replay(traj) = policy {
                state = traj[b][c].clone();
            }
            block_traj.push(state.clone());

            let real = tape.slice_rows(seq, start, len)?;
            let (chunk_node, chunk_mask) = pad_chunk(tape, real, len, w, config.model_dim)?;

            let retrieved = if config.memory_active() {
                let queries = tape.matmul(chunk_node, block_nodes.proj_query)?;
                let through_init = c == 0 && initial_states.is_none();
                let weight_ids: Vec<NodeId> = if through_init {
                    block_nodes.mem_init.clone()
                } else {
                    state.weights().iter().map(|m| tape.leaf(m.clone())).collect()
                };
                Some(memory_forward_on_tape(tape, &weight_ids, queries)?)
            } else {
                None
            };

            let mut parts = Vec::new();
            let mut mask = Vec::new();
            if config.persistent_active() {
                parts.push(block_nodes.persistent);
                mask.extend(std::iter::repeat(true).take(config.n_persistent));
            }
            if let Some(r) = retrieved {
                parts.push(r);
                mask.extend_from_slice(&chunk_mask);
            }
            parts.push(chunk_node);
            mask.extend_from_slice(&chunk_mask);

            let eff = tape.concat_rows(&parts)?;
            let eff_len = tape.value(eff).rows();
            attn_input_rows.push(eff_len);

            let pe = tape.leaf(positional_encoding(eff_len, config.model_dim));
            let x = tape.add(eff, pe)?;
            let attended = encoder_stack(tape, x, &block_nodes.attn, block.attention.heads, &mask)?;

            let reduced = match config.reduction {
                Reduction::SliceChunk => tape.slice_rows(attended, eff_len - w, w)?,
                Reduction::LinearProjection => match block_nodes.reduce {
                    Some(r) => tape.matmul(r, attended)?,
                    None => tape.slice_rows(attended, eff_len - w, w)?,
                },
            };

            if config.memory_active() {
                if let MemoryPolicy::Online = policy {
                    let source_node = match config.memory_write_source {
                        WriteSource::AttentionOutput => reduced,
                        WriteSource::RawChunk => chunk_node,
                    };
                    let source_rows = tape.value(source_node).slice_rows(0, len)?;
                    state = write_chunk_to_memory(&state, &source_rows, block, config)?;
                }
            }

            out_parts.push(tape.slice_rows(reduced, 0, len)?);
        }

        seq = tape.concat_rows(&out_parts)?;
        final_states.push(state);
        trajectory.push(block_traj);
    }

    let (hidden, emitted_positions) = select_prediction_rows(tape, seq, seq_len, &layout, config)?;
    Ok(ForwardPass {
        hidden,
        emitted_positions,
        final_states,
        trajectory,
        attn_input_rows,
    })
}

#[allow(clippy::too_many_arguments)]
fn lmm_path(
    tape: &mut Tape,
    nodes: &ParamNodes,
    params: &ModelParams,
    config: &ModelConfig,
    embedded: NodeId,
    seq_len: usize,
    initial_states: Option<&[MemoryState]>,
    policy: MemoryPolicy,
) -> Result<ForwardPass> {
    let layout = chunk_layout(seq_len, config.chunk_size);
    let block = &params.blocks[0];
    let block_nodes = &nodes.blocks[0];
    let w = config.chunk_size;

    let mut state = match initial_states {
        Some(states) => states[0].clone(),
        None => MemoryState::with_weights(block.memory_init.clone())?,
    };
    let mut block_traj = Vec::with_capacity(layout.len());
    let mut out_parts = Vec::with_capacity(layout.len());

    for (c, &(start, len)) in layout.iter().enumerate() {
        if let MemoryPolicy::Replay(traj) = policy {
            state = traj[0][c].clone();
        }
        block_traj.push(state.clone());

        let real = tape.slice_rows(embedded, start, len)?;
        let (chunk_node, _) = pad_chunk(tape, real, len, w, config.model_dim)?;

        let queries = tape.matmul(chunk_node, block_nodes.proj_query)?;
        let through_init = c == 0 && initial_states.is_none();
        let weight_ids: Vec<NodeId> = if through_init {
            block_nodes.mem_init.clone()
        } else {
            state.weights().iter().map(|m| tape.leaf(m.clone())).collect()
        };
        let retrieved = memory_forward_on_tape(tape, &weight_ids, queries)?;

        if let MemoryPolicy::Online = policy {
            // writes always come from the raw chunk here; there is no
            // attention output to write from
            let source_rows = tape.value(chunk_node).slice_rows(0, len)?;
            state = write_chunk_to_memory(&state, &source_rows, block, config)?;
        }

        out_parts.push(tape.slice_rows(retrieved, 0, len)?);
    }

    let seq = tape.concat_rows(&out_parts)?;
    let (hidden, emitted_positions) = select_prediction_rows(tape, seq, seq_len, &layout, config)?;
    Ok(ForwardPass {
        hidden,
        emitted_positions,
        final_states: vec![state],
        trajectory: vec![block_traj],
        attn_input_rows: Vec::new(),
    })
}

fn pad_chunk(
    tape: &mut Tape,
    real: NodeId,
    len: usize,
    w: usize,
    dim: usize,
) -> Result<(NodeId, Vec<bool>)> {
    let chunk = if len < w {
        let pad = tape.leaf(Matrix::zeros(w - len, dim));
        tape.concat_rows(&[real, pad])?
    } else {
        real
    };
    let mut mask = vec![true; len];
    mask.resize(w, false);
    Ok((chunk, mask))
}

fn select_prediction_rows(
    tape: &mut Tape,
    seq: NodeId,
    seq_len: usize,
    layout: &[(usize, usize)],
    config: &ModelConfig,
) -> Result<(NodeId, Vec<usize>)> {
    match config.prediction_source {
        PredictionSource::AllChunks => Ok((seq, (0..seq_len).collect())),
        PredictionSource::LastChunk => {
            let &(start, len) = layout.last().expect("layout is never empty");
            let h = tape.slice_rows(seq, start, len)?;
            Ok((h, (start..start + len).collect()))
        }
    }
}

/// One detached write: project the source rows to keys and values, gate
/// from their mean-pooled summary, take the surprise gradient and apply
/// the gated update.
pub fn write_chunk_to_memory(
    state: &MemoryState,
    source_rows: &Matrix,
    block: &BlockParams,
    config: &ModelConfig,
) -> Result<MemoryState> {
    let keys = source_rows.matmul(&block.proj.key)?;
    let values = source_rows.matmul(&block.proj.value)?;
    let mut summary = Matrix::zeros(1, source_rows.cols());
    for i in 0..source_rows.rows() {
        for j in 0..source_rows.cols() {
            summary.set(0, j, summary.get(0, j) + source_rows.get(i, j));
        }
    }
    let summary = summary.scale(1.0 / source_rows.rows() as f64)?;
    let spec = match config.gate_mode {
        GateMode::Fixed => GateSpec::Fixed {
            alpha: config.gate_alpha,
            eta: config.gate_eta,
            theta: config.gate_theta,
        },
        GateMode::LearnedPerChunk => GateSpec::Learned(&block.gates),
    };
    let gates = compute_gates(&summary, spec)?;
    let grads = surprise_gradient(state, &keys, &values)?;
    memory_update(state, &grads, &gates)
}

/// One MAC block step at value level: retrieve, concatenate
/// [persistent | retrieved | chunk], attend, reduce back to chunk width,
/// then write the chunk into memory. Returns the chunk output, the new
/// memory state and the attention input row count.
pub fn mac_block_forward(
    chunk: &Matrix,
    mask: &[bool],
    state: &MemoryState,
    block: &BlockParams,
    config: &ModelConfig,
) -> Result<(Matrix, MemoryState, usize)> {
    if chunk.rows() != mask.len() {
        return Err(Error::invalid(
            "mac_block_forward",
            format!("{} mask entries for {} chunk rows", mask.len(), chunk.rows()),
        ));
    }
    let w = chunk.rows();
    let mut tape = Tape::new();
    let block_nodes = BlockNodes::leaf(&mut tape, block);
    let chunk_node = tape.leaf(chunk.clone());

    let retrieved = if config.memory_active() {
        let queries = tape.matmul(chunk_node, block_nodes.proj_query)?;
        let weight_ids: Vec<NodeId> = state.weights().iter().map(|m| tape.leaf(m.clone())).collect();
        Some(memory_forward_on_tape(&mut tape, &weight_ids, queries)?)
    } else {
        None
    };

    let mut parts = Vec::new();
    let mut eff_mask = Vec::new();
    if config.persistent_active() {
        parts.push(block_nodes.persistent);
        eff_mask.extend(std::iter::repeat(true).take(config.n_persistent));
    }
    if let Some(r) = retrieved {
        parts.push(r);
        eff_mask.extend_from_slice(mask);
    }
    parts.push(chunk_node);
    eff_mask.extend_from_slice(mask);

    let eff = tape.concat_rows(&parts)?;
    let eff_len = tape.value(eff).rows();
    let pe = tape.leaf(positional_encoding(eff_len, config.model_dim));
    let x = tape.add(eff, pe)?;
    let attended = encoder_stack(&mut tape, x, &block_nodes.attn, block.attention.heads, &eff_mask)?;
    let reduced = match config.reduction {
        Reduction::SliceChunk => tape.slice_rows(attended, eff_len - w, w)?,
        Reduction::LinearProjection => match block_nodes.reduce {
            Some(r) => tape.matmul(r, attended)?,
            None => tape.slice_rows(attended, eff_len - w, w)?,
        },
    };

    let real = mask.iter().filter(|&&m| m).count();
    let new_state = if config.memory_active() {
        let source_node = match config.memory_write_source {
            WriteSource::AttentionOutput => reduced,
            WriteSource::RawChunk => chunk_node,
        };
        let source_rows = tape.value(source_node).slice_rows(0, real)?;
        write_chunk_to_memory(state, &source_rows, block, config)?
    } else {
        state.clone()
    };

    Ok((tape.value(reduced).clone(), new_state, eff_len))
}

/// Value-level forward pass: embeds tokens, streams chunks left to
/// right threading memory, and returns logits for the emitted positions
/// together with the final memory states.
pub fn model_forward(
    tokens: &[usize],
    config: &ModelConfig,
    params: &ModelParams,
    initial_states: Option<&[MemoryState]>,
) -> Result<ValueForward> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::leaf_all(&mut tape, params);
    let pass = forward_on_tape(
        &mut tape,
        &nodes,
        params,
        config,
        SequenceSource::Tokens(tokens),
        initial_states,
        MemoryPolicy::Online,
    )?;
    let logits = tape.matmul(pass.hidden, nodes.output)?;
    Ok(ValueForward {
        logits: tape.value(logits).clone(),
        emitted_positions: pass.emitted_positions,
        final_states: pass.final_states,
        trajectory: pass.trajectory,
        attn_input_rows: pass.attn_input_rows,
    })
}

/// Memory-only forward over token ids or pre-embedded steps.
pub fn lmm_forward(
    input: SequenceSource,
    config: &ModelConfig,
    params: &ModelParams,
    initial_states: Option<&[MemoryState]>,
) -> Result<ValueForward> {
    if config.variant != Variant::Lmm {
        return Err(Error::Config("lmm_forward requires the lmm variant".into()));
    }
    let mut tape = Tape::new();
    let nodes = ParamNodes::leaf_all(&mut tape, params);
    let source = match input {
        SequenceSource::Tokens(t) => SequenceSource::Tokens(t),
        SequenceSource::Embedded(_) => {
            return Err(Error::invalid(
                "lmm_forward",
                "embedded input must be registered on the caller's tape; use forward_on_tape",
            ))
        }
    };
    let pass = forward_on_tape(
        &mut tape,
        &nodes,
        params,
        config,
        source,
        initial_states,
        MemoryPolicy::Online,
    )?;
    let logits = tape.matmul(pass.hidden, nodes.output)?;
    Ok(ValueForward {
        logits: tape.value(logits).clone(),
        emitted_positions: pass.emitted_positions,
        final_states: pass.final_states,
        trajectory: pass.trajectory,
        attn_input_rows: pass.attn_input_rows,
    })
}

/// A forward pass detached from its tape.
pub struct ValueForward {
    pub logits: Matrix,
    pub emitted_positions: Vec<usize>,
    pub final_states: Vec<MemoryState>,
    pub trajectory: Vec<Vec<MemoryState>>,
    pub attn_input_rows: Vec<usize>,
}

/// Logits restricted to the masked positions: gather the hidden rows
/// first, then project only those through the output head. Positions
/// outside the emitted range (last-chunk mode) are skipped.
pub fn masked_logits_on_tape(
    tape: &mut Tape,
    pass: &ForwardPass,
    output: NodeId,
    mask_positions: &[usize],
    targets: &[usize],
) -> Result<Option<(NodeId, Vec<usize>)>> {
    let first = match pass.emitted_positions.first() {
        Some(&f) => f,
        None => return Ok(None),
    };
    let last = *pass.emitted_positions.last().expect("nonempty");
    let mut rows = Vec::new();
    let mut kept_targets = Vec::new();
    for (&pos, &target) in mask_positions.iter().zip(targets) {
        if pos >= first && pos <= last {
            rows.push(pos - first);
            kept_targets.push(target);
        }
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let picked = tape.gather_rows(pass.hidden, &rows)?;
    let logits = tape.matmul(picked, output)?;
    Ok(Some((logits, kept_targets)))
}

/// Cross-entropy at the masked positions; None when nothing remains to
/// score.
pub fn masked_loss_on_tape(
    tape: &mut Tape,
    pass: &ForwardPass,
    output: NodeId,
    mask_positions: &[usize],
    targets: &[usize],
) -> Result<Option<NodeId>> {
    match masked_logits_on_tape(tape, pass, output, mask_positions, targets)? {
        Some((logits, kept)) => Ok(Some(tape.cross_entropy(logits, &kept)?)),
        None => Ok(None),
    }
}

/// Loss value and gradients for every trainable parameter of the mode,
/// plus the recorded memory trajectory. Parameters that sit outside the
/// differentiated graph (key/value projections and gate maps feed only
/// the detached updates) report zero gradients.
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: BTreeMap<String, Matrix>,
    pub final_states: Vec<MemoryState>,
    pub trajectory: Vec<Vec<MemoryState>>,
}

pub fn mlm_loss_and_grads(
    config: &ModelConfig,
    params: &ModelParams,
    tokens: &[usize],
    mask_positions: &[usize],
    targets: &[usize],
    initial_states: Option<&[MemoryState]>,
    mode: TrainMode,
) -> Result<Option<LossAndGrads>> {
    let mut tape = Tape::new();
    let nodes = ParamNodes::leaf_all(&mut tape, params);
    let pass = forward_on_tape(
        &mut tape,
        &nodes,
        params,
        config,
        SequenceSource::Tokens(tokens),
        initial_states,
        MemoryPolicy::Online,
    )?;
    let Some(loss_node) = masked_loss_on_tape(&mut tape, &pass, nodes.output, mask_positions, targets)? else {
        return Ok(None);
    };
    let loss = tape.scalar(loss_node);
    let grads = tape.backward(loss_node)?;
    Ok(Some(LossAndGrads {
        loss,
        grads: extract_grads(config, params, &nodes, &grads, mode),
        final_states: pass.final_states,
        trajectory: pass.trajectory,
    }))
}

pub fn extract_grads(
    config: &ModelConfig,
    params: &ModelParams,
    nodes: &ParamNodes,
    grads: &Gradients,
    mode: TrainMode,
) -> BTreeMap<String, Matrix> {
    let mut out = BTreeMap::new();
    params.visit(|name, m| {
        if !is_trainable(config, name, mode) {
            return;
        }
        let g = match nodes.node(name) {
            Some(id) => grads.get_or_zero(id, m.rows(), m.cols()),
            None => Matrix::zeros(m.rows(), m.cols()),
        };
        out.insert(name.to_string(), g);
    });
    out
}
