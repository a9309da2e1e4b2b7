//! Multi-head softmax attention with pre-layer-norm residual blocks,
//! plus persistent token storage. Operates on whatever effective
//! sequence the model hands it; chunking and concatenation live upstream.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, NodeId, Rng, Tape};

/// Additive logit for keys that must receive exactly zero attention.
/// Large enough that exp underflows to 0.0 after max subtraction.
pub const MASK_LOGIT: f64 = -1e30;

/// Weights for one attention + feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w_ff1: Matrix,
    pub w_ff2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl LayerParams {
    pub fn init(model_dim: usize, rng: &mut Rng) -> LayerParams {
        let ff = 4 * model_dim;
        LayerParams {
            w_q: rng.xavier_matrix(model_dim, model_dim),
            w_k: rng.xavier_matrix(model_dim, model_dim),
            w_v: rng.xavier_matrix(model_dim, model_dim),
            w_o: rng.xavier_matrix(model_dim, model_dim),
            w_ff1: rng.xavier_matrix(model_dim, ff),
            w_ff2: rng.xavier_matrix(ff, model_dim),
            ln1_gain: Matrix::filled(1, model_dim, 1.0),
            ln1_bias: Matrix::zeros(1, model_dim),
            ln2_gain: Matrix::filled(1, model_dim, 1.0),
            ln2_bias: Matrix::zeros(1, model_dim),
        }
    }
}

/// Full attention stack configuration: per-layer weights plus head count.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub layers: Vec<LayerParams>,
    pub heads: usize,
}

impl AttentionParams {
    pub fn init(model_dim: usize, heads: usize, layers: usize, rng: &mut Rng) -> Result<AttentionParams> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::invalid(
                "attention",
                format!("model dim {model_dim} not divisible by {heads} heads"),
            ));
        }
        Ok(AttentionParams {
            layers: (0..layers).map(|_| LayerParams::init(model_dim, rng)).collect(),
            heads,
        })
    }
}

/// Task-level embeddings prepended to every chunk's attention input.
/// Trainable at train time, bit-identical across all chunks of a
/// sequence at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistentTokens {
    pub embeddings: Matrix,
}

impl PersistentTokens {
    pub fn init(count: usize, model_dim: usize, rng: &mut Rng) -> PersistentTokens {
        PersistentTokens {
            embeddings: rng.xavier_matrix(count, model_dim),
        }
    }

    pub fn count(&self) -> usize {
        self.embeddings.rows()
    }
}

/// Node handles for one layer's weights on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub w_q: NodeId,
    pub w_k: NodeId,
    pub w_v: NodeId,
    pub w_o: NodeId,
    pub w_ff1: NodeId,
    pub w_ff2: NodeId,
    pub ln1_gain: NodeId,
    pub ln1_bias: NodeId,
    pub ln2_gain: NodeId,
    pub ln2_bias: NodeId,
}

impl LayerNodes {
    pub fn leaf(tape: &mut Tape, layer: &LayerParams) -> LayerNodes {
        LayerNodes {
            w_q: tape.leaf(layer.w_q.clone()),
            w_k: tape.leaf(layer.w_k.clone()),
            w_v: tape.leaf(layer.w_v.clone()),
            w_o: tape.leaf(layer.w_o.clone()),
            w_ff1: tape.leaf(layer.w_ff1.clone()),
            w_ff2: tape.leaf(layer.w_ff2.clone()),
            ln1_gain: tape.leaf(layer.ln1_gain.clone()),
            ln1_bias: tape.leaf(layer.ln1_bias.clone()),
            ln2_gain: tape.leaf(layer.ln2_gain.clone()),
            ln2_bias: tape.leaf(layer.ln2_bias.clone()),
        }
    }
}

/// Sinusoidal absolute positions, interleaved sin/cos with base 10000,
/// one row per position.
pub fn positional_encoding(length: usize, model_dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(length, model_dim);
    for pos in 0..length {
        for pair in 0..model_dim.div_ceil(2) {
            let angle = pos as f64 / 10000f64.powf(2.0 * pair as f64 / model_dim as f64);
            pe.set(pos, 2 * pair, angle.sin());
            if 2 * pair + 1 < model_dim {
                pe.set(pos, 2 * pair + 1, angle.cos());
            }
        }
    }
    pe
}

fn mask_row(mask: &[bool]) -> Matrix {
    let data = mask.iter().map(|&m| if m { 0.0 } else { MASK_LOGIT }).collect();
    Matrix::from_vec_unchecked(1, mask.len(), data)
}

fn check_attention_input(x: &Matrix, heads: usize, mask: &[bool]) -> Result<()> {
    if mask.len() != x.rows() {
        return Err(Error::invalid(
            "attention",
            format!("mask length {} for {} rows", mask.len(), x.rows()),
        ));
    }
    if heads == 0 || x.cols() % heads != 0 {
        return Err(Error::invalid(
            "attention",
            format!("model dim {} not divisible by {} heads", x.cols(), heads),
        ));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("attention", "every key is padded"));
    }
    Ok(())
}

/// Scaled dot-product attention over all rows of `x`, heads split by
/// column blocks, padded keys excluded via additive mask, output
/// projected by w_o. No residual or normalization here; the encoder
/// layer owns that wiring.
pub fn multi_head_attention(
    tape: &mut Tape,
    x: NodeId,
    layer: &LayerNodes,
    heads: usize,
    mask: &[bool],
) -> Result<NodeId> {
    check_attention_input(tape.value(x), heads, mask)?;
    let dim = tape.value(x).cols();
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q_all = tape.matmul(x, layer.w_q)?;
    let k_all = tape.matmul(x, layer.w_k)?;
    let v_all = tape.matmul(x, layer.w_v)?;
    let mask_logits = tape.leaf(mask_row(mask));

    let mut head_outputs = Vec::with_capacity(heads);
    for h in 0..heads {
        let q = tape.slice_cols(q_all, h * head_dim, head_dim)?;
        let k = tape.slice_cols(k_all, h * head_dim, head_dim)?;
        let v = tape.slice_cols(v_all, h * head_dim, head_dim)?;
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scaled = tape.scale(scores, scale)?;
        let masked = tape.add_row(scaled, mask_logits)?;
        let probs = tape.softmax_rows(masked)?;
        head_outputs.push(tape.matmul(probs, v)?);
    }
    let merged = tape.concat_cols(&head_outputs)?;
    tape.matmul(merged, layer.w_o)
}

/// Pre-layer-norm transformer block:
/// x + attn(norm(x)) followed by + ff(norm(.)), silu feed-forward with
/// hidden width 4x the model dim.
pub fn encoder_layer(
    tape: &mut Tape,
    x: NodeId,
    layer: &LayerNodes,
    heads: usize,
    mask: &[bool],
) -> Result<NodeId> {
    let normed = tape.layer_norm_rows(x)?;
    let scaled = tape.mul_row(normed, layer.ln1_gain)?;
    let ln1 = tape.add_row(scaled, layer.ln1_bias)?;
    let attn = multi_head_attention(tape, ln1, layer, heads, mask)?;
    let h = tape.add(x, attn)?;

    let normed2 = tape.layer_norm_rows(h)?;
    let scaled2 = tape.mul_row(normed2, layer.ln2_gain)?;
    let ln2 = tape.add_row(scaled2, layer.ln2_bias)?;
    let ff_hidden = tape.matmul(ln2, layer.w_ff1)?;
    let ff_act = tape.silu(ff_hidden)?;
    let ff_out = tape.matmul(ff_act, layer.w_ff2)?;
    tape.add(h, ff_out)
}

/// All layers in sequence over the same mask.
pub fn encoder_stack(
    tape: &mut Tape,
    x: NodeId,
    layers: &[LayerNodes],
    heads: usize,
    mask: &[bool],
) -> Result<NodeId> {
    let mut h = x;
    for layer in layers {
        h = encoder_layer(tape, h, layer, heads, mask)?;
    }
    Ok(h)
}

/// Value-level attention for tests and degenerate-config assertions.
pub fn multi_head_attention_value(
    x: &Matrix,
    layer: &LayerParams,
    heads: usize,
    mask: &[bool],
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let nodes = LayerNodes::leaf(&mut tape, layer);
    let out = multi_head_attention(&mut tape, xid, &nodes, heads, mask)?;
    Ok(tape.value(out).clone())
}

/// Per-head attention probability matrices, for inspecting where the
/// mass goes.
pub fn attention_probs_value(
    x: &Matrix,
    layer: &LayerParams,
    heads: usize,
    mask: &[bool],
) -> Result<Vec<Matrix>> {
    check_attention_input(x, heads, mask)?;
    let dim = x.cols();
    let head_dim = dim / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let q_all = x.matmul(&layer.w_q)?;
    let k_all = x.matmul(&layer.w_k)?;
    let mask_bias = mask_row(mask);
    let mut out = Vec::with_capacity(heads);
    for h in 0..heads {
        let mut scores = Matrix::zeros(x.rows(), x.rows());
        for i in 0..x.rows() {
            for j in 0..x.rows() {
                let mut dot = 0.0;
                for c in 0..head_dim {
                    dot += q_all.get(i, h * head_dim + c) * k_all.get(j, h * head_dim + c);
                }
                scores.set(i, j, dot * scale + mask_bias.get(0, j));
            }
        }
        out.push(crate::numerics::softmax_rows(&scores));
    }
    Ok(out)
}
