use crate::attention::{encoder_layer, LayerNodes, LayerParams};
use crate::error::Result;
use crate::memory::{associative_loss, memory_init, surprise_gradient, MemoryState};
use crate::model::{
    forward_on_tape, masked_loss_on_tape, mlm_loss_and_grads, trainable_parameters, MemoryPolicy,
    ModelConfig, ModelParams, ParamNodes, Reduction, SequenceSource, TrainMode, Variant,
};
use crate::numerics::{finite_difference_check, Matrix, NodeId, Rng, Tape};

/// Worst finite-difference relative error found in one component.
#[derive(Debug, Clone)]
pub struct ComponentReport {
    pub component: &'static str,
    pub max_rel_err: f64,
}

/// Finite-difference verification of every differentiable component:
/// the memory MLP's associative loss, one full attention block, and the
/// two-chunk composed model under the detached-update rule.
pub fn run_component_gradchecks(seed: u64) -> Result<Vec<ComponentReport>> {
    Ok(vec![
        check_memory_mlp(seed)?,
        check_attention_block(seed)?,
        check_full_mac(seed)?,
    ])
}

fn check_memory_mlp(seed: u64) -> Result<ComponentReport> {
    let mut rng = Rng::new(seed);
    let state = memory_init(6, 2, &mut rng)?;
    let keys = rng.uniform_matrix(5, 6, 1.0);
    let values = rng.uniform_matrix(5, 6, 1.0);
    let analytic = surprise_gradient(&state, &keys, &values)?;
    let report = finite_difference_check(
        |ws| {
            let s = MemoryState::with_weights(ws.to_vec())?;
            associative_loss(&s, &keys, &values)
        },
        state.weights(),
        &analytic,
        1e-5,
    )?;
    Ok(ComponentReport {
        component: "memory-mlp",
        max_rel_err: report.max_rel_err,
    })
}

fn check_attention_block(seed: u64) -> Result<ComponentReport> {
    let mut rng = Rng::new(seed.wrapping_add(1));
    let dim = 6;
    let layer = LayerParams::init(dim, &mut rng);
    let x = rng.uniform_matrix(4, dim, 1.0);
    let weight = rng.uniform_matrix(4, dim, 1.0);
    let mask = vec![true, true, true, false];

    let params = vec![
        layer.w_q.clone(),
        layer.w_k.clone(),
        layer.w_v.clone(),
        layer.w_o.clone(),
        layer.w_ff1.clone(),
        layer.w_ff2.clone(),
        layer.ln1_gain.clone(),
        layer.ln1_bias.clone(),
        layer.ln2_gain.clone(),
        layer.ln2_bias.clone(),
    ];
    let run = |ps: &[Matrix]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let nodes = LayerNodes {
            w_q: ids[0],
            w_k: ids[1],
            w_v: ids[2],
            w_o: ids[3],
            w_ff1: ids[4],
            w_ff2: ids[5],
            ln1_gain: ids[6],
            ln1_bias: ids[7],
            ln2_gain: ids[8],
            ln2_bias: ids[9],
        };
        let xid = tape.leaf(x.clone());
        let out = encoder_layer(&mut tape, xid, &nodes, 2, &mask)?;
        let w = tape.leaf(weight.clone());
        let weighted = tape.hadamard(out, w)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = run(&params)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Matrix> = ids
        .iter()
        .zip(&params)
        .map(|(&id, p)| grads.get_or_zero(id, p.rows(), p.cols()))
        .collect();
    let report = finite_difference_check(
        |ps| {
            let (tape, _, loss) = run(ps)?;
            Ok(tape.scalar(loss))
        },
        &params,
        &analytic,
        1e-5,
    )?;
    Ok(ComponentReport {
        component: "attention-block",
        max_rel_err: report.max_rel_err,
    })
}

fn check_full_mac(seed: u64) -> Result<ComponentReport> {
    let cfg = ModelConfig {
        variant: Variant::Mac,
        chunk_size: 4,
        n_persistent: 2,
        model_dim: 8,
        memory_dim: 8,
        heads: 2,
        layers: 1,
        memory_depth: 2,
        vocab_size: 12,
        reduction: Reduction::LinearProjection,
        seed,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, &mut Rng::new(seed))?;
    let mut rng = Rng::new(seed.wrapping_add(2));
    let tokens: Vec<usize> = (0..8).map(|_| rng.below(cfg.vocab_size)).collect();
    let mask_positions = vec![1, 5, 6];
    let targets = vec![2, 8, 1];

    let result = mlm_loss_and_grads(
        &cfg,
        &params,
        &tokens,
        &mask_positions,
        &targets,
        None,
        TrainMode::TrainAll,
    )?
    .expect("mask positions always emitted");
    let trajectory = result.trajectory;

    let mut worst = 0.0f64;
    for name in trainable_parameters(&cfg, &params, TrainMode::TrainAll) {
        let analytic = result.grads[&name].clone();
        let current = params.to_map()[&name].clone();
        let report = finite_difference_check(
            |ps| {
                let mut perturbed = params.clone();
                perturbed.visit_mut(|n, m| {
                    if n == name {
                        *m = ps[0].clone();
                    }
                });
                let mut tape = Tape::new();
                let nodes = ParamNodes::leaf_all(&mut tape, &perturbed);
                let pass = forward_on_tape(
                    &mut tape,
                    &nodes,
                    &perturbed,
                    &cfg,
                    SequenceSource::Tokens(&tokens),
                    None,
                    MemoryPolicy::Replay(&trajectory),
                )?;
                let loss = masked_loss_on_tape(&mut tape, &pass, nodes.output, &mask_positions, &targets)?
                    .expect("mask positions always emitted");
                Ok(tape.scalar(loss))
            },
            &[current],
            &[analytic],
            1e-5,
        )?;
        worst = worst.max(report.max_rel_err);
    }
    Ok(ComponentReport {
        component: "mac-two-chunk",
        max_rel_err: worst,
    })
}
