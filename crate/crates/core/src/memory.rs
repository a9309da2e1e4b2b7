//! Neural long-term memory: a small MLP whose weights act as an
//! associative store, written by gradient steps on an associative loss
//! while the surrounding model runs. Reads never mutate; writes are
//! functional and produce a new state.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Matrix, Rng, Tape};

/// Memory MLP weights plus momentum buffers. `weights.len()` is the
/// depth, 1 (linear) or 2 (silu between the two layers); both layers are
/// square in the memory dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    weights: Vec<Matrix>,
    momentum: Vec<Matrix>,
    update_count: u64,
}

impl MemoryState {
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn momentum(&self) -> &[Matrix] {
        &self.momentum
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Rebuild a state from checkpointed parts.
    pub fn from_parts(weights: Vec<Matrix>, momentum: Vec<Matrix>, update_count: u64) -> Result<MemoryState> {
        if weights.is_empty() || weights.len() > 2 {
            return Err(Error::invalid(
                "memory_state",
                format!("unsupported depth {}", weights.len()),
            ));
        }
        if weights.len() != momentum.len() {
            return Err(Error::invalid(
                "memory_state",
                "momentum buffer count must mirror weight count",
            ));
        }
        for (w, s) in weights.iter().zip(&momentum) {
            if w.shape() != s.shape() {
                return Err(Error::ShapeMismatch {
                    op: "memory_state",
                    lhs: w.shape(),
                    rhs: s.shape(),
                });
            }
        }
        Ok(MemoryState {
            weights,
            momentum,
            update_count,
        })
    }

    /// Fresh state with the same shapes and zeroed momentum, with the
    /// given weights. Used to seed a sequence from trained init weights.
    pub fn with_weights(weights: Vec<Matrix>) -> Result<MemoryState> {
        let momentum = weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        MemoryState::from_parts(weights, momentum, 0)
    }
}

/// Per-update scalars controlling forgetting (alpha), momentum carry
/// (eta) and write step size (theta).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryHyperGates {
    pub alpha: f64,
    pub eta: f64,
    pub theta: f64,
}

impl MemoryHyperGates {
    pub fn validated(alpha: f64, eta: f64, theta: f64) -> Result<MemoryHyperGates> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("gates", format!("alpha {alpha} outside [0,1]")));
        }
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::invalid("gates", format!("eta {eta} outside [0,1)")));
        }
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::invalid("gates", format!("theta {theta} must be non-negative")));
        }
        Ok(MemoryHyperGates { alpha, eta, theta })
    }
}

/// Key/value/query projections from model space into memory space.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryProjections {
    pub key: Matrix,
    pub value: Matrix,
    pub query: Matrix,
}

impl MemoryProjections {
    pub fn init(model_dim: usize, memory_dim: usize, rng: &mut Rng) -> MemoryProjections {
        MemoryProjections {
            key: rng.xavier_matrix(model_dim, memory_dim),
            value: rng.xavier_matrix(model_dim, memory_dim),
            query: rng.xavier_matrix(model_dim, memory_dim),
        }
    }

    pub fn model_dim(&self) -> usize {
        self.key.rows()
    }

    pub fn memory_dim(&self) -> usize {
        self.key.cols()
    }
}

/// Affine maps from a chunk summary to the three gate scalars, used in
/// learned-per-chunk mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w_alpha: Matrix,
    pub b_alpha: Matrix,
    pub w_eta: Matrix,
    pub b_eta: Matrix,
    pub w_theta: Matrix,
    pub b_theta: Matrix,
}

impl GateParams {
    pub fn init(model_dim: usize, rng: &mut Rng) -> GateParams {
        GateParams {
            w_alpha: rng.xavier_matrix(model_dim, 1),
            b_alpha: Matrix::zeros(1, 1),
            w_eta: rng.xavier_matrix(model_dim, 1),
            b_eta: Matrix::zeros(1, 1),
            w_theta: rng.xavier_matrix(model_dim, 1),
            b_theta: Matrix::zeros(1, 1),
        }
    }

    pub fn zeros(model_dim: usize) -> GateParams {
        GateParams {
            w_alpha: Matrix::zeros(model_dim, 1),
            b_alpha: Matrix::zeros(1, 1),
            w_eta: Matrix::zeros(model_dim, 1),
            b_eta: Matrix::zeros(1, 1),
            w_theta: Matrix::zeros(model_dim, 1),
            b_theta: Matrix::zeros(1, 1),
        }
    }
}

/// How gate scalars are produced for each chunk.
#[derive(Debug, Clone, Copy)]
pub enum GateSpec<'a> {
    Fixed { alpha: f64, eta: f64, theta: f64 },
    Learned(&'a GateParams),
}

/// Scaled-uniform initialized memory of the given dimension and depth,
/// with zero momentum and a zero update counter.
pub fn memory_init(memory_dim: usize, depth: usize, rng: &mut Rng) -> Result<MemoryState> {
    if !(1..=2).contains(&depth) {
        return Err(Error::invalid("memory_init", format!("unsupported depth {depth}")));
    }
    if memory_dim == 0 {
        return Err(Error::invalid("memory_init", "memory dim must be at least 1"));
    }
    let weights = (0..depth)
        .map(|_| rng.xavier_matrix(memory_dim, memory_dim))
        .collect();
    MemoryState::with_weights(weights)
}

/// Retrieval: a pure forward pass through the memory MLP. Depth 1 is
/// X W1, depth 2 is silu(X W1) W2. The state is read-only here.
pub fn memory_forward(state: &MemoryState, input: &Matrix) -> Result<Matrix> {
    if input.cols() != state.dim() {
        return Err(Error::ShapeMismatch {
            op: "memory_forward",
            lhs: input.shape(),
            rhs: state.weights[0].shape(),
        });
    }
    let mut h = input.matmul(&state.weights[0])?;
    if state.depth() == 2 {
        h = h.map(crate::numerics::silu).matmul(&state.weights[1])?;
    }
    Ok(h)
}

/// Mean over rows of the squared retrieval error: how badly the memory
/// currently maps each key to its value.
pub fn associative_loss(state: &MemoryState, keys: &Matrix, values: &Matrix) -> Result<f64> {
    if keys.rows() != values.rows() {
        return Err(Error::ShapeMismatch {
            op: "associative_loss",
            lhs: keys.shape(),
            rhs: values.shape(),
        });
    }
    if keys.rows() == 0 {
        return Err(Error::invalid("associative_loss", "empty key batch"));
    }
    let pred = memory_forward(state, keys)?;
    let diff = pred.sub(values)?;
    Ok(diff.data().iter().map(|v| v * v).sum::<f64>() / keys.rows() as f64)
}

/// Gradient of the associative loss with respect to each memory layer.
/// This is the surprise signal: large where the batch is poorly
/// predicted. The state itself is untouched.
pub fn surprise_gradient(state: &MemoryState, keys: &Matrix, values: &Matrix) -> Result<Vec<Matrix>> {
    if keys.rows() != values.rows() {
        return Err(Error::ShapeMismatch {
            op: "surprise_gradient",
            lhs: keys.shape(),
            rhs: values.shape(),
        });
    }
    if keys.rows() == 0 {
        return Err(Error::invalid("surprise_gradient", "empty key batch"));
    }
    let mut tape = Tape::new();
    let k = tape.leaf(keys.clone());
    let v = tape.leaf(values.clone());
    let w_ids: Vec<_> = state.weights.iter().map(|w| tape.leaf(w.clone())).collect();
    let loss = associative_loss_on_tape(&mut tape, &w_ids, k, v)?;
    let grads = tape.backward(loss)?;
    Ok(w_ids
        .iter()
        .zip(&state.weights)
        .map(|(&id, w)| grads.get_or_zero(id, w.rows(), w.cols()))
        .collect())
}

/// Tape-level associative loss so callers holding weight nodes (for
/// example a training pass through the memory init) can share the exact
/// same computation.
pub fn associative_loss_on_tape(
    tape: &mut Tape,
    weight_ids: &[crate::numerics::NodeId],
    keys: crate::numerics::NodeId,
    values: crate::numerics::NodeId,
) -> Result<crate::numerics::NodeId> {
    let n = tape.value(keys).rows();
    let pred = memory_forward_on_tape(tape, weight_ids, keys)?;
    let diff = tape.sub(pred, values)?;
    let sq = tape.hadamard(diff, diff)?;
    let total = tape.sum_all(sq)?;
    tape.scale(total, 1.0 / n as f64)
}

/// Tape-level retrieval mirroring [`memory_forward`].
pub fn memory_forward_on_tape(
    tape: &mut Tape,
    weight_ids: &[crate::numerics::NodeId],
    input: crate::numerics::NodeId,
) -> Result<crate::numerics::NodeId> {
    let mut h = tape.matmul(input, weight_ids[0])?;
    if weight_ids.len() == 2 {
        let a = tape.silu(h)?;
        h = tape.matmul(a, weight_ids[1])?;
    }
    Ok(h)
}

/// One gated write. Per layer: S <- eta S - theta g, then
/// W <- (1 - alpha) W + S. Returns the new state; the input is unchanged.
pub fn memory_update(
    state: &MemoryState,
    gradients: &[Matrix],
    gates: &MemoryHyperGates,
) -> Result<MemoryState> {
    if gradients.len() != state.weights.len() {
        return Err(Error::invalid(
            "memory_update",
            format!("{} gradients for {} layers", gradients.len(), state.weights.len()),
        ));
    }
    let mut weights = Vec::with_capacity(state.depth());
    let mut momentum = Vec::with_capacity(state.depth());
    for ((w, s), g) in state.weights.iter().zip(&state.momentum).zip(gradients) {
        if g.shape() != w.shape() {
            return Err(Error::ShapeMismatch {
                op: "memory_update",
                lhs: w.shape(),
                rhs: g.shape(),
            });
        }
        let s_next = s.scale(gates.eta)?.sub(&g.scale(gates.theta)?)?;
        let w_next = w.scale(1.0 - gates.alpha)?.add(&s_next)?;
        w_next.check_finite("memory_update")?;
        momentum.push(s_next);
        weights.push(w_next);
    }
    Ok(MemoryState {
        weights,
        momentum,
        update_count: state.update_count + 1,
    })
}

/// Gate scalars for one chunk. Fixed mode passes the configured
/// constants through; learned mode squashes affine maps of the
/// mean-pooled chunk summary (sigmoid for alpha and eta, softplus for
/// theta), so outputs always land in the declared ranges.
pub fn compute_gates(summary: &Matrix, spec: GateSpec) -> Result<MemoryHyperGates> {
    match spec {
        GateSpec::Fixed { alpha, eta, theta } => MemoryHyperGates::validated(alpha, eta, theta),
        GateSpec::Learned(params) => {
            if summary.rows() != 1 || summary.cols() != params.w_alpha.rows() {
                return Err(Error::ShapeMismatch {
                    op: "compute_gates",
                    lhs: summary.shape(),
                    rhs: params.w_alpha.shape(),
                });
            }
            let affine = |w: &Matrix, b: &Matrix| -> Result<f64> {
                Ok(summary.matmul(w)?.get(0, 0) + b.get(0, 0))
            };
            let alpha = sigmoid(affine(&params.w_alpha, &params.b_alpha)?);
            let eta = sigmoid(affine(&params.w_eta, &params.b_eta)?);
            let theta = softplus(affine(&params.w_theta, &params.b_theta)?);
            MemoryHyperGates::validated(alpha, eta, theta)
        }
    }
}

/// Project token rows to (keys, values, queries), one output row per
/// input row.
pub fn project_kvq(tokens: &Matrix, proj: &MemoryProjections) -> Result<(Matrix, Matrix, Matrix)> {
    if tokens.cols() != proj.model_dim() {
        return Err(Error::ShapeMismatch {
            op: "project_kvq",
            lhs: tokens.shape(),
            rhs: proj.key.shape(),
        });
    }
    Ok((
        tokens.matmul(&proj.key)?,
        tokens.matmul(&proj.value)?,
        tokens.matmul(&proj.query)?,
    ))
}

/// Largest theta from `start`, halved at most `max_halvings` times, for
/// which one plain gradient step (no momentum, no forgetting) strictly
/// decreases the associative loss. None if even the smallest tried theta
/// fails.
pub fn find_descending_theta(
    state: &MemoryState,
    keys: &Matrix,
    values: &Matrix,
    start: f64,
    max_halvings: usize,
) -> Result<Option<f64>> {
    let before = associative_loss(state, keys, values)?;
    let grads = surprise_gradient(state, keys, values)?;
    let mut theta = start;
    for _ in 0..=max_halvings {
        let gates = MemoryHyperGates {
            alpha: 0.0,
            eta: 0.0,
            theta,
        };
        let next = memory_update(state, &grads, &gates)?;
        if associative_loss(&next, keys, values)? < before {
            return Ok(Some(theta));
        }
        theta *= 0.5;
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keys_values(rng: &mut Rng, n: usize, dim: usize) -> (Matrix, Matrix) {
        (rng.uniform_matrix(n, dim, 1.0), rng.uniform_matrix(n, dim, 1.0))
    }

    #[test]
    fn init_shapes_depth_1() {
        let mut rng = Rng::new(1);
        let state = memory_init(4, 1, &mut rng).unwrap();
        assert_eq!(state.weights().len(), 1);
        assert_eq!(state.weights()[0].shape(), (4, 4));
        assert_eq!(state.momentum()[0], Matrix::zeros(4, 4));
        assert_eq!(state.update_count(), 0);
    }

    #[test]
    fn init_shapes_depth_2_hidden_equals_dim() {
        let mut rng = Rng::new(1);
        let state = memory_init(4, 2, &mut rng).unwrap();
        assert_eq!(state.weights()[0].shape(), (4, 4));
        assert_eq!(state.weights()[1].shape(), (4, 4));
    }

    #[test]
    fn init_rejects_unsupported_depth() {
        let mut rng = Rng::new(1);
        assert!(memory_init(4, 0, &mut rng).is_err());
        assert!(memory_init(4, 3, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = memory_init(6, 2, &mut Rng::new(42)).unwrap();
        let b = memory_init(6, 2, &mut Rng::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forward_identity_and_zero() {
        let id = MemoryState::with_weights(vec![Matrix::identity(3)]).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 0.5]]).unwrap();
        assert_eq!(memory_forward(&id, &x).unwrap(), x);

        let zero = MemoryState::with_weights(vec![Matrix::zeros(3, 3)]).unwrap();
        assert_eq!(memory_forward(&zero, &x).unwrap(), Matrix::zeros(1, 3));
    }

    #[test]
    fn forward_depth_2_matches_hand_chained_oracle() {
        let mut rng = Rng::new(7);
        let state = memory_init(5, 2, &mut rng).unwrap();
        let x = Matrix::filled(1, 5, 1.0);
        let got = memory_forward(&state, &x).unwrap();
        // chain the primitives by hand
        let h = x.matmul(&state.weights()[0]).unwrap();
        let a = h.map(crate::numerics::silu);
        let expect = a.matmul(&state.weights()[1]).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn forward_and_loss_leave_state_untouched() {
        let mut rng = Rng::new(9);
        let state = memory_init(4, 2, &mut rng).unwrap();
        let snapshot = state.clone();
        let (k, v) = keys_values(&mut rng, 6, 4);
        memory_forward(&state, &k).unwrap();
        associative_loss(&state, &k, &v).unwrap();
        surprise_gradient(&state, &k, &v).unwrap();
        assert_eq!(state, snapshot);
    }

    #[test]
    fn loss_zero_when_memory_is_exact() {
        let id = MemoryState::with_weights(vec![Matrix::identity(3)]).unwrap();
        let k = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[0.0, -1.0, 4.0]]).unwrap();
        assert_eq!(associative_loss(&id, &k, &k).unwrap(), 0.0);
    }

    #[test]
    fn loss_of_zero_memory_is_row_norm() {
        // with W = 0 the prediction is 0, so row [3,4] contributes 25
        let zero = MemoryState::with_weights(vec![Matrix::zeros(2, 2)]).unwrap();
        let k = Matrix::from_rows(&[&[1.0, 1.0]]).unwrap();
        let v = Matrix::from_rows(&[&[3.0, 4.0]]).unwrap();
        assert_eq!(associative_loss(&zero, &k, &v).unwrap(), 25.0);
    }

    #[test]
    fn loss_nonnegative() {
        let mut rng = Rng::new(11);
        for _ in 0..20 {
            let state = memory_init(4, 2, &mut rng).unwrap();
            let (k, v) = keys_values(&mut rng, 5, 4);
            assert!(associative_loss(&state, &k, &v).unwrap() >= 0.0);
        }
    }

    #[test]
    fn loss_rejects_row_mismatch() {
        let state = MemoryState::with_weights(vec![Matrix::zeros(2, 2)]).unwrap();
        let k = Matrix::zeros(3, 2);
        let v = Matrix::zeros(2, 2);
        assert!(associative_loss(&state, &k, &v).is_err());
    }

    #[test]
    fn gradient_zero_at_zero_loss() {
        let id = MemoryState::with_weights(vec![Matrix::identity(3)]).unwrap();
        let k = Matrix::from_rows(&[&[1.0, 2.0, 3.0]]).unwrap();
        let grads = surprise_gradient(&id, &k, &k).unwrap();
        assert_eq!(grads[0].max_abs(), 0.0);
    }

    #[test]
    fn gradient_depth_1_matches_analytic_form() {
        // d/dW (1/n) sum ||KW - V||^2 = (2/n) K^T (KW - V)
        let mut rng = Rng::new(13);
        let state = memory_init(4, 1, &mut rng).unwrap();
        let (k, v) = keys_values(&mut rng, 6, 4);
        let got = &surprise_gradient(&state, &k, &v).unwrap()[0];
        let resid = k.matmul(&state.weights()[0]).unwrap().sub(&v).unwrap();
        let expect = k.transpose().matmul(&resid).unwrap().scale(2.0 / 6.0).unwrap();
        assert!(got.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences_depth_2() {
        use crate::numerics::finite_difference_check;
        let mut rng = Rng::new(17);
        let state = memory_init(4, 2, &mut rng).unwrap();
        let (k, v) = keys_values(&mut rng, 5, 4);
        let analytic = surprise_gradient(&state, &k, &v).unwrap();
        let report = finite_difference_check(
            |ps| {
                let s = MemoryState::with_weights(ps.to_vec())?;
                associative_loss(&s, &k, &v)
            },
            state.weights(),
            &analytic,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn update_noop_gates_only_bump_counter() {
        let mut rng = Rng::new(19);
        let state = memory_init(4, 2, &mut rng).unwrap();
        let (k, v) = keys_values(&mut rng, 5, 4);
        let grads = surprise_gradient(&state, &k, &v).unwrap();
        let gates = MemoryHyperGates {
            alpha: 0.0,
            eta: 0.0,
            theta: 0.0,
        };
        let next = memory_update(&state, &grads, &gates).unwrap();
        assert_eq!(next.weights(), state.weights());
        assert_eq!(next.update_count(), state.update_count() + 1);
    }

    #[test]
    fn update_full_forget_pure_write() {
        // alpha = 1, eta = 0 leaves W = -theta g
        let mut rng = Rng::new(23);
        let state = memory_init(3, 1, &mut rng).unwrap();
        let (k, v) = keys_values(&mut rng, 4, 3);
        let grads = surprise_gradient(&state, &k, &v).unwrap();
        let gates = MemoryHyperGates {
            alpha: 1.0,
            eta: 0.0,
            theta: 0.05,
        };
        let next = memory_update(&state, &grads, &gates).unwrap();
        let expect = grads[0].scale(-0.05).unwrap();
        assert!(next.weights()[0].max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn update_one_step_matches_hand_computation() {
        // depth 1 on 2x2 values, both update lines applied by hand
        let w = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let state = MemoryState::with_weights(vec![w]).unwrap();
        let k = Matrix::from_rows(&[&[1.0, 0.0]]).unwrap();
        let v = Matrix::from_rows(&[&[0.0, 1.0]]).unwrap();
        // pred = [1, 0], resid = [1, -1], grad = 2 k^T resid = [[2,-2],[0,0]]
        let grads = surprise_gradient(&state, &k, &v).unwrap();
        assert!(grads[0]
            .max_abs_diff(&Matrix::from_rows(&[&[2.0, -2.0], &[0.0, 0.0]]).unwrap())
            < 1e-15);
        let gates = MemoryHyperGates {
            alpha: 0.1,
            eta: 0.5,
            theta: 0.25,
        };
        let next = memory_update(&state, &grads, &gates).unwrap();
        // S' = 0.5*0 - 0.25*grad = [[-0.5, 0.5], [0, 0]]
        // W' = 0.9*W + S' = [[0.4, 0.5], [0, 0.9]]
        let expect_w = Matrix::from_rows(&[&[0.4, 0.5], &[0.0, 0.9]]).unwrap();
        let expect_s = Matrix::from_rows(&[&[-0.5, 0.5], &[0.0, 0.0]]).unwrap();
        assert!(next.weights()[0].max_abs_diff(&expect_w) < 1e-15);
        assert!(next.momentum()[0].max_abs_diff(&expect_s) < 1e-15);
    }

    #[test]
    fn full_forget_erases_dependence_on_previous_weights() {
        let mut rng = Rng::new(29);
        let a = memory_init(4, 1, &mut rng).unwrap();
        let b = memory_init(4, 1, &mut rng).unwrap();
        assert_ne!(a.weights(), b.weights());
        let g = vec![rng.uniform_matrix(4, 4, 1.0)];
        let gates = MemoryHyperGates {
            alpha: 1.0,
            eta: 0.0,
            theta: 0.3,
        };
        let from_a = memory_update(&a, &g, &gates).unwrap();
        let from_b = memory_update(&b, &g, &gates).unwrap();
        assert_eq!(from_a.weights(), from_b.weights());
    }

    #[test]
    fn descent_with_line_searched_theta() {
        let mut rng = Rng::new(31);
        for _ in 0..25 {
            let state = memory_init(4, 2, &mut rng).unwrap();
            let (k, v) = keys_values(&mut rng, 6, 4);
            let theta = find_descending_theta(&state, &k, &v, 0.1, 20).unwrap();
            assert!(theta.is_some(), "no descending step size found");
        }
    }

    #[test]
    fn repeated_updates_converge_on_fixed_pair() {
        let mut rng = Rng::new(37);
        let mut state = memory_init(8, 1, &mut rng).unwrap();
        let (k, v) = keys_values(&mut rng, 1, 8);
        let initial = associative_loss(&state, &k, &v).unwrap();
        let gates = MemoryHyperGates {
            alpha: 0.0,
            eta: 0.0,
            theta: 0.1,
        };
        for _ in 0..50 {
            let grads = surprise_gradient(&state, &k, &v).unwrap();
            state = memory_update(&state, &grads, &gates).unwrap();
        }
        let final_loss = associative_loss(&state, &k, &v).unwrap();
        assert!(
            final_loss < 0.1 * initial,
            "loss {final_loss} vs initial {initial}"
        );
        assert_eq!(state.update_count(), 50);
    }

    #[test]
    fn fixed_gates_pass_through() {
        let g = compute_gates(
            &Matrix::zeros(1, 4),
            GateSpec::Fixed {
                alpha: 0.01,
                eta: 0.9,
                theta: 0.05,
            },
        )
        .unwrap();
        assert_eq!((g.alpha, g.eta, g.theta), (0.01, 0.9, 0.05));
    }

    #[test]
    fn learned_gates_at_zero_params() {
        let params = GateParams::zeros(4);
        let summary = Matrix::from_rows(&[&[0.3, -0.2, 1.0, 0.0]]).unwrap();
        let g = compute_gates(&summary, GateSpec::Learned(&params)).unwrap();
        assert_eq!(g.alpha, 0.5);
        assert_eq!(g.eta, 0.5);
        assert!((g.theta - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn learned_gates_stay_in_range() {
        let mut rng = Rng::new(41);
        let params = GateParams::init(6, &mut rng);
        for _ in 0..1000 {
            let summary = rng.uniform_matrix(1, 6, 10.0);
            let g = compute_gates(&summary, GateSpec::Learned(&params)).unwrap();
            assert!((0.0..=1.0).contains(&g.alpha));
            assert!((0.0..1.0).contains(&g.eta));
            assert!(g.theta > 0.0);
        }
    }

    #[test]
    fn project_kvq_identity_and_zero() {
        let tokens = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let proj = MemoryProjections {
            key: Matrix::identity(2),
            value: Matrix::identity(2),
            query: Matrix::zeros(2, 2),
        };
        let (k, v, q) = project_kvq(&tokens, &proj).unwrap();
        assert_eq!(k, tokens);
        assert_eq!(v, tokens);
        assert_eq!(q, Matrix::zeros(2, 2));
    }

    #[test]
    fn project_kvq_matches_matmul_oracle() {
        let mut rng = Rng::new(43);
        let tokens = rng.uniform_matrix(3, 4, 1.0);
        let proj = MemoryProjections::init(4, 5, &mut rng);
        let (k, v, q) = project_kvq(&tokens, &proj).unwrap();
        assert_eq!(k, tokens.matmul(&proj.key).unwrap());
        assert_eq!(v, tokens.matmul(&proj.value).unwrap());
        assert_eq!(q, tokens.matmul(&proj.query).unwrap());
    }
}
