//! Gradient oracle suite: every differentiable tape primitive is checked
//! against central finite differences on randomized inputs, plus algebraic
//! invariants of the value-level ops.

use proptest::prelude::*;
use titans_core::numerics::{finite_difference_check, softmax_rows, Matrix, NodeId, Rng, Tape};
use titans_core::Result;

const TRIALS: usize = 100;
const REL_TOL: f64 = 1e-4;

/// Checks one primitive: analytic gradients from a taped backward pass
/// must match finite differences for every parameter coordinate.
///
/// The loss is sum(op(...) ⊙ C) with a fixed random weighting C so that
/// transposition or index bugs cannot cancel out.
fn check_primitive<B>(name: &str, inputs: &[Matrix], weight_seed: u64, build: B)
where
    B: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    let forward = |ps: &[Matrix]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = build(&mut tape, &ids)?;
        let shape = tape.value(out).shape();
        let mut wrng = Rng::new(weight_seed);
        let c = tape.leaf(wrng.uniform_matrix(shape.0, shape.1, 1.0));
        let weighted = tape.hadamard(out, c)?;
        let loss = tape.sum_all(weighted)?;
        Ok((tape, ids, loss))
    };

    let (tape, ids, loss) = forward(inputs).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<Matrix> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, p)| grads.get_or_zero(id, p.rows(), p.cols()))
        .collect();

    let report = finite_difference_check(
        |ps| {
            let (tape, _, loss) = forward(ps)?;
            Ok(tape.scalar(loss))
        },
        inputs,
        &analytic,
        1e-5,
    )
    .unwrap();
    assert!(
        report.max_rel_err < REL_TOL,
        "{name}: rel err {} at param {} coord {:?} (analytic {}, numeric {})",
        report.max_rel_err,
        report.worst_param,
        report.worst_coord,
        report.worst_analytic,
        report.worst_numeric,
    );
}

fn rand_input(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    rng.uniform_matrix(rows, cols, 2.0)
}

#[test]
fn grad_matmul() {
    let mut rng = Rng::new(101);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        let b = rand_input(&mut rng, 5, 4);
        check_primitive("matmul", &[a, b], t as u64, |tape, ids| {
            tape.matmul(ids[0], ids[1])
        });
    }
}

#[test]
fn grad_add_sub_hadamard_scale() {
    let mut rng = Rng::new(102);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        let b = rand_input(&mut rng, 3, 5);
        check_primitive("add", &[a.clone(), b.clone()], t as u64, |tape, ids| {
            tape.add(ids[0], ids[1])
        });
        check_primitive("sub", &[a.clone(), b.clone()], t as u64, |tape, ids| {
            tape.sub(ids[0], ids[1])
        });
        check_primitive("hadamard", &[a.clone(), b], t as u64, |tape, ids| {
            tape.hadamard(ids[0], ids[1])
        });
        check_primitive("scale", &[a], t as u64, |tape, ids| tape.scale(ids[0], -1.7));
    }
}

#[test]
fn grad_activations() {
    let mut rng = Rng::new(103);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        check_primitive("silu", &[a.clone()], t as u64, |tape, ids| tape.silu(ids[0]));
        check_primitive("sigmoid", &[a.clone()], t as u64, |tape, ids| {
            tape.sigmoid(ids[0])
        });
        check_primitive("softplus", &[a], t as u64, |tape, ids| tape.softplus(ids[0]));

        // relu has a kink at zero where finite differences are invalid,
        // so inputs are kept away from it
        let b = rand_input(&mut rng, 3, 5).map(|v| if v.abs() < 1e-3 { v + 0.5 } else { v });
        check_primitive("relu", &[b], t as u64, |tape, ids| tape.relu(ids[0]));
    }
}

#[test]
fn grad_normalizers() {
    let mut rng = Rng::new(104);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        check_primitive("layer_norm_rows", &[a.clone()], t as u64, |tape, ids| {
            tape.layer_norm_rows(ids[0])
        });
        check_primitive("softmax_rows", &[a], t as u64, |tape, ids| {
            tape.softmax_rows(ids[0])
        });
    }
}

#[test]
fn grad_broadcast_rows() {
    let mut rng = Rng::new(105);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        let r = rand_input(&mut rng, 1, 5);
        check_primitive("mul_row", &[a.clone(), r.clone()], t as u64, |tape, ids| {
            tape.mul_row(ids[0], ids[1])
        });
        check_primitive("add_row", &[a, r], t as u64, |tape, ids| {
            tape.add_row(ids[0], ids[1])
        });
    }
}

#[test]
fn grad_structural_ops() {
    let mut rng = Rng::new(106);
    for t in 0..TRIALS {
        let a = rand_input(&mut rng, 3, 5);
        let b = rand_input(&mut rng, 2, 5);
        check_primitive("transpose", &[a.clone()], t as u64, |tape, ids| {
            tape.transpose(ids[0])
        });
        check_primitive("concat_rows", &[a.clone(), b.clone()], t as u64, |tape, ids| {
            tape.concat_rows(&[ids[0], ids[1]])
        });
        let c = rand_input(&mut rng, 3, 2);
        check_primitive("concat_cols", &[a.clone(), c], t as u64, |tape, ids| {
            tape.concat_cols(&[ids[0], ids[1]])
        });
        check_primitive("slice_rows", &[a.clone()], t as u64, |tape, ids| {
            tape.slice_rows(ids[0], 1, 2)
        });
        check_primitive("slice_cols", &[a.clone()], t as u64, |tape, ids| {
            tape.slice_cols(ids[0], 1, 3)
        });
        check_primitive("gather_rows", &[a.clone()], t as u64, |tape, ids| {
            tape.gather_rows(ids[0], &[2, 0, 0, 1])
        });
        check_primitive("mean_rows", &[a.clone()], t as u64, |tape, ids| {
            tape.mean_rows(ids[0])
        });
        check_primitive("sum_all", &[a], t as u64, |tape, ids| tape.sum_all(ids[0]));
    }
}

#[test]
fn grad_cross_entropy() {
    let mut rng = Rng::new(107);
    for _ in 0..TRIALS {
        let logits = rand_input(&mut rng, 3, 5);
        let targets = vec![rng.below(5), rng.below(5), rng.below(5)];

        let forward = |ps: &[Matrix]| -> Result<f64> {
            let mut tape = Tape::new();
            let l = tape.leaf(ps[0].clone());
            let loss = tape.cross_entropy(l, &targets)?;
            Ok(tape.scalar(loss))
        };
        let mut tape = Tape::new();
        let l = tape.leaf(logits.clone());
        let loss = tape.cross_entropy(l, &targets).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(l).unwrap().clone();

        let report = finite_difference_check(forward, &[logits], &[analytic], 1e-5).unwrap();
        assert!(report.max_rel_err < REL_TOL, "cross_entropy: {}", report.max_rel_err);
    }
}

// ── value-level invariants ──────────────────────────────────────────

fn arb_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, rows * cols)
        .prop_map(move |data| Matrix::from_vec(rows, cols, data).unwrap())
}

proptest! {
    #[test]
    fn matmul_is_associative(a in arb_matrix(4, 4), b in arb_matrix(4, 4), c in arb_matrix(4, 4)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn softmax_rows_sum_to_one(m in arb_matrix(4, 6)) {
        let s = softmax_rows(&m);
        for i in 0..s.rows() {
            let sum: f64 = s.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_invariant_under_row_shift(m in arb_matrix(3, 5), shift in -50.0f64..50.0) {
        let shifted = m.map(|v| v + shift);
        let a = softmax_rows(&m);
        let b = softmax_rows(&shifted);
        prop_assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn transpose_involution(m in arb_matrix(3, 7)) {
        prop_assert_eq!(m.transpose().transpose(), m);
    }
}
