//! Minimal dense linear algebra with reverse-mode gradients and a
//! finite-difference oracle. Everything downstream builds on this.

mod gradcheck;
mod matrix;
mod rng;
mod tape;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use matrix::{layer_norm_rows, sigmoid, silu, softmax_rows, softplus, Matrix, LAYER_NORM_EPS};
pub use rng::Rng;
pub use tape::{Gradients, NodeId, Tape};
