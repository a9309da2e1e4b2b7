//! Chunked local attention with persistent tokens and a neural long-term
//! memory that keeps learning at inference time, composed as
//! memory-as-context, plus the harness that runs the ablation matrix,
//! chunk/length sweeps, forecasting comparison and test-time-learning
//! experiments at desk scale.

pub mod attention;
pub mod error;
pub mod io;
pub mod memory;
pub mod model;
pub mod numerics;
pub mod tasks;

pub use error::{Error, Result};
