use crate::error::{Error, Result};
use crate::numerics::Rng;

use super::corpus::MASK_ID;

/// One masked-language-modeling example: inputs with the mask id
/// substituted, the original ids at those positions, and where they are.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmExample {
    pub input: Vec<usize>,
    /// Original ids, one per masked position.
    pub targets: Vec<usize>,
    /// Strictly increasing.
    pub positions: Vec<usize>,
}

/// Mask each position independently with `mask_prob`, substituting the
/// reserved mask id outright (no 80/10/10 split). At least one mask is
/// always forced, so mask_prob 0 yields exactly one rng-chosen mask.
pub fn mask_tokens(ids: &[usize], mask_prob: f64, rng: &mut Rng) -> Result<MlmExample> {
    if ids.len() < 2 {
        return Err(Error::invalid(
            "mask_tokens",
            format!("sequence of {} tokens is too short to mask", ids.len()),
        ));
    }
    if !(0.0..1.0).contains(&mask_prob) {
        return Err(Error::invalid(
            "mask_tokens",
            format!("mask_prob {mask_prob} outside [0, 1)"),
        ));
    }
    let mut input = ids.to_vec();
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for (i, &id) in ids.iter().enumerate() {
        if rng.f64() < mask_prob {
            positions.push(i);
            targets.push(id);
            input[i] = MASK_ID;
        }
    }
    if positions.is_empty() {
        let i = rng.below(ids.len());
        positions.push(i);
        targets.push(ids[i]);
        input[i] = MASK_ID;
    }
    Ok(MlmExample {
        input,
        targets,
        positions,
    })
}
