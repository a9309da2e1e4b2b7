use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Matrix;

/// Optimizer and loop settings shared by every training task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub warmup_steps: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            learning_rate: 1e-3,
            momentum: 0.9,
            warmup_steps: 100,
            clip_norm: 1.0,
            batch_size: 8,
            epochs: 3,
        }
    }
}

/// Gradient descent with momentum, linear learning-rate warmup and
/// global gradient-norm clipping. Velocity buffers are keyed by
/// parameter name so the same instance serves any named parameter set.
pub struct SgdMomentum {
    settings: TrainSettings,
    step: usize,
    velocity: BTreeMap<String, Matrix>,
}

impl SgdMomentum {
    pub fn new(settings: TrainSettings) -> SgdMomentum {
        SgdMomentum {
            settings,
            step: 0,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Parameter deltas for one step. The caller adds each delta to the
    /// matching parameter.
    pub fn updates(&mut self, grads: &BTreeMap<String, Matrix>) -> Result<BTreeMap<String, Matrix>> {
        self.step += 1;
        let warm = if self.settings.warmup_steps > 0 && self.step <= self.settings.warmup_steps {
            self.step as f64 / self.settings.warmup_steps as f64
        } else {
            1.0
        };
        let lr = self.settings.learning_rate * warm;

        let norm = grads
            .values()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = if self.settings.clip_norm > 0.0 && norm > self.settings.clip_norm {
            self.settings.clip_norm / norm
        } else {
            1.0
        };

        let mut deltas = BTreeMap::new();
        for (name, g) in grads {
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            *v = v.scale(self.settings.momentum)?.add(&g.scale(clip)?)?;
            deltas.insert(name.clone(), v.scale(-lr)?);
        }
        Ok(deltas)
    }
}

/// Element-wise sum of per-example gradient maps, divided by the count.
pub fn mean_grads(batch: &[BTreeMap<String, Matrix>]) -> Result<BTreeMap<String, Matrix>> {
    let mut total: BTreeMap<String, Matrix> = BTreeMap::new();
    for grads in batch {
        for (name, g) in grads {
            match total.get_mut(name) {
                Some(acc) => *acc = acc.add(g)?,
                None => {
                    total.insert(name.clone(), g.clone());
                }
            }
        }
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    for g in total.values_mut() {
        *g = g.scale(scale)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(value: f64) -> BTreeMap<String, Matrix> {
        let mut m = BTreeMap::new();
        m.insert("w".to_string(), Matrix::filled(1, 2, value));
        m
    }

    #[test]
    fn warmup_scales_first_steps_linearly() {
        let settings = TrainSettings {
            learning_rate: 1.0,
            momentum: 0.0,
            warmup_steps: 4,
            clip_norm: 0.0,
            ..TrainSettings::default()
        };
        let mut opt = SgdMomentum::new(settings);
        let d1 = opt.updates(&grads_of(1.0)).unwrap();
        assert!((d1["w"].get(0, 0) - (-0.25)).abs() < 1e-12);
        let d2 = opt.updates(&grads_of(1.0)).unwrap();
        assert!((d2["w"].get(0, 0) - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn clipping_bounds_the_global_norm() {
        let settings = TrainSettings {
            learning_rate: 1.0,
            momentum: 0.0,
            warmup_steps: 0,
            clip_norm: 1.0,
            ..TrainSettings::default()
        };
        let mut opt = SgdMomentum::new(settings);
        // gradient norm is 100 * sqrt(2); after clipping the step norm is lr * 1.0
        let d = opt.updates(&grads_of(100.0)).unwrap();
        let norm = d["w"].frobenius_norm();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let settings = TrainSettings {
            learning_rate: 1.0,
            momentum: 0.5,
            warmup_steps: 0,
            clip_norm: 0.0,
            ..TrainSettings::default()
        };
        let mut opt = SgdMomentum::new(settings);
        opt.updates(&grads_of(1.0)).unwrap();
        let d2 = opt.updates(&grads_of(1.0)).unwrap();
        // v = 0.5 * 1 + 1 = 1.5
        assert!((d2["w"].get(0, 0) - (-1.5)).abs() < 1e-12);
    }

    #[test]
    fn mean_grads_averages() {
        let batch = vec![grads_of(1.0), grads_of(3.0)];
        let mean = mean_grads(&batch).unwrap();
        assert_eq!(mean["w"], Matrix::filled(1, 2, 2.0));
    }
}
