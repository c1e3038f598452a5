use serde::{Deserialize, Serialize};

use super::cd::{cd_gradient_for, BatchMasks};
use super::{LayerKind, RbmParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};
use crate::regularizers::{MaskBatch, Regularizer};

/// Any parameter larger than this in magnitude aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

// Sub-stream tags.
const SHUFFLE: u64 = 0x5348;
const GIBBS: u64 = 0x4742;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub cd_k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Visit minibatches in a fresh random order each epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            cd_k: 1,
            learning_rate: 0.01,
            batch_size: 10,
            epochs: 10,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cd_k < 1 {
            return Err(Error::Config("cd_k must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochOutcome {
    pub params: RbmParams,
    /// Mean penalty value over the epoch's minibatches.
    pub penalty: f64,
}

/// One pass of minibatch SGD on a binary RBM.
pub fn sgd_epoch(
    params: &RbmParams,
    data: &Matrix,
    config: &TrainConfig,
    reg: &Regularizer,
    rng: &RandomSource,
    epoch: usize,
) -> Result<EpochOutcome> {
    sgd_epoch_for(LayerKind::Bernoulli, params, data, config, reg, rng, epoch)
}

/// One pass of minibatch SGD for any layer kind.
///
/// Each update is `θ ← θ − lr·(CD gradient + penalty gradient)`. Masks come
/// from `reg`: a fresh node mask per example for Dropout, one edge mask per
/// minibatch for DropConnect, a frozen mask for pruning.
pub fn sgd_epoch_for(
    kind: LayerKind,
    params: &RbmParams,
    data: &Matrix,
    config: &TrainConfig,
    reg: &Regularizer,
    rng: &RandomSource,
    epoch: usize,
) -> Result<EpochOutcome> {
    config.validate()?;
    if data.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "sgd_epoch",
            left: (data.rows(), params.n_visible()),
            right: data.shape(),
        });
    }
    let mut params = params.clone();
    let mut order: Vec<usize> = (0..data.rows()).collect();
    if config.shuffle {
        rng.derive(&[SHUFFLE, epoch as u64]).shuffle(&mut order);
    }

    let mut penalty_sum = 0.0;
    let mut batches = 0usize;
    for (b, rows) in order.chunks(config.batch_size).enumerate() {
        let batch = data.select_rows(rows);
        let masks = reg.masks_for_batch(&params, rows, epoch, b, rng)?;
        let batch_masks = match &masks {
            None => BatchMasks::None,
            Some(MaskBatch::Shared(m)) => BatchMasks::Shared(m),
            Some(MaskBatch::PerExample(ms)) => BatchMasks::PerExample(ms),
        };
        let gibbs_rng = rng.derive(&[GIBBS, epoch as u64, b as u64]);
        let mut grad = cd_gradient_for(kind, &params, &batch, config.cd_k, batch_masks, &gibbs_rng)?;

        let penalty = reg.penalty(kind, &params, &batch)?;
        if let Some(w) = &penalty.weights {
            grad.weights.axpy(1.0, w)?;
        }
        if let Some(c) = &penalty.hidden_bias {
            for (g, x) in grad.hidden_bias.iter_mut().zip(c) {
                *g += x;
            }
        }
        penalty_sum += penalty.value;
        batches += 1;

        params.axpy(-config.learning_rate, &grad)?;
        let magnitude = params.max_abs();
        if !(magnitude <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                epoch,
                magnitude,
                limit: DIVERGENCE_LIMIT,
            });
        }
    }
    Ok(EpochOutcome {
        params,
        penalty: if batches > 0 { penalty_sum / batches as f64 } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::free_energy;
    use crate::regularizers::RegConfig;

    fn toy_data() -> Matrix {
        Matrix::from_fn(40, 6, |i, j| ((i / 2 + j) % 3 == 0) as u8 as f64)
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut init = RandomSource::new(1, 0);
        let p = RbmParams::random_init(6, 4, &mut init);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let reg = Regularizer::none();
        let out = sgd_epoch(&p, &toy_data(), &cfg, &reg, &RandomSource::new(2, 0), 0).unwrap();
        assert_eq!(out.params, p);
    }

    #[test]
    fn repeated_example_lowers_its_free_energy() {
        let mut init = RandomSource::new(4, 0);
        let p = RbmParams::random_init(6, 4, &mut init);
        let v = [1.0, 0.0, 1.0, 1.0, 0.0, 1.0];
        let data = Matrix::from_fn(50, 6, |_, j| v[j]);
        let cfg = TrainConfig {
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let before = free_energy(&p, &v).unwrap();
        let out = sgd_epoch(&p, &data, &cfg, &Regularizer::none(), &RandomSource::new(5, 0), 0).unwrap();
        let after = free_energy(&out.params, &v).unwrap();
        assert!(before - after > 0.0, "{before} -> {after}");
    }

    #[test]
    fn training_is_deterministic() {
        let mut init = RandomSource::new(6, 0);
        let p = RbmParams::random_init(6, 4, &mut init);
        let cfg = TrainConfig::default();
        let reg = Regularizer::from_config(&RegConfig::dropout(0.8), None).unwrap();
        let rng = RandomSource::new(7, 0);
        let a = sgd_epoch(&p, &toy_data(), &cfg, &reg, &rng, 3).unwrap();
        let b = sgd_epoch(&p, &toy_data(), &cfg, &reg, &rng, 3).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_guard_trips() {
        let mut p = RbmParams::zeros(6, 4);
        p.weights.set(0, 0, 9.9e5);
        let cfg = TrainConfig {
            learning_rate: 1e9,
            ..TrainConfig::default()
        };
        let err = sgd_epoch(&p, &toy_data(), &cfg, &Regularizer::none(), &RandomSource::new(0, 0), 0);
        assert!(matches!(err, Err(Error::Diverged { .. })));
    }
}
