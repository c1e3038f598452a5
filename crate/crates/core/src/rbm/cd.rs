use rayon::prelude::*;

use super::units::{sample_binary, UnitModel};
use super::{LayerKind, Mask, RbmParams};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

/// Masks applied to one minibatch.
#[derive(Clone, Copy, Debug)]
pub enum BatchMasks<'a> {
    None,
    /// One mask for every example (DropConnect, pruning).
    Shared(&'a Mask),
    /// One mask per example, in row order (Dropout).
    PerExample(&'a [Mask]),
}

// Examples per parallel work item. Fixed so the reduction order does not
// depend on the thread count.
const CHUNK: usize = 8;

/// CD-k estimate of the gradient of the mean negative log-likelihood of a
/// binary RBM over `batch`.
///
/// Returns `(1/N_b) Σ_n [∂F(v_n)/∂θ − ∂F(ṽ_n)/∂θ]`. Each example runs its
/// own chain on the sub-stream `rng.derive(&[n])`.
pub fn cd_gradient(
    params: &RbmParams,
    batch: &Matrix,
    k: usize,
    masks: BatchMasks<'_>,
    rng: &RandomSource,
) -> Result<RbmParams> {
    cd_gradient_for(LayerKind::Bernoulli, params, batch, k, masks, rng)
}

/// [`cd_gradient`] for any visible-unit family.
///
/// Intermediate reconstructions are sampled; the last visible half-step uses
/// the conditional mean.
pub fn cd_gradient_for(
    kind: LayerKind,
    params: &RbmParams,
    batch: &Matrix,
    k: usize,
    masks: BatchMasks<'_>,
    rng: &RandomSource,
) -> Result<RbmParams> {
    if k == 0 {
        return Err(Error::Contract("CD requires k >= 1".into()));
    }
    if batch.rows() == 0 {
        return Err(Error::EmptyMinibatch);
    }
    if batch.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "cd_gradient",
            left: (batch.rows(), params.n_visible()),
            right: batch.shape(),
        });
    }
    if let BatchMasks::PerExample(ms) = masks {
        if ms.len() != batch.rows() {
            return Err(Error::ShapeMismatch {
                op: "cd_gradient masks",
                left: (batch.rows(), 1),
                right: (ms.len(), 1),
            });
        }
    }
    // Validate every mask up front so worker threads cannot fail.
    let models: Vec<UnitModel<'_>> = match masks {
        BatchMasks::None => vec![UnitModel::new(kind, params, None)?],
        BatchMasks::Shared(m) => vec![UnitModel::new(kind, params, Some(m))?],
        BatchMasks::PerExample(ms) => ms
            .iter()
            .map(|m| UnitModel::new(kind, params, Some(m)))
            .collect::<Result<_>>()?,
    };
    let model_for = |n: usize| match masks {
        BatchMasks::PerExample(_) => &models[n],
        _ => &models[0],
    };

    let n_rows = batch.rows();
    let starts: Vec<usize> = (0..n_rows).step_by(CHUNK).collect();
    let partials: Vec<RbmParams> = starts
        .par_iter()
        .map(|&start| {
            let mut acc = RbmParams::zeros(params.n_visible(), params.n_hidden());
            for n in start..(start + CHUNK).min(n_rows) {
                let mut chain_rng = rng.derive(&[n as u64]);
                cd_example(model_for(n), batch.row(n), k, &mut chain_rng, &mut acc);
            }
            acc
        })
        .collect();

    let mut grad = RbmParams::zeros(params.n_visible(), params.n_hidden());
    for p in &partials {
        grad.axpy(1.0, p)?;
    }
    grad.scale(1.0 / n_rows as f64);
    Ok(grad)
}

fn cd_example(model: &UnitModel<'_>, v0: &[f64], k: usize, rng: &mut RandomSource, acc: &mut RbmParams) {
    let doc_len = match model.kind {
        LayerKind::SoftmaxCounts => v0.iter().sum(),
        _ => 1.0,
    };
    let h0 = model.hidden_probs(v0);
    model.accumulate_grad(v0, &h0, 1.0, acc);

    let mut hp = h0;
    let mut v = Vec::new();
    for step in 1..=k {
        let h = sample_binary(&hp, rng);
        let mean = model.visible_mean(&h, doc_len);
        v = if step < k {
            model.sample_visible(&mean, doc_len, rng)
        } else {
            mean
        };
        hp = model.hidden_probs(&v);
    }
    model.accumulate_grad(&v, &hp, -1.0, acc);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_batch_and_zero_k() {
        let p = RbmParams::zeros(3, 2);
        let rng = RandomSource::new(0, 0);
        assert!(matches!(
            cd_gradient(&p, &Matrix::zeros(0, 3), 1, BatchMasks::None, &rng),
            Err(Error::EmptyMinibatch)
        ));
        assert!(cd_gradient(&p, &Matrix::zeros(2, 3), 0, BatchMasks::None, &rng).is_err());
        assert!(cd_gradient(&p, &Matrix::zeros(2, 4), 1, BatchMasks::None, &rng).is_err());
    }

    #[test]
    fn all_ones_masks_match_unmasked() {
        let mut init = RandomSource::new(12, 0);
        let p = RbmParams::random_init(6, 4, &mut init);
        let batch = Matrix::from_fn(10, 6, |i, j| ((i + j) % 2) as f64);
        let rng = RandomSource::new(3, 5);
        let plain = cd_gradient(&p, &batch, 3, BatchMasks::None, &rng).unwrap();
        let edge = Mask::Edge(Matrix::filled(4, 6, 1.0));
        let shared = cd_gradient(&p, &batch, 3, BatchMasks::Shared(&edge), &rng).unwrap();
        let nodes = vec![Mask::Node(vec![1.0; 4]); 10];
        let per = cd_gradient(&p, &batch, 3, BatchMasks::PerExample(&nodes), &rng).unwrap();
        assert_eq!(plain, shared);
        assert_eq!(plain, per);
    }

    #[test]
    fn symmetric_data_gives_zero_visible_bias_gradient() {
        // θ = 0 and a batch whose mean visible vector is 1/2: the reconstruction
        // mean is exactly 1/2, so the b-gradient is −mean(v) + 1/2.
        let p = RbmParams::zeros(4, 3);
        let batch = Matrix::from_fn(10_000, 4, |i, j| ((i + j) % 2) as f64);
        let rng = RandomSource::new(77, 0);
        let g = cd_gradient(&p, &batch, 1, BatchMasks::None, &rng).unwrap();
        // 3-sigma band for a mean of 10^4 Bernoulli(1/2) indicators.
        let band = 3.0 * (0.25f64 / 1e4).sqrt();
        for &gb in &g.visible_bias {
            assert!(gb.abs() < band, "{gb}");
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let mut init = RandomSource::new(1, 0);
        let p = RbmParams::random_init(5, 3, &mut init);
        let batch = Matrix::from_fn(17, 5, |i, j| ((i * 3 + j) % 2) as f64);
        let rng = RandomSource::new(8, 0);
        let a = cd_gradient(&p, &batch, 2, BatchMasks::None, &rng).unwrap();
        let b = cd_gradient(&p, &batch, 2, BatchMasks::None, &rng).unwrap();
        assert_eq!(a, b);
    }
}
