use log::warn;

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, sigmoid, Matrix, RandomSource};
use crate::rbm::{enumerate_states, LayerKind, RbmParams, TrainConfig, ENUMERATION_LIMIT};
use crate::regularizers::{train_regularized, EpochEvent, RegConfig, TrainedLayer};

/// Per-feature variance band outside of which Gaussian-RBM input is
/// reported as not standardized.
pub const STANDARDIZED_VARIANCE: (f64, f64) = (0.5, 2.0);

/// Check that every entry is a non-negative integer count.
pub fn check_counts(data: &Matrix) -> Result<()> {
    for (n, row) in data.row_iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            if !(x >= 0.0 && x.fract() == 0.0 && x.is_finite()) {
                return Err(Error::Data(format!(
                    "count matrix entry ({n}, {j}) = {x} is not a non-negative integer"
                )));
            }
        }
    }
    Ok(())
}

/// Train a replicated-softmax RBM on word counts.
pub fn rsm_train(
    counts: &Matrix,
    n_hidden: usize,
    train: &TrainConfig,
    reg: &RegConfig,
    rng: &RandomSource,
    observer: &mut dyn FnMut(&EpochEvent<'_>) -> Result<()>,
) -> Result<TrainedLayer> {
    check_counts(counts)?;
    let mut init = RbmParams::random_init(counts.cols(), n_hidden, &mut rng.derive(&[0]));
    // Softmax inputs are unbounded; start closer to uniform.
    init.scale(0.1);
    train_regularized(LayerKind::SoftmaxCounts, init, counts, train, reg, rng, observer)
}

/// Features whose variance falls outside [`STANDARDIZED_VARIANCE`].
pub fn unstandardized_features(data: &Matrix) -> Vec<usize> {
    if data.rows() < 2 {
        return Vec::new();
    }
    let means = data.column_means();
    let n = data.rows() as f64;
    (0..data.cols())
        .filter(|&j| {
            let var = data.row_iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            var < STANDARDIZED_VARIANCE.0 || var > STANDARDIZED_VARIANCE.1
        })
        .collect()
}

/// Train a unit-variance Gaussian RBM. Input should be standardized per
/// feature; a warning is logged otherwise.
pub fn grbm_train(
    data: &Matrix,
    n_hidden: usize,
    train: &TrainConfig,
    reg: &RegConfig,
    rng: &RandomSource,
    observer: &mut dyn FnMut(&EpochEvent<'_>) -> Result<()>,
) -> Result<TrainedLayer> {
    let off = unstandardized_features(data);
    if !off.is_empty() {
        warn!(
            "{} of {} features have variance outside [{}, {}]; standardize the input first",
            off.len(),
            data.cols(),
            STANDARDIZED_VARIANCE.0,
            STANDARDIZED_VARIANCE.1
        );
    }
    let mut init = RbmParams::random_init(data.cols(), n_hidden, &mut rng.derive(&[0]));
    init.scale(0.1);
    train_regularized(LayerKind::Gaussian, init, data, train, reg, rng, observer)
}

fn grbm_guard(params: &RbmParams) -> Result<()> {
    if params.n_hidden() > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            units: params.n_hidden(),
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Unnormalized log hidden marginal `cᵀh + (|b + Wᵀh|² − |b|²)/2` for every
/// hidden state, in enumeration order.
fn grbm_hidden_log_weights(params: &RbmParams) -> Vec<f64> {
    let b = &params.visible_bias;
    let bb: f64 = b.iter().map(|x| x * x).sum();
    enumerate_states(params.n_hidden())
        .map(|h| {
            let a = params.weights.matvec_t(&h).expect("shape");
            let shifted: f64 = b.iter().zip(&a).map(|(x, y)| (x + y) * (x + y)).sum();
            crate::numerics::dot(&params.hidden_bias, &h) + 0.5 * (shifted - bb)
        })
        .collect()
}

/// Exact `ln Z` of a Gaussian RBM: the visible integral is Gaussian, so only
/// the `2^I` hidden states are summed.
pub fn grbm_log_partition(params: &RbmParams) -> Result<f64> {
    grbm_guard(params)?;
    let j = params.n_visible() as f64;
    Ok(0.5 * j * (2.0 * std::f64::consts::PI).ln() + log_sum_exp(&grbm_hidden_log_weights(params)))
}

/// Exact mean log-density of `data` under a Gaussian RBM.
pub fn grbm_log_likelihood(params: &RbmParams, data: &Matrix) -> Result<f64> {
    let log_z = grbm_log_partition(params)?;
    let f = crate::rbm::UnitModel::new(LayerKind::Gaussian, params, None)?;
    if data.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "grbm_log_likelihood",
            left: (data.rows(), params.n_visible()),
            right: data.shape(),
        });
    }
    let total: f64 = data.row_iter().map(|v| -f.free_energy(v) - log_z).sum();
    Ok(total / data.rows().max(1) as f64)
}

/// Exact gradient of the mean negative log-density, same convention as
/// [`crate::rbm::exact_gradient`].
pub fn grbm_exact_gradient(params: &RbmParams, data: &Matrix) -> Result<RbmParams> {
    grbm_guard(params)?;
    if data.cols() != params.n_visible() || data.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "grbm_exact_gradient",
            left: (data.rows().max(1), params.n_visible()),
            right: data.shape(),
        });
    }
    let (i_n, j_n) = (params.n_hidden(), params.n_visible());
    let mut grad = RbmParams::zeros(j_n, i_n);
    let inv_n = 1.0 / data.rows() as f64;
    // Data term: mean ∂F(v).
    for v in data.row_iter() {
        let hp: Vec<f64> = params
            .weights
            .matvec(v)?
            .iter()
            .zip(&params.hidden_bias)
            .map(|(x, c)| sigmoid(x + c))
            .collect();
        for ((g, &x), &b) in grad.visible_bias.iter_mut().zip(v).zip(&params.visible_bias) {
            *g -= inv_n * (x - b);
        }
        for (g, &p) in grad.hidden_bias.iter_mut().zip(&hp) {
            *g -= inv_n * p;
        }
        grad.weights.add_outer(-inv_n, &hp, v);
    }
    // Model term: −E_model ∂F, with E[v | h] = b + Wᵀh.
    let logw = grbm_hidden_log_weights(params);
    let log_z = log_sum_exp(&logw);
    for (h, lw) in enumerate_states(i_n).zip(logw) {
        let p = (lw - log_z).exp();
        let a = params.weights.matvec_t(&h)?;
        let mean: Vec<f64> = params.visible_bias.iter().zip(&a).map(|(b, x)| b + x).collect();
        for (g, &x) in grad.visible_bias.iter_mut().zip(&a) {
            *g += p * x;
        }
        for (g, &hi) in grad.hidden_bias.iter_mut().zip(&h) {
            *g += p * hi;
        }
        grad.weights.add_outer(p, &h, &mean);
    }
    Ok(grad)
}
