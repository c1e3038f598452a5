use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stack::{LayerStack, StackLayer};
use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Matrix, RandomSource};
use crate::rbm::{LayerKind, RbmParams, TrainConfig, UnitModel, DIVERGENCE_LIMIT};
use crate::regularizers::{RegConfig, RegMode};

const SHUFFLE: u64 = 0x5348;
const GIBBS: u64 = 0x4742;
const LAYER: u64 = 0x4c41;
const CHUNK: usize = 8;

/// Settings for DBM pretraining and joint training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbmConfig {
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub mean_field_iterations: usize,
    /// Gibbs sweeps of the negative phase, started from the data.
    pub gibbs_steps: usize,
}

impl Default for DbmConfig {
    fn default() -> Self {
        DbmConfig {
            pretrain: TrainConfig {
                learning_rate: 0.03,
                ..TrainConfig::default()
            },
            train: TrainConfig::default(),
            mean_field_iterations: 10,
            gibbs_steps: 5,
        }
    }
}

/// Progress report from DBM training.
pub struct DbmEvent<'a> {
    /// 1-based, continuous across pretraining and joint training.
    pub epoch: usize,
    pub phase: &'a str,
    /// The composed DBM; `None` while pretraining.
    pub model: Option<&'a LayerStack>,
    pub penalty: f64,
}

pub type DbmObserver<'o> = dyn FnMut(&DbmEvent<'_>) -> Result<()> + 'o;

fn weight_decay(reg: &RegConfig) -> Result<f64> {
    reg.validate()?;
    match reg.mode {
        RegMode::None => Ok(0.0),
        RegMode::L2 => Ok(reg.lambda),
        other => Err(Error::Config(format!(
            "DBM training supports regularization modes none and l2, not {}",
            other.name()
        ))),
    }
}

fn check_dbm(stack: &LayerStack) -> Result<()> {
    if stack.kind() != LayerKind::Bernoulli {
        return Err(Error::Contract("DBMs are built from binary layers only".into()));
    }
    Ok(())
}

/// `c + up·W x`, the hidden input of an RBM whose upward weights are scaled.
fn scaled_hidden_input(params: &RbmParams, x: &[f64], up: f64) -> Vec<f64> {
    params
        .weights
        .row_iter()
        .zip(&params.hidden_bias)
        .map(|(row, &c)| c + up * dot(row, x))
        .collect()
}

/// `b + down·Wᵀ h`.
fn scaled_visible_input(params: &RbmParams, h: &[f64], down: f64) -> Vec<f64> {
    let mut act = params.visible_bias.clone();
    for (i, &hi) in h.iter().enumerate() {
        if hi != 0.0 {
            for (a, &w) in act.iter_mut().zip(params.weights.row(i)) {
                *a += down * hi * w;
            }
        }
    }
    act
}

fn sample(p: &[f64], rng: &mut RandomSource) -> Vec<f64> {
    p.iter().map(|&x| if rng.bernoulli(x) { 1.0 } else { 0.0 }).collect()
}

/// One CD-k epoch of an RBM whose weights enter the hidden conditional
/// scaled by `up` and the visible conditional scaled by `down`.
#[allow(clippy::too_many_arguments)]
fn scaled_cd_epoch(
    params: &mut RbmParams,
    data: &Matrix,
    cfg: &TrainConfig,
    up: f64,
    down: f64,
    lambda: f64,
    rng: &RandomSource,
    epoch: usize,
) -> Result<()> {
    let mut order: Vec<usize> = (0..data.rows()).collect();
    if cfg.shuffle {
        rng.derive(&[SHUFFLE, epoch as u64]).shuffle(&mut order);
    }
    for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
        let gibbs = rng.derive(&[GIBBS, epoch as u64, b as u64]);
        let mut grad = RbmParams::zeros(params.n_visible(), params.n_hidden());
        for (n, &r) in rows.iter().enumerate() {
            let mut chain = gibbs.derive(&[n as u64]);
            let v0 = data.row(r);
            let h0: Vec<f64> = scaled_hidden_input(params, v0, up).into_iter().map(sigmoid).collect();
            let mut hp = h0.clone();
            let mut v = Vec::new();
            for step in 1..=cfg.cd_k {
                let h = sample(&hp, &mut chain);
                let mean: Vec<f64> = scaled_visible_input(params, &h, down).into_iter().map(sigmoid).collect();
                v = if step < cfg.cd_k { sample(&mean, &mut chain) } else { mean };
                hp = scaled_hidden_input(params, &v, up).into_iter().map(sigmoid).collect();
            }
            for (g, (&a, &m)) in grad.visible_bias.iter_mut().zip(v0.iter().zip(&v)) {
                *g -= a - m;
            }
            for (g, (&a, &m)) in grad.hidden_bias.iter_mut().zip(h0.iter().zip(&hp)) {
                *g -= a - m;
            }
            grad.weights.add_outer(-1.0, &h0, v0);
            grad.weights.add_outer(1.0, &hp, &v);
        }
        grad.scale(1.0 / rows.len() as f64);
        if lambda > 0.0 {
            grad.weights.axpy(2.0 * lambda, &params.weights)?;
        }
        params.axpy(-cfg.learning_rate, &grad)?;
        guard(params.max_abs(), epoch)?;
    }
    Ok(())
}

fn guard(magnitude: f64, epoch: usize) -> Result<()> {
    if magnitude.is_finite() && magnitude <= DIVERGENCE_LIMIT {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            magnitude,
            limit: DIVERGENCE_LIMIT,
        })
    }
}

/// Greedy DBM pretraining with `hidden_sizes.len()` layers.
///
/// The bottom RBM uses doubled upward weights, the top RBM doubled downward
/// weights and middle RBMs doubled weights in both directions, so the stored
/// weights are directly the DBM's. A single layer is a plain RBM.
pub fn dbm_pretrain(
    data: &Matrix,
    hidden_sizes: &[usize],
    config: &DbmConfig,
    reg: &RegConfig,
    rng: &RandomSource,
    observer: &mut DbmObserver<'_>,
) -> Result<LayerStack> {
    if hidden_sizes.is_empty() {
        return Err(Error::Contract("a DBM needs at least one hidden layer".into()));
    }
    config.pretrain.validate()?;
    let lambda = weight_decay(reg)?;
    let depth = hidden_sizes.len();
    let mut input = data.clone();
    let mut layers = Vec::with_capacity(depth);
    let mut epoch = 0;
    for (l, &n_hidden) in hidden_sizes.iter().enumerate() {
        let up = if depth > 1 && l < depth - 1 { 2.0 } else { 1.0 };
        let down = if depth > 1 && l > 0 { 2.0 } else { 1.0 };
        let layer_rng = rng.derive(&[LAYER, l as u64]);
        let mut params = RbmParams::random_init(input.cols(), n_hidden, &mut layer_rng.derive(&[0]));
        let phase = format!("pretrain-{}", l + 1);
        for e in 0..config.pretrain.epochs {
            scaled_cd_epoch(&mut params, &input, &config.pretrain, up, down, lambda, &layer_rng, e)?;
            epoch += 1;
            observer(&DbmEvent {
                epoch,
                phase: &phase,
                model: None,
                penalty: lambda * params.weights.as_slice().iter().map(|w| w * w).sum::<f64>(),
            })?;
        }
        if l + 1 < depth {
            input = Matrix::from_rows(
                &input
                    .row_iter()
                    .map(|x| scaled_hidden_input(&params, x, up).into_iter().map(sigmoid).collect())
                    .collect::<Vec<_>>(),
            )?;
        }
        if l > 0 {
            // Unit-layer biases live in the layer below's hidden biases.
            params.visible_bias.iter_mut().for_each(|b| *b = 0.0);
        }
        layers.push(StackLayer {
            kind: LayerKind::Bernoulli,
            params,
        });
    }
    LayerStack::new(layers)
}

/// Bias of unit layer `k` (0 = visible).
fn unit_bias(stack: &LayerStack, k: usize) -> &[f64] {
    if k == 0 {
        &stack.layers()[0].params.visible_bias
    } else {
        &stack.layers()[k - 1].params.hidden_bias
    }
}

/// Total input to hidden unit layer `k ≥ 1` given its neighbours.
fn layer_input(stack: &LayerStack, k: usize, below: &[f64], above: Option<&[f64]>) -> Vec<f64> {
    let layers = stack.layers();
    let model = UnitModel::new(LayerKind::Bernoulli, &layers[k - 1].params, None).expect("unmasked");
    let mut a = model.hidden_input(below);
    if let Some(x) = above {
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (aj, &w) in a.iter_mut().zip(layers[k].params.weights.row(i)) {
                    *aj += xi * w;
                }
            }
        }
    }
    a
}

/// Mean-field posterior `μ¹, …, μ^L` given `v`: initialized by a bottom-up
/// pass with doubled input below the top layer, then `iterations` sweeps of
/// layer-wise fixed-point updates.
pub fn mean_field(stack: &LayerStack, v: &[f64], iterations: usize) -> Result<Vec<Vec<f64>>> {
    Ok(mean_field_trace(stack, v, iterations)?.0)
}

/// [`mean_field`] plus the variational free energy after initialization and
/// after each sweep.
pub fn mean_field_trace(stack: &LayerStack, v: &[f64], iterations: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    check_dbm(stack)?;
    if v.len() != stack.sizes()[0] {
        return Err(Error::ShapeMismatch {
            op: "mean_field",
            left: (1, stack.sizes()[0]),
            right: (1, v.len()),
        });
    }
    let depth = stack.len();
    let mut mu: Vec<Vec<f64>> = Vec::with_capacity(depth);
    for l in 0..depth {
        let below: &[f64] = if l == 0 { v } else { &mu[l - 1] };
        let p = &stack.layers()[l].params;
        let up = if l + 1 < depth { 2.0 } else { 1.0 };
        mu.push(scaled_hidden_input(p, below, up).into_iter().map(sigmoid).collect());
    }
    let mut trace = vec![variational_free_energy(stack, v, &mu)?];
    for _ in 0..iterations {
        for k in 1..=depth {
            let input = {
                let below: &[f64] = if k == 1 { v } else { &mu[k - 2] };
                layer_input(stack, k, below, mu.get(k).map(|x| x.as_slice()))
            };
            mu[k - 1] = input.into_iter().map(sigmoid).collect();
        }
        trace.push(variational_free_energy(stack, v, &mu)?);
    }
    Ok((mu, trace))
}

fn entropy(p: f64) -> f64 {
    let mut h = 0.0;
    if p > 0.0 {
        h -= p * p.ln();
    }
    if p < 1.0 {
        h -= (1.0 - p) * (1.0 - p).ln();
    }
    h
}

/// `−E_q[−E(v, h)] − H(q)` for the factorial distribution with means `mu`.
pub fn variational_free_energy(stack: &LayerStack, v: &[f64], mu: &[Vec<f64>]) -> Result<f64> {
    if mu.len() != stack.len() {
        return Err(Error::Contract("one mean vector per hidden layer required".into()));
    }
    let mut neg_energy = dot(unit_bias(stack, 0), v);
    for (l, layer) in stack.layers().iter().enumerate() {
        let below: &[f64] = if l == 0 { v } else { &mu[l - 1] };
        let wx = layer.params.weights.matvec(below)?;
        neg_energy += dot(&layer.params.hidden_bias, &mu[l]) + dot(&mu[l], &wx);
    }
    let h: f64 = mu.iter().flatten().map(|&p| entropy(p)).sum();
    Ok(-neg_energy - h)
}

/// Top-layer mean-field activations for every row of `data`.
pub fn dbm_features(stack: &LayerStack, data: &Matrix, iterations: usize) -> Result<Matrix> {
    let rows = data
        .row_iter()
        .map(|v| mean_field(stack, v, iterations).map(|mut mu| mu.pop().expect("non-empty")))
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, *stack.sizes().last().expect("non-empty")));
    }
    Matrix::from_rows(&rows)
}

fn gradient_example(
    stack: &LayerStack,
    v: &[f64],
    config: &DbmConfig,
    rng: &mut RandomSource,
    acc: &mut [RbmParams],
) -> Result<()> {
    let depth = stack.len();
    let layers = stack.layers();
    let mu = mean_field(stack, v, config.mean_field_iterations)?;
    for l in 0..depth {
        let below: &[f64] = if l == 0 { v } else { &mu[l - 1] };
        UnitModel::new(LayerKind::Bernoulli, &layers[l].params, None)?.accumulate_grad(below, &mu[l], 1.0, &mut acc[l]);
    }

    // x[0] = v, x[k] = hidden layer k.
    let mut x: Vec<Vec<f64>> = std::iter::once(v.to_vec()).collect();
    for m in &mu {
        x.push(sample(m, rng));
    }
    let steps = config.gibbs_steps.max(1);
    for step in 1..=steps {
        let last = step == steps;
        for parity in [0, 1] {
            for k in (parity..=depth).step_by(2) {
                let p: Vec<f64> = if k == 0 {
                    let model = UnitModel::new(LayerKind::Bernoulli, &layers[0].params, None)?;
                    model.visible_mean(&x[1], 1.0)
                } else {
                    layer_input(stack, k, &x[k - 1], x.get(k + 1).map(|a| a.as_slice()))
                        .into_iter()
                        .map(sigmoid)
                        .collect()
                };
                x[k] = if last { p } else { sample(&p, rng) };
            }
        }
    }
    for l in 0..depth {
        UnitModel::new(LayerKind::Bernoulli, &layers[l].params, None)?.accumulate_grad(&x[l], &x[l + 1], -1.0, &mut acc[l]);
    }
    Ok(())
}

/// Gradient of the negative log-likelihood estimated with a mean-field
/// positive phase and a Gibbs negative phase, one [`RbmParams`] per layer.
/// Visible-bias entries of layers above the first are always zero.
///
/// Example `n` samples from `rng.derive(&[n])`. With one hidden layer this
/// is exactly CD-k with `k = gibbs_steps`.
pub fn dbm_gradient(stack: &LayerStack, batch: &Matrix, config: &DbmConfig, rng: &RandomSource) -> Result<Vec<RbmParams>> {
    check_dbm(stack)?;
    if batch.rows() == 0 {
        return Err(Error::EmptyMinibatch);
    }
    if batch.cols() != stack.sizes()[0] {
        return Err(Error::ShapeMismatch {
            op: "dbm_gradient",
            left: (batch.rows(), stack.sizes()[0]),
            right: batch.shape(),
        });
    }
    let zeros = || -> Vec<RbmParams> {
        stack
            .layers()
            .iter()
            .map(|l| RbmParams::zeros(l.params.n_visible(), l.params.n_hidden()))
            .collect()
    };
    let n_rows = batch.rows();
    let starts: Vec<usize> = (0..n_rows).step_by(CHUNK).collect();
    let partials = starts
        .par_iter()
        .map(|&start| {
            let mut acc = zeros();
            for n in start..(start + CHUNK).min(n_rows) {
                gradient_example(stack, batch.row(n), config, &mut rng.derive(&[n as u64]), &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = zeros();
    for part in &partials {
        for (g, p) in grad.iter_mut().zip(part) {
            g.axpy(1.0, p)?;
        }
    }
    for (l, g) in grad.iter_mut().enumerate() {
        g.scale(1.0 / n_rows as f64);
        if l > 0 {
            g.visible_bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }
    Ok(grad)
}

/// Joint DBM training for `config.train.epochs` epochs.
pub fn dbm_train(
    stack: &LayerStack,
    data: &Matrix,
    config: &DbmConfig,
    reg: &RegConfig,
    rng: &RandomSource,
    first_epoch: usize,
    observer: &mut DbmObserver<'_>,
) -> Result<LayerStack> {
    check_dbm(stack)?;
    config.train.validate()?;
    let lambda = weight_decay(reg)?;
    let cfg = &config.train;
    let mut model = stack.clone();
    for e in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.rows()).collect();
        if cfg.shuffle {
            rng.derive(&[SHUFFLE, e as u64]).shuffle(&mut order);
        }
        let mut penalty_sum = 0.0;
        let mut batches = 0;
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select_rows(rows);
            let grads = dbm_gradient(&model, &batch, config, &rng.derive(&[GIBBS, e as u64, b as u64]))?;
            let mut layers = model.layers().to_vec();
            let mut penalty = 0.0;
            for (layer, mut g) in layers.iter_mut().zip(grads) {
                if lambda > 0.0 {
                    g.weights.axpy(2.0 * lambda, &layer.params.weights)?;
                    penalty += lambda * layer.params.weights.as_slice().iter().map(|w| w * w).sum::<f64>();
                }
                layer.params.axpy(-cfg.learning_rate, &g)?;
                guard(layer.params.max_abs(), first_epoch + e)?;
            }
            model = LayerStack::new(layers)?;
            penalty_sum += penalty;
            batches += 1;
        }
        observer(&DbmEvent {
            epoch: first_epoch + e + 1,
            phase: "train",
            model: Some(&model),
            penalty: if batches > 0 { penalty_sum / batches as f64 } else { 0.0 },
        })?;
    }
    Ok(model)
}

/// Greedy pretraining followed by joint training.
pub fn dbm_pretrain_and_train(
    data: &Matrix,
    hidden_sizes: &[usize],
    config: &DbmConfig,
    reg: &RegConfig,
    rng: &RandomSource,
    observer: &mut DbmObserver<'_>,
) -> Result<LayerStack> {
    let pretrained = dbm_pretrain(data, hidden_sizes, config, reg, &rng.derive(&[0]), observer)?;
    let offset = config.pretrain.epochs * hidden_sizes.len();
    dbm_train(&pretrained, data, config, reg, &rng.derive(&[1]), offset, observer)
}
