use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stack::LayerStack;
use crate::error::{Error, Result};
use crate::numerics::{dot, log_sum_exp, sigmoid, Matrix, RandomSource};
use crate::rbm::LayerKind;

const SHUFFLE: u64 = 0x5348;
const HEAD: u64 = 0x4844;
const CHUNK: usize = 8;

/// Anything that scores classes; the prediction is the arg-max score with
/// ties going to the lowest class index.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn scores(&self, x: &[f64]) -> Vec<f64>;

    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `y = a(W x + b)` with `W` of shape outputs × inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .row_iter()
            .zip(&self.bias)
            .map(|(row, &b)| b + dot(row, x))
            .collect()
    }
}

/// Feed-forward classifier: sigmoid hidden layers and a softmax output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ffnn {
    pub hidden: Vec<DenseLayer>,
    pub output: DenseLayer,
}

impl Classifier for Ffnn {
    fn n_classes(&self) -> usize {
        self.output.bias.len()
    }

    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for layer in &self.hidden {
            a = layer.pre_activation(&a).into_iter().map(sigmoid).collect();
        }
        self.output.pre_activation(&a)
    }
}

/// Features with integer class labels.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub features: &'a Matrix,
    pub labels: &'a [usize],
}

impl Labeled<'_> {
    fn check(&self, n_inputs: usize, n_classes: usize) -> Result<()> {
        if self.features.rows() != self.labels.len() || self.features.cols() != n_inputs {
            return Err(Error::ShapeMismatch {
                op: "labeled data",
                left: (self.labels.len(), n_inputs),
                right: self.features.shape(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(())
    }
}

impl Ffnn {
    /// Hidden layers copied from the stack's `(W, c)`; output weights
    /// uniform in `±init_scale`, output biases zero.
    pub fn from_stack(stack: &LayerStack, n_classes: usize, init_scale: f64, rng: &RandomSource) -> Result<Self> {
        if stack.kind() == LayerKind::SoftmaxCounts {
            return Err(Error::Contract(
                "count-input stacks cannot be finetuned; train a logistic head on their features".into(),
            ));
        }
        let hidden: Vec<DenseLayer> = stack
            .layers()
            .iter()
            .map(|l| DenseLayer {
                weights: l.params.weights.clone(),
                bias: l.params.hidden_bias.clone(),
            })
            .collect();
        let top = *stack.sizes().last().expect("non-empty");
        let mut head_rng = rng.derive(&[HEAD]);
        let output = DenseLayer {
            weights: Matrix::from_fn(n_classes, top, |_, _| init_scale * (2.0 * head_rng.uniform() - 1.0)),
            bias: vec![0.0; n_classes],
        };
        Ok(Ffnn { hidden, output })
    }

    /// A softmax regression model with zero weights.
    pub fn logistic(n_inputs: usize, n_classes: usize) -> Self {
        Ffnn {
            hidden: Vec::new(),
            output: DenseLayer::zeros(n_inputs, n_classes),
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden.first().unwrap_or(&self.output).weights.cols()
    }

    fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.hidden.iter().chain(std::iter::once(&self.output))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.hidden.iter_mut().chain(std::iter::once(&mut self.output))
    }

    fn zeros_like(&self) -> Ffnn {
        Ffnn {
            hidden: self.hidden.iter().map(|l| DenseLayer::zeros(l.weights.cols(), l.weights.rows())).collect(),
            output: DenseLayer::zeros(self.output.weights.cols(), self.output.weights.rows()),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.layers()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        let mut it = flat.iter().copied();
        for l in out.layers_mut() {
            for w in l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().ok_or_else(|| Error::Contract("flat vector too short".into()))?;
            }
        }
        if it.next().is_some() {
            return Err(Error::Contract("flat vector too long".into()));
        }
        Ok(out)
    }

    /// Mean cross-entropy.
    pub fn loss(&self, data: Labeled<'_>) -> Result<f64> {
        data.check(self.n_inputs(), self.n_classes())?;
        let total: f64 = data
            .features
            .row_iter()
            .zip(data.labels)
            .map(|(x, &y)| {
                let s = self.scores(x);
                log_sum_exp(&s) - s[y]
            })
            .sum();
        Ok(total / data.labels.len().max(1) as f64)
    }

    fn backprop(&self, x: &[f64], y: usize, skip_below: usize, acc: &mut Ffnn) {
        let mut acts = vec![x.to_vec()];
        for layer in &self.hidden {
            let a = layer.pre_activation(acts.last().expect("input")).into_iter().map(sigmoid).collect();
            acts.push(a);
        }
        let s = self.output.pre_activation(acts.last().expect("input"));
        let lse = log_sum_exp(&s);
        let mut delta: Vec<f64> = s.iter().map(|&z| (z - lse).exp()).collect();
        delta[y] -= 1.0;

        let top = acts.last().expect("input");
        acc.output.weights.add_outer(1.0, &delta, top);
        acc.output.bias.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
        let mut upstream = self.output.weights.matvec_t(&delta).expect("shape");
        for l in (skip_below..self.hidden.len()).rev() {
            let a = &acts[l + 1];
            let d: Vec<f64> = upstream.iter().zip(a).map(|(u, &ai)| u * ai * (1.0 - ai)).collect();
            acc.hidden[l].weights.add_outer(1.0, &d, &acts[l]);
            acc.hidden[l].bias.iter_mut().zip(&d).for_each(|(g, x)| *g += x);
            if l > skip_below {
                upstream = self.hidden[l].weights.matvec_t(&d).expect("shape");
            }
        }
    }

    /// Gradient of the mean cross-entropy, skipping the lowest `frozen`
    /// hidden layers (their entries stay zero).
    pub fn gradient(&self, data: Labeled<'_>, frozen: usize) -> Result<Ffnn> {
        data.check(self.n_inputs(), self.n_classes())?;
        let n = data.labels.len();
        if n == 0 {
            return Err(Error::EmptyMinibatch);
        }
        let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
        let partials: Vec<Ffnn> = starts
            .par_iter()
            .map(|&start| {
                let mut acc = self.zeros_like();
                for i in start..(start + CHUNK).min(n) {
                    self.backprop(data.features.row(i), data.labels[i], frozen, &mut acc);
                }
                acc
            })
            .collect();
        let mut grad = self.zeros_like();
        for p in &partials {
            for (g, x) in grad.layers_mut().zip(p.layers()) {
                g.weights.axpy(1.0, &x.weights)?;
                g.bias.iter_mut().zip(&x.bias).for_each(|(a, b)| *a += b);
            }
        }
        let inv = 1.0 / n as f64;
        for g in grad.layers_mut() {
            g.weights = g.weights.scale(inv);
            g.bias.iter_mut().for_each(|b| *b *= inv);
        }
        Ok(grad)
    }
}

/// Fraction of rows whose arg-max prediction differs from the label.
pub fn error_rate(classifier: &dyn Classifier, data: Labeled<'_>) -> Result<f64> {
    if data.features.rows() != data.labels.len() {
        return Err(Error::ShapeMismatch {
            op: "error_rate",
            left: (data.labels.len(), 1),
            right: data.features.shape(),
        });
    }
    if data.labels.is_empty() {
        return Ok(0.0);
    }
    let wrong = data
        .features
        .row_iter()
        .zip(data.labels)
        .filter(|(x, &y)| classifier.predict(x) != y)
        .count();
    Ok(wrong as f64 / data.labels.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Number of bottom hidden layers kept fixed.
    pub frozen_layers: usize,
    /// Half-width of the uniform output-layer initialization.
    pub head_init_scale: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 300,
            learning_rate: 0.1,
            batch_size: 10,
            seed: 0,
            frozen_layers: 0,
            head_init_scale: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochErrors {
    pub epoch: usize,
    pub loss: f64,
    pub train_error: f64,
    pub valid_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    /// 0 means the initial network was never improved upon.
    pub best_epoch: usize,
    pub best_valid_error: f64,
    /// One entry per epoch, starting with the initial network at epoch 0.
    pub history: Vec<EpochErrors>,
}

/// Cross-entropy minibatch SGD with early stopping: returns the network of
/// the epoch with the lowest validation error (earliest on ties).
pub fn ffnn_finetune(
    net: &Ffnn,
    train: Labeled<'_>,
    valid: Labeled<'_>,
    config: &FinetuneConfig,
) -> Result<(Ffnn, FinetuneReport)> {
    train.check(net.n_inputs(), net.n_classes())?;
    valid.check(net.n_inputs(), net.n_classes())?;
    if config.batch_size == 0 || !(config.learning_rate >= 0.0) {
        return Err(Error::Config("finetuning needs batch_size >= 1 and learning_rate >= 0".into()));
    }
    if config.frozen_layers > net.hidden.len() {
        return Err(Error::Config(format!(
            "cannot freeze {} of {} hidden layers",
            config.frozen_layers,
            net.hidden.len()
        )));
    }
    let rng = RandomSource::new(config.seed, HEAD);
    let record = |epoch: usize, n: &Ffnn| -> Result<EpochErrors> {
        Ok(EpochErrors {
            epoch,
            loss: n.loss(train)?,
            train_error: error_rate(n, train)?,
            valid_error: error_rate(n, valid)?,
        })
    };
    let mut current = net.clone();
    let mut history = vec![record(0, &current)?];
    let mut best = (0, history[0].valid_error, current.clone());
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train.labels.len()).collect();
        rng.derive(&[SHUFFLE, epoch as u64]).shuffle(&mut order);
        for rows in order.chunks(config.batch_size) {
            let x = train.features.select_rows(rows);
            let y: Vec<usize> = rows.iter().map(|&r| train.labels[r]).collect();
            let grad = current.gradient(
                Labeled {
                    features: &x,
                    labels: &y,
                },
                config.frozen_layers,
            )?;
            for (l, (p, g)) in current.layers_mut().zip(grad.layers()).enumerate() {
                if l < config.frozen_layers {
                    continue;
                }
                p.weights.axpy(-config.learning_rate, &g.weights)?;
                p.bias.iter_mut().zip(&g.bias).for_each(|(a, b)| *a -= config.learning_rate * b);
            }
        }
        let row = record(epoch, &current)?;
        if row.valid_error < best.1 {
            best = (epoch, row.valid_error, current.clone());
        }
        history.push(row);
    }
    Ok((
        best.2,
        FinetuneReport {
            best_epoch: best.0,
            best_valid_error: best.1,
            history,
        },
    ))
}

/// Softmax regression from zero weights on fixed features.
pub fn logistic_head(
    train: Labeled<'_>,
    valid: Labeled<'_>,
    n_classes: usize,
    config: &FinetuneConfig,
) -> Result<(Ffnn, FinetuneReport)> {
    ffnn_finetune(&Ffnn::logistic(train.features.cols(), n_classes), train, valid, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deep::StackLayer;
    use crate::rbm::RbmParams;

    fn separable() -> (Matrix, Vec<usize>) {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.1],
            vec![0.2, 0.0],
            vec![0.1, 0.3],
            vec![1.0, 0.9],
            vec![0.8, 1.0],
            vec![0.9, 0.7],
        ])
        .unwrap();
        (x, vec![0, 0, 0, 1, 1, 1])
    }

    fn toy_net(seed: u64) -> Ffnn {
        let mut rng = RandomSource::new(seed, 0);
        let mut layer = |i: usize, o: usize| DenseLayer {
            weights: Matrix::from_fn(o, i, |_, _| rng.normal()),
            bias: (0..o).map(|_| rng.normal() * 0.3).collect(),
        };
        Ffnn {
            hidden: vec![layer(4, 3), layer(3, 3)],
            output: layer(3, 2),
        }
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }

    #[test]
    fn separable_toy_reaches_zero_training_error() {
        let (x, y) = separable();
        let data = Labeled {
            features: &x,
            labels: &y,
        };
        let cfg = FinetuneConfig {
            epochs: 200,
            learning_rate: 0.5,
            batch_size: 2,
            ..FinetuneConfig::default()
        };
        let (net, report) = logistic_head(data, data, 2, &cfg).unwrap();
        assert_eq!(error_rate(&net, data).unwrap(), 0.0);
        assert_eq!(report.best_valid_error, 0.0);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let net = toy_net(4);
        let mut rng = RandomSource::new(8, 0);
        let x = Matrix::from_fn(5, 4, |_, _| rng.uniform());
        let y = vec![0, 1, 1, 0, 1];
        let data = Labeled {
            features: &x,
            labels: &y,
        };
        let grad = net.gradient(data, 0).unwrap().to_flat();
        let flat = net.to_flat();
        let eps = 1e-6;
        for k in 0..flat.len() {
            let mut up = flat.clone();
            up[k] += eps;
            let mut down = flat.clone();
            down[k] -= eps;
            let fd = (net.with_flat(&up).unwrap().loss(data).unwrap() - net.with_flat(&down).unwrap().loss(data).unwrap())
                / (2.0 * eps);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-3);
            assert!(rel < 1e-5, "param {k}: fd {fd} analytic {}", grad[k]);
        }
    }

    #[test]
    fn frozen_stack_reduces_to_logistic_head() {
        let mut rng = RandomSource::new(2, 0);
        let params = RbmParams::random_init(4, 3, &mut rng);
        let stack = crate::deep::LayerStack::new(vec![StackLayer {
            kind: LayerKind::Bernoulli,
            params,
        }])
        .unwrap();
        let x = Matrix::from_fn(12, 4, |_, _| if rng.uniform() < 0.5 { 1.0 } else { 0.0 });
        let y: Vec<usize> = (0..12).map(|i| i % 2).collect();
        let data = Labeled {
            features: &x,
            labels: &y,
        };
        let cfg = FinetuneConfig {
            epochs: 5,
            frozen_layers: 1,
            ..FinetuneConfig::default()
        };
        let mut net = Ffnn::from_stack(&stack, 2, 0.01, &RandomSource::new(0, 0)).unwrap();
        net.output = DenseLayer::zeros(3, 2);
        let (tuned, report) = ffnn_finetune(&net, data, data, &cfg).unwrap();
        assert_eq!(tuned.hidden, net.hidden);

        let feats = stack.features(&x).unwrap();
        let fdata = Labeled {
            features: &feats,
            labels: &y,
        };
        let head_cfg = FinetuneConfig {
            frozen_layers: 0,
            ..cfg
        };
        let (head, head_report) = logistic_head(fdata, fdata, 2, &head_cfg).unwrap();
        assert_eq!(tuned.output, head.output);
        assert_eq!(report.history, head_report.history);
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let net = toy_net(1);
        let mut rng = RandomSource::new(3, 0);
        let x = Matrix::from_fn(30, 4, |_, _| rng.uniform());
        let y: Vec<usize> = (0..30).map(|_| rng.below(2)).collect();
        let vx = Matrix::from_fn(20, 4, |_, _| rng.uniform());
        let vy: Vec<usize> = (0..20).map(|_| rng.below(2)).collect();
        let cfg = FinetuneConfig {
            epochs: 15,
            learning_rate: 0.5,
            ..FinetuneConfig::default()
        };
        let (best, report) = ffnn_finetune(
            &net,
            Labeled {
                features: &x,
                labels: &y,
            },
            Labeled {
                features: &vx,
                labels: &vy,
            },
            &cfg,
        )
        .unwrap();
        let min = report.history.iter().map(|h| h.valid_error).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_valid_error, min);
        let vdata = Labeled {
            features: &vx,
            labels: &vy,
        };
        assert_eq!(error_rate(&best, vdata).unwrap(), min);
    }

    #[test]
    fn label_mismatch_is_an_error() {
        let (x, _) = separable();
        let y = vec![0, 1];
        let data = Labeled {
            features: &x,
            labels: &y,
        };
        assert!(logistic_head(data, data, 2, &FinetuneConfig::default()).is_err());
    }
}
