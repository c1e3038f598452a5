use serde::{Deserialize, Serialize};

use crate::deep::LayerStack;
use crate::error::{Error, Result};
use crate::numerics::{log1p_exp, log_sum_exp, Matrix, RandomSource};
use crate::rbm::{enumerate_states, exact_gradient_weighted, LayerKind, Mask, RbmParams, UnitModel, ENUMERATION_LIMIT};
use crate::regularizers::MaskSpec;

/// Largest number of random mask entries enumerated exactly.
pub const MASK_ENUMERATION_BITS: usize = 16;
/// Monte Carlo mask samples used above [`MASK_ENUMERATION_BITS`].
pub const MASK_SAMPLES: usize = 10_000;

/// Components of the variational bound on `E_m[log P_{DBN}(v | m)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// `E_m[H(P_{DBN_L}(h^L | v, m))]`.
    pub entropy: f64,
    /// `Σ_h E[P(h | v, m) log P_{RBM_{L+1}}(h | m*)]`.
    pub expected_log_prior: f64,
    /// `Σ_h E[P(h | v, m) log P_{DBN_L}(v | h, m)]`.
    pub expected_log_decoder: f64,
    /// Sum of the three components.
    pub total: f64,
    /// Monte Carlo standard error of `total`; zero when masks are enumerated.
    pub stderr: f64,
}

fn check_stack(stack: &LayerStack) -> Result<()> {
    if stack.layers().iter().any(|l| l.kind != LayerKind::Bernoulli) {
        return Err(Error::Contract("exact DBN evaluation needs binary layers".into()));
    }
    let units: usize = stack.sizes().iter().sum();
    if units > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            units,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// Effective weights and hidden gate of a layer under a realized mask.
struct Layer<'a> {
    params: &'a RbmParams,
    weights: Matrix,
    gate: Vec<f64>,
    mask: Option<&'a Mask>,
}

impl<'a> Layer<'a> {
    fn new(params: &'a RbmParams, mask: Option<&'a Mask>) -> Result<Self> {
        let (weights, gate) = match mask {
            None => (params.weights.clone(), vec![1.0; params.n_hidden()]),
            Some(Mask::Edge(m)) => (params.weights.hadamard(m)?, vec![1.0; params.n_hidden()]),
            Some(Mask::Node(g)) => (params.weights.clone(), g.clone()),
        };
        if gate.len() != params.n_hidden() {
            return Err(Error::ShapeMismatch {
                op: "node mask",
                left: (params.n_hidden(), 1),
                right: (gate.len(), 1),
            });
        }
        Ok(Layer {
            params,
            weights,
            gate,
            mask,
        })
    }

    /// `log P(x | y)` for the downward conditional, `y` a hidden state.
    fn log_down(&self, x: &[f64], y: &[f64]) -> f64 {
        let gy: Vec<f64> = y.iter().zip(&self.gate).map(|(a, g)| a * g).collect();
        let act = self.weights.matvec_t(&gy).expect("shape");
        x.iter()
            .zip(act.iter().zip(&self.params.visible_bias))
            .map(|(&xj, (&a, &b))| xj * (a + b) - log1p_exp(a + b))
            .sum()
    }

    /// Unnormalized log hidden marginal; `−∞` for states that switch on a
    /// dropped unit.
    fn log_hidden_unnorm(&self, y: &[f64]) -> f64 {
        if y.iter().zip(&self.gate).any(|(&a, &g)| a != 0.0 && g == 0.0) {
            return f64::NEG_INFINITY;
        }
        let act = self.weights.matvec_t(y).expect("shape");
        crate::numerics::dot(&self.params.hidden_bias, y)
            + act
                .iter()
                .zip(&self.params.visible_bias)
                .map(|(&a, &b)| log1p_exp(a + b))
                .sum::<f64>()
    }

    /// Normalized log visible marginal for every visible state.
    fn log_visible_marginal(&self) -> Result<Vec<f64>> {
        let model = UnitModel::new(LayerKind::Bernoulli, self.params, self.mask)?;
        let nf: Vec<f64> = enumerate_states(self.params.n_visible()).map(|x| -model.free_energy(&x)).collect();
        let z = log_sum_exp(&nf);
        Ok(nf.into_iter().map(|x| x - z).collect())
    }

    fn log_hidden_marginal(&self) -> Vec<f64> {
        let un: Vec<f64> = enumerate_states(self.params.n_hidden()).map(|y| self.log_hidden_unnorm(&y)).collect();
        let z = log_sum_exp(&un);
        un.into_iter().map(|x| x - z).collect()
    }
}

/// Per-mask tables shared by all data rows.
struct Tables {
    /// `log P_{DBN_L}(h^L)`: hidden marginal of layer `L`.
    lower_prior: Vec<f64>,
    /// `log P_{RBM_{L+1}}(h^L)`: visible marginal of the top layer.
    top_prior: Vec<f64>,
    /// For layers `l = 2..=L`: `down[l−2][y][x] = log P(h^{l−1} = x | h^l = y)`.
    down: Vec<Vec<Vec<f64>>>,
}

fn tables(layers: &[Layer<'_>]) -> Result<Tables> {
    let depth = layers.len();
    let lower = &layers[depth - 2];
    let down = layers[1..depth - 1]
        .iter()
        .map(|l| {
            enumerate_states(l.params.n_hidden())
                .map(|y| enumerate_states(l.params.n_visible()).map(|x| l.log_down(&x, &y)).collect())
                .collect()
        })
        .collect();
    Ok(Tables {
        lower_prior: lower.log_hidden_marginal(),
        top_prior: layers[depth - 1].log_visible_marginal()?,
        down,
    })
}

/// `log P_{DBN_L}(v | h^L)` for every `h^L`.
fn log_decoder(layers: &[Layer<'_>], tables: &Tables, v: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = enumerate_states(layers[0].params.n_hidden())
        .map(|h| layers[0].log_down(v, &h))
        .collect();
    for table in &tables.down {
        d = table
            .iter()
            .map(|row| log_sum_exp(&row.iter().zip(&d).map(|(a, b)| a + b).collect::<Vec<_>>()))
            .collect();
    }
    d
}

struct PerMask {
    report: BoundReport,
    log_likelihood: f64,
}

fn evaluate(stack: &LayerStack, masks: &[Option<Mask>], data: &Matrix) -> Result<PerMask> {
    let layers = stack
        .layers()
        .iter()
        .zip(masks)
        .map(|(l, m)| Layer::new(&l.params, m.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let n = data.rows().max(1) as f64;
    if layers.len() == 1 {
        let marginal = layers[0].log_visible_marginal()?;
        let ll = data.row_iter().map(|v| marginal[crate::rbm::state_index(v)]).sum::<f64>() / n;
        return Ok(PerMask {
            report: BoundReport {
                entropy: 0.0,
                expected_log_prior: ll,
                expected_log_decoder: 0.0,
                total: ll,
                stderr: 0.0,
            },
            log_likelihood: ll,
        });
    }
    let t = tables(&layers)?;
    let (mut h_sum, mut prior_sum, mut dec_sum, mut ll_sum) = (0.0, 0.0, 0.0, 0.0);
    for v in data.row_iter() {
        let dec = log_decoder(&layers, &t, v);
        let joint: Vec<f64> = t.lower_prior.iter().zip(&dec).map(|(p, d)| p + d).collect();
        let log_pv = log_sum_exp(&joint);
        for ((&lj, &lp), &d) in joint.iter().zip(&t.top_prior).zip(&dec) {
            if lj == f64::NEG_INFINITY {
                continue;
            }
            let lq = lj - log_pv;
            let q = lq.exp();
            h_sum -= q * lq;
            prior_sum += q * lp;
            dec_sum += q * d;
        }
        ll_sum += log_sum_exp(&t.top_prior.iter().zip(&dec).map(|(p, d)| p + d).collect::<Vec<_>>());
    }
    let report = BoundReport {
        entropy: h_sum / n,
        expected_log_prior: prior_sum / n,
        expected_log_decoder: dec_sum / n,
        total: (h_sum + prior_sum + dec_sum) / n,
        stderr: 0.0,
    };
    Ok(PerMask {
        report,
        log_likelihood: ll_sum / n,
    })
}

/// Random entries of every layer's mask distribution, as `(layer, entry, p)`.
fn random_entries(specs: &[Option<MaskSpec>]) -> Vec<(usize, usize, f64)> {
    specs
        .iter()
        .enumerate()
        .filter_map(|(l, s)| s.as_ref().map(|s| (l, s)))
        .flat_map(|(l, s)| {
            s.values()
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0 && p < 1.0)
                .map(move |(k, &p)| (l, k, p))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn realize(spec: &MaskSpec, values: Vec<f64>) -> Mask {
    if spec.is_node() {
        Mask::Node(values)
    } else {
        let (r, c) = spec.to_matrix().shape();
        Mask::Edge(Matrix::from_vec(r, c, values).expect("shape"))
    }
}

struct Expectation {
    report: BoundReport,
    log_likelihood: f64,
    ll_stderr: f64,
}

fn expectation(
    stack: &LayerStack,
    data: &Matrix,
    specs: &[Option<MaskSpec>],
    rng: &mut RandomSource,
) -> Result<Expectation> {
    check_stack(stack)?;
    if data.cols() != stack.sizes()[0] {
        return Err(Error::ShapeMismatch {
            op: "dbn_bound",
            left: (data.rows(), stack.sizes()[0]),
            right: data.shape(),
        });
    }
    let specs: Vec<Option<MaskSpec>> = if specs.is_empty() {
        vec![None; stack.len()]
    } else if specs.len() == stack.len() {
        for (s, l) in specs.iter().zip(stack.layers()) {
            if let Some(s) = s {
                s.check_shape(l.params.n_hidden(), l.params.n_visible())?;
            }
        }
        specs.to_vec()
    } else {
        return Err(Error::Contract(format!(
            "{} mask distributions for a {}-layer stack",
            specs.len(),
            stack.len()
        )));
    };
    let random = random_entries(&specs);

    let mut samples: Vec<(f64, PerMask)> = Vec::new();
    let exact = random.len() <= MASK_ENUMERATION_BITS;
    if exact {
        for bits in 0..1usize << random.len() {
            let mut weight = 1.0;
            let mut values: Vec<Vec<f64>> = specs
                .iter()
                .map(|s| s.as_ref().map(|s| s.values().iter().map(|&p| if p >= 1.0 { 1.0 } else { 0.0 }).collect()).unwrap_or_default())
                .collect();
            for (b, &(l, k, p)) in random.iter().enumerate() {
                let on = (bits >> b) & 1 == 1;
                values[l][k] = if on { 1.0 } else { 0.0 };
                weight *= if on { p } else { 1.0 - p };
            }
            let masks: Vec<Option<Mask>> = specs
                .iter()
                .zip(values)
                .map(|(s, v)| s.as_ref().map(|s| realize(s, v)))
                .collect();
            samples.push((weight, evaluate(stack, &masks, data)?));
        }
    } else {
        for _ in 0..MASK_SAMPLES {
            let masks: Vec<Option<Mask>> = specs.iter().map(|s| s.as_ref().map(|s| s.sample(rng))).collect();
            samples.push((1.0 / MASK_SAMPLES as f64, evaluate(stack, &masks, data)?));
        }
    }

    let mean = |f: &dyn Fn(&PerMask) -> f64| samples.iter().map(|(w, s)| w * f(s)).sum::<f64>();
    let se = |f: &dyn Fn(&PerMask) -> f64| {
        if exact {
            return 0.0;
        }
        let m = mean(f);
        let n = samples.len() as f64;
        let var = samples.iter().map(|(_, s)| (f(s) - m).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    let entropy = mean(&|s| s.report.entropy);
    let expected_log_prior = mean(&|s| s.report.expected_log_prior);
    let expected_log_decoder = mean(&|s| s.report.expected_log_decoder);
    Ok(Expectation {
        report: BoundReport {
            entropy,
            expected_log_prior,
            expected_log_decoder,
            total: entropy + expected_log_prior + expected_log_decoder,
            stderr: se(&|s| s.report.total),
        },
        log_likelihood: mean(&|s| s.log_likelihood),
        ll_stderr: se(&|s| s.log_likelihood),
    })
}

/// The variational lower bound on the mean masked log-likelihood of the
/// stack's DBN, averaged over the rows of `data`.
///
/// For a stack of layers `1..=L+1` the posterior over `h^L` is the exact
/// posterior of the `L`-layer DBN formed by the lower layers; the top layer
/// supplies the prior. A one-layer stack gives the RBM log-likelihood.
/// `masks` holds one optional distribution per layer (empty for none);
/// masks are enumerated exactly when they have at most
/// [`MASK_ENUMERATION_BITS`] random entries and sampled otherwise.
pub fn dbn_bound(
    stack: &LayerStack,
    data: &Matrix,
    masks: &[Option<MaskSpec>],
    rng: &mut RandomSource,
) -> Result<BoundReport> {
    Ok(expectation(stack, data, masks, rng)?.report)
}

/// Exact mean `E_m[log P_{DBN}(v | m)]` by enumeration, with its Monte Carlo
/// standard error (zero when masks are enumerated).
pub fn dbn_log_likelihood(
    stack: &LayerStack,
    data: &Matrix,
    masks: &[Option<MaskSpec>],
    rng: &mut RandomSource,
) -> Result<(f64, f64)> {
    let e = expectation(stack, data, masks, rng)?;
    Ok((e.log_likelihood, e.ll_stderr))
}

/// Mean over `data` of the exact posterior `P_{DBN_L}(h^L | v)` of the
/// stack below the top layer, over the top layer's visible states in
/// [`enumerate_states`] order.
pub fn aggregated_posterior(stack: &LayerStack, data: &Matrix) -> Result<Vec<f64>> {
    check_stack(stack)?;
    if stack.len() < 2 {
        return Err(Error::Contract("aggregated posterior needs at least two layers".into()));
    }
    if data.cols() != stack.sizes()[0] || data.rows() == 0 {
        return Err(Error::ShapeMismatch {
            op: "aggregated_posterior",
            left: (data.rows().max(1), stack.sizes()[0]),
            right: data.shape(),
        });
    }
    let layers = stack
        .layers()
        .iter()
        .map(|l| Layer::new(&l.params, None))
        .collect::<Result<Vec<_>>>()?;
    let t = tables(&layers)?;
    let mut q = vec![0.0; t.lower_prior.len()];
    let n = data.rows() as f64;
    for v in data.row_iter() {
        let joint: Vec<f64> = t
            .lower_prior
            .iter()
            .zip(log_decoder(&layers, &t, v))
            .map(|(p, d)| p + d)
            .collect();
        let log_pv = log_sum_exp(&joint);
        for (acc, lj) in q.iter_mut().zip(joint) {
            *acc += (lj - log_pv).exp() / n;
        }
    }
    Ok(q)
}

/// Full-batch exact gradient ascent of the bound in the top layer's
/// parameters, which fits the top layer to [`aggregated_posterior`]. Every
/// other layer is left untouched.
pub fn fit_top_layer_exact(stack: &LayerStack, data: &Matrix, learning_rate: f64, steps: usize) -> Result<LayerStack> {
    let target = aggregated_posterior(stack, data)?;
    let mut params = stack.top().params.clone();
    for _ in 0..steps {
        let g = exact_gradient_weighted(&params, &target)?.to_flat();
        let flat: Vec<f64> = params.to_flat().iter().zip(&g).map(|(x, d)| x - learning_rate * d).collect();
        params = params.with_flat(&flat)?;
    }
    let mut layers = stack.layers().to_vec();
    layers.last_mut().expect("non-empty").params = params;
    LayerStack::new(layers)
}
