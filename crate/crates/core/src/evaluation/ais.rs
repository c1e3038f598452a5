use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, log1p_exp, sigmoid, Matrix, RandomSource};
use crate::rbm::{free_energy, RbmParams};

const AIS: u64 = 0x4149;

/// Annealed importance sampling settings. The base model has `W = 0`,
/// `c = 0` and visible biases `base_visible_bias` (zeros when absent).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AisConfig {
    pub num_temperatures: usize,
    pub num_runs: usize,
    pub seed: u64,
    pub base_visible_bias: Option<Vec<f64>>,
}

impl Default for AisConfig {
    fn default() -> Self {
        AisConfig {
            num_temperatures: 1000,
            num_runs: 100,
            seed: 0,
            base_visible_bias: None,
        }
    }
}

impl AisConfig {
    /// Uniform schedule `β_k = k/K`, `k = 0..=K`.
    pub fn temperatures(&self) -> Vec<f64> {
        let k = self.num_temperatures;
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_runs < 2 {
            return Err(Error::Config("AIS needs num_runs >= 2 to estimate its variance".into()));
        }
        if self.num_temperatures < 1 {
            return Err(Error::Config("AIS needs num_temperatures >= 1".into()));
        }
        Ok(())
    }
}

/// Base-rate visible biases: logits of the per-feature data means clamped
/// to `[0.001, 0.999]`.
pub fn base_rate_bias(data: &Matrix) -> Vec<f64> {
    data.column_means()
        .into_iter()
        .map(|m| {
            let m = m.clamp(0.001, 0.999);
            (m / (1.0 - m)).ln()
        })
        .collect()
}

/// The base model for `params`: same shape, `W = 0`, `c = 0`.
pub fn base_params(params: &RbmParams, base_visible_bias: Option<&[f64]>) -> Result<RbmParams> {
    let mut base = RbmParams::zeros(params.n_visible(), params.n_hidden());
    if let Some(b) = base_visible_bias {
        if b.len() != params.n_visible() {
            return Err(Error::ShapeMismatch {
                op: "AIS base biases",
                left: (1, params.n_visible()),
                right: (1, b.len()),
            });
        }
        base.visible_bias = b.to_vec();
    }
    Ok(base)
}

/// `ln Z` of the base model, `Σ_j ln(1 + e^{b_j}) + I ln 2`.
fn base_log_partition(base: &RbmParams) -> f64 {
    let zero = base.visible_bias.iter().filter(|&&b| b == 0.0).count();
    let rest: f64 = base.visible_bias.iter().filter(|&&b| b != 0.0).map(|&b| log1p_exp(b)).sum();
    (zero + base.n_hidden()) as f64 * std::f64::consts::LN_2 + rest
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AisEstimate {
    pub log_partition: f64,
    /// Delta-method standard error of `log_partition` over runs.
    pub stderr: f64,
}

fn run(params: &RbmParams, base: &RbmParams, betas: &[f64], rng: &mut RandomSource) -> f64 {
    let b_a = &base.visible_bias;
    let db: Vec<f64> = params.visible_bias.iter().zip(b_a).map(|(b, a)| b - a).collect();
    let mut v: Vec<f64> = b_a.iter().map(|&b| if rng.bernoulli(sigmoid(b)) { 1.0 } else { 0.0 }).collect();
    let mut log_w = 0.0;
    for k in 1..betas.len() {
        let (prev, beta) = (betas[k - 1], betas[k]);
        let act: Vec<f64> = params
            .weights
            .row_iter()
            .zip(&params.hidden_bias)
            .map(|(row, &c)| c + dot(row, &v))
            .collect();
        log_w += (beta - prev) * dot(&db, &v);
        log_w += act.iter().map(|&a| log1p_exp(beta * a) - log1p_exp(prev * a)).sum::<f64>();
        if k + 1 == betas.len() {
            break;
        }
        let h: Vec<f64> = act
            .iter()
            .map(|&a| if rng.bernoulli(sigmoid(beta * a)) { 1.0 } else { 0.0 })
            .collect();
        let wh = params.weights.matvec_t(&h).expect("shape");
        for (j, x) in v.iter_mut().enumerate() {
            let a = (1.0 - beta) * b_a[j] + beta * (params.visible_bias[j] + wh[j]);
            *x = if rng.bernoulli(sigmoid(a)) { 1.0 } else { 0.0 };
        }
    }
    log_w
}

/// AIS estimate of `ln Z` for a binary RBM, annealing the visible marginal
/// `p_β(v) ∝ e^{((1−β)b_A + βb)ᵀv} Π_i (1 + e^{β(c_i + W_i v)})` from the base
/// model (`β = 0`) to `params` (`β = 1`).
pub fn ais_log_partition(params: &RbmParams, config: &AisConfig) -> Result<AisEstimate> {
    config.validate()?;
    let base = base_params(params, config.base_visible_bias.as_deref())?;
    let betas = config.temperatures();
    let root = RandomSource::new(config.seed, AIS);
    let log_w: Vec<f64> = (0..config.num_runs)
        .into_par_iter()
        .map(|r| run(params, &base, &betas, &mut root.derive(&[r as u64])))
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratios: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let n = ratios.len() as f64;
    let mean = ratios.iter().sum::<f64>() / n;
    let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(AisEstimate {
        log_partition: base_log_partition(&base) + max + mean.ln(),
        stderr: (var / n).sqrt() / mean,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AisLikelihood {
    /// Mean of `−F(v) − ln Ẑ` over rows.
    pub log_likelihood: f64,
    pub estimate: AisEstimate,
}

pub fn ais_log_likelihood(params: &RbmParams, data: &Matrix, config: &AisConfig) -> Result<AisLikelihood> {
    let estimate = ais_log_partition(params, config)?;
    Ok(AisLikelihood {
        log_likelihood: log_likelihood_given(params, data, estimate.log_partition)?,
        estimate,
    })
}

/// Mean `−F(v) − log_z` over the rows of `data`.
pub fn log_likelihood_given(params: &RbmParams, data: &Matrix, log_z: f64) -> Result<f64> {
    let mut total = 0.0;
    for v in data.row_iter() {
        total -= free_energy(params, v)?;
    }
    Ok(total / data.rows().max(1) as f64 - log_z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::exact_log_partition;

    #[test]
    fn base_model_has_zero_variance() {
        let mut base = RbmParams::zeros(6, 4);
        base.visible_bias = vec![0.3, -1.0, 2.0, 0.0, 0.5, -0.2];
        let cfg = AisConfig {
            num_temperatures: 50,
            num_runs: 10,
            base_visible_bias: Some(base.visible_bias.clone()),
            ..AisConfig::default()
        };
        let est = ais_log_partition(&base, &cfg).unwrap();
        assert_eq!(est.stderr, 0.0);
        assert_eq!(est.log_partition, base_log_partition(&base));
        assert!((est.log_partition - exact_log_partition(&base).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn zero_model_partition() {
        let p = RbmParams::zeros(6, 4);
        let est = ais_log_partition(&p, &AisConfig::default()).unwrap();
        assert_eq!(est.log_partition, 10.0 * std::f64::consts::LN_2);
        let data = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]]).unwrap();
        let ll = ais_log_likelihood(&p, &data, &AisConfig::default()).unwrap();
        assert!((ll.log_likelihood + 6.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn close_to_exact_on_small_model() {
        let mut rng = RandomSource::new(3, 0);
        let mut p = RbmParams::random_init(6, 4, &mut rng);
        p.visible_bias.iter_mut().for_each(|b| *b = rng.normal());
        p.hidden_bias.iter_mut().for_each(|c| *c = rng.normal());
        let est = ais_log_partition(&p, &AisConfig::default()).unwrap();
        let exact = exact_log_partition(&p).unwrap();
        assert!((est.log_partition - exact).abs() < 0.1, "{} vs {exact}", est.log_partition);
    }

    #[test]
    fn too_few_runs_rejected() {
        let cfg = AisConfig {
            num_runs: 1,
            ..AisConfig::default()
        };
        assert!(ais_log_partition(&RbmParams::zeros(2, 2), &cfg).is_err());
    }

    #[test]
    fn base_rate_clamps_extremes() {
        let data = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let b = base_rate_bias(&data);
        assert!((b[0] - (0.001f64 / 0.999).ln()).abs() < 1e-12);
        assert!((b[1] - (0.999f64 / 0.001).ln()).abs() < 1e-12);
        assert_eq!(b[2], 0.0);
    }
}
