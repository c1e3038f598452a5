use serde::{Deserialize, Serialize};

use crate::deep::{add_symmetric_layer, LayerStack};
use crate::error::Result;
use crate::evaluation::{ais_log_partition, dbn_bound, pseudo_likelihood, AisConfig};
use crate::numerics::{log_sum_exp, Matrix, RandomSource};
use crate::rbm::{
    energy, enumerate_states, exact_gradient, exact_log_likelihood, exact_log_partition, free_energy, LayerKind,
    RbmParams,
};

/// Sizes and counts for the enumeration cross-checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub seed: u64,
    pub instances: usize,
    pub n_visible: usize,
    pub n_hidden: usize,
    pub data_rows: usize,
    pub ais_instances: usize,
    pub ais_temperatures: usize,
    pub ais_runs: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            seed: 0,
            instances: 20,
            n_visible: 6,
            n_hidden: 4,
            data_rows: 20,
            ais_instances: 5,
            ais_temperatures: 1000,
            ais_runs: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    /// Worst discrepancy over all instances.
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn check(name: &str, worst: f64, tolerance: f64) -> OracleCheck {
    OracleCheck {
        name: name.into(),
        worst,
        tolerance,
        passed: worst < tolerance,
    }
}

fn random_rbm(j: usize, i: usize, rng: &mut RandomSource) -> RbmParams {
    let mut p = RbmParams::random_init(j, i, rng);
    p.weights = p.weights.map(|_| rng.normal());
    p.visible_bias.iter_mut().for_each(|b| *b = 0.5 * rng.normal());
    p.hidden_bias.iter_mut().for_each(|c| *c = 0.5 * rng.normal());
    p
}

fn random_data(n: usize, j: usize, rng: &mut RandomSource) -> Matrix {
    Matrix::from_fn(n, j, |_, _| if rng.bernoulli(0.5) { 1.0 } else { 0.0 })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Cross-check the tractable quantities against brute-force enumeration
/// on small random models.
pub fn run_oracles(cfg: &OracleConfig) -> Result<Vec<OracleCheck>> {
    let (j, i) = (cfg.n_visible, cfg.n_hidden);
    let root = RandomSource::new(cfg.seed, 0x4f52);
    let mut grad_err: f64 = 0.0;
    let mut fe_err: f64 = 0.0;
    let mut pl_err: f64 = 0.0;
    let mut bound_err: f64 = 0.0;
    for k in 0..cfg.instances {
        let mut rng = root.derive(&[k as u64]);
        let p = random_rbm(j, i, &mut rng);
        let data = random_data(cfg.data_rows, j, &mut rng);

        let g = exact_gradient(&p, &data)?;
        let flat = p.to_flat();
        let h = 1e-5;
        for (n, &gn) in g.to_flat().iter().enumerate() {
            let mut up = flat.clone();
            up[n] += h;
            let mut down = flat.clone();
            down[n] -= h;
            let fd = (exact_log_likelihood(&p.with_flat(&up)?, &data)?
                - exact_log_likelihood(&p.with_flat(&down)?, &data)?)
                / (2.0 * h);
            grad_err = grad_err.max(rel(-gn, fd));
        }

        for v in enumerate_states(j) {
            let terms: Vec<f64> = enumerate_states(i).map(|hh| -energy(&p, &v, &hh).expect("shape")).collect();
            fe_err = fe_err.max(rel(-free_energy(&p, &v)?, log_sum_exp(&terms)));
        }

        let mut pl_oracle = 0.0;
        for row in data.row_iter() {
            let log_p = |v: &[f64]| {
                let t: Vec<f64> = enumerate_states(i).map(|hh| -energy(&p, v, &hh).expect("shape")).collect();
                log_sum_exp(&t)
            };
            let here = log_p(row);
            for u in 0..j {
                let mut flip = row.to_vec();
                flip[u] = 1.0 - flip[u];
                pl_oracle += here - log_sum_exp(&[here, log_p(&flip)]);
            }
        }
        pl_oracle /= data.rows() as f64;
        pl_err = pl_err.max(rel(pseudo_likelihood(&p, &data)?, pl_oracle));

        let stack = LayerStack::single(LayerKind::Bernoulli, p.clone());
        let grown = add_symmetric_layer(&stack)?;
        let report = dbn_bound(&grown, &data, &[], &mut rng.derive(&[1]))?;
        bound_err = bound_err.max((report.total - exact_log_likelihood(&p, &data)?).abs());
    }

    let mut ais_err: f64 = 0.0;
    for k in 0..cfg.ais_instances {
        let mut rng = root.derive(&[0x4149, k as u64]);
        let p = random_rbm(j, i, &mut rng);
        let ais = AisConfig {
            num_temperatures: cfg.ais_temperatures,
            num_runs: cfg.ais_runs,
            seed: cfg.seed.wrapping_add(k as u64),
            base_visible_bias: None,
        };
        ais_err = ais_err.max((ais_log_partition(&p, &ais)?.log_partition - exact_log_partition(&p)?).abs());
    }

    Ok(vec![
        check("gradient_vs_finite_differences", grad_err, 1e-5),
        check("free_energy_identity", fe_err, 1e-10),
        check("pseudo_likelihood_vs_enumeration", pl_err, 1e-10),
        check("symmetric_layer_bound", bound_err, 1e-8),
        check("ais_log_partition", ais_err, 0.1),
    ])
}
