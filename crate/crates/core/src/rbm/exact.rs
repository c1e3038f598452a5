use super::units::UnitModel;
use super::{LayerKind, Mask, RbmParams};
use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Matrix};

/// Largest `I + J` accepted by the enumeration routines.
pub const ENUMERATION_LIMIT: usize = 24;

/// All binary vectors of length `n`, in index order (bit `j` of the index is
/// entry `j`).
pub fn enumerate_states(n: usize) -> impl Iterator<Item = Vec<f64>> {
    (0..1usize << n).map(move |idx| (0..n).map(|j| ((idx >> j) & 1) as f64).collect())
}

/// Index of a binary vector in the order of [`enumerate_states`].
pub fn state_index(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(0, |acc, (j, &x)| acc | (usize::from(x != 0.0) << j))
}

fn guard(params: &RbmParams) -> Result<()> {
    let units = params.n_visible() + params.n_hidden();
    if units > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            units,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

fn neg_free_energies(params: &RbmParams, mask: Option<&Mask>) -> Result<Vec<f64>> {
    guard(params)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, mask)?;
    Ok(enumerate_states(params.n_visible()).map(|v| -model.free_energy(&v)).collect())
}

/// `ln Z` by summing `e^{−F(v)}` over all `2^J` visible states.
pub fn exact_log_partition(params: &RbmParams) -> Result<f64> {
    exact_log_partition_masked(params, None)
}

/// `ln Z` of the RBM under a fixed realized mask.
pub fn exact_log_partition_masked(params: &RbmParams, mask: Option<&Mask>) -> Result<f64> {
    Ok(log_sum_exp(&neg_free_energies(params, mask)?))
}

/// `P(v)` for every visible state, in [`enumerate_states`] order.
pub fn visible_distribution(params: &RbmParams) -> Result<Vec<f64>> {
    let nf = neg_free_energies(params, None)?;
    let log_z = log_sum_exp(&nf);
    Ok(nf.into_iter().map(|x| (x - log_z).exp()).collect())
}

fn check_data(params: &RbmParams, data: &Matrix) -> Result<()> {
    if data.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "exact evaluation",
            left: (data.rows(), params.n_visible()),
            right: data.shape(),
        });
    }
    if data.rows() == 0 {
        return Err(Error::Data("dataset is empty".into()));
    }
    Ok(())
}

/// Mean of `ln P(v_n)` over the dataset.
pub fn exact_log_likelihood(params: &RbmParams, data: &Matrix) -> Result<f64> {
    check_data(params, data)?;
    let log_z = exact_log_partition(params)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let total: f64 = data.row_iter().map(|v| -model.free_energy(v) - log_z).sum();
    Ok(total / data.rows() as f64)
}

/// Exact gradient of the mean negative log-likelihood:
/// `mean_n ∂F(v_n)/∂θ − Σ_v P(v) ∂F(v)/∂θ`.
pub fn exact_gradient(params: &RbmParams, data: &Matrix) -> Result<RbmParams> {
    check_data(params, data)?;
    let probs = visible_distribution(params)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let mut grad = RbmParams::zeros(params.n_visible(), params.n_hidden());
    let inv_n = 1.0 / data.rows() as f64;
    for v in data.row_iter() {
        let hp = model.hidden_probs(v);
        model.accumulate_grad(v, &hp, inv_n, &mut grad);
    }
    for (v, p) in enumerate_states(params.n_visible()).zip(probs) {
        let hp = model.hidden_probs(&v);
        model.accumulate_grad(&v, &hp, -p, &mut grad);
    }
    Ok(grad)
}

/// Exact gradient of the cross-entropy `−Σ_v q(v) ln P(v)` for a target
/// distribution `q` given in [`enumerate_states`] order.
pub fn exact_gradient_weighted(params: &RbmParams, target: &[f64]) -> Result<RbmParams> {
    let probs = visible_distribution(params)?;
    if target.len() != probs.len() {
        return Err(Error::ShapeMismatch {
            op: "target distribution",
            left: (probs.len(), 1),
            right: (target.len(), 1),
        });
    }
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let mut grad = RbmParams::zeros(params.n_visible(), params.n_hidden());
    for ((v, p), &q) in enumerate_states(params.n_visible()).zip(probs).zip(target) {
        let hp = model.hidden_probs(&v);
        model.accumulate_grad(&v, &hp, q - p, &mut grad);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;
    use std::f64::consts::LN_2;

    #[test]
    fn zero_model_partition() {
        let p = RbmParams::zeros(6, 4);
        assert!((exact_log_partition(&p).unwrap() - 10.0 * LN_2).abs() < 1e-12);
        let data = Matrix::from_fn(3, 6, |i, j| ((i + j) % 2) as f64);
        assert!((exact_log_likelihood(&p, &data).unwrap() + 6.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn guard_rejects_large_models() {
        let p = RbmParams::zeros(20, 5);
        assert!(matches!(exact_log_partition(&p), Err(Error::EnumerationTooLarge { units: 25, .. })));
    }

    #[test]
    fn distribution_sums_to_one() {
        let mut rng = RandomSource::new(3, 0);
        let p = RbmParams::random_init(5, 3, &mut rng);
        let d = visible_distribution(&p).unwrap();
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn state_index_inverts_enumeration() {
        for (i, s) in enumerate_states(5).enumerate() {
            assert_eq!(state_index(&s), i);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RandomSource::new(31, 0);
        let p = RbmParams::random_init(6, 4, &mut rng);
        let data = Matrix::from_fn(7, 6, |_, _| if rng.uniform() < 0.5 { 1.0 } else { 0.0 });
        let grad = exact_gradient(&p, &data).unwrap().to_flat();
        let flat = p.to_flat();
        let eps = 1e-5;
        for d in 0..flat.len() {
            let mut up = flat.clone();
            up[d] += eps;
            let mut dn = flat.clone();
            dn[d] -= eps;
            let fu = exact_log_likelihood(&p.with_flat(&up).unwrap(), &data).unwrap();
            let fd = exact_log_likelihood(&p.with_flat(&dn).unwrap(), &data).unwrap();
            let numeric = -(fu - fd) / (2.0 * eps);
            let err = (numeric - grad[d]).abs() / numeric.abs().max(grad[d].abs()).max(1e-3);
            assert!(err < 1e-5, "component {d}: {numeric} vs {}", grad[d]);
        }
    }

    #[test]
    fn weighted_gradient_matches_empirical() {
        let mut rng = RandomSource::new(5, 0);
        let p = RbmParams::random_init(3, 2, &mut rng);
        let data = Matrix::from_vec(4, 3, vec![1., 0., 1., 1., 0., 1., 0., 0., 0., 1., 1., 1.]).unwrap();
        let mut q = vec![0.0; 8];
        for v in data.row_iter() {
            q[state_index(v)] += 0.25;
        }
        let a = exact_gradient(&p, &data).unwrap().to_flat();
        let b = exact_gradient_weighted(&p, &q).unwrap().to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
