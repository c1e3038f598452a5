use crate::error::{Error, Result};
use crate::numerics::{log1p_exp, Matrix, RandomSource};
use crate::rbm::{LayerKind, RbmParams, UnitModel};

fn check_binary(params: &RbmParams, data: &Matrix) -> Result<()> {
    if data.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "pseudo_likelihood",
            left: (data.rows(), params.n_visible()),
            right: data.shape(),
        });
    }
    if let Some(pos) = data.as_slice().iter().position(|&x| x != 0.0 && x != 1.0) {
        return Err(Error::Data(format!(
            "pseudo-likelihood needs binary data; entry ({}, {}) is {}",
            pos / data.cols(),
            pos % data.cols(),
            data.as_slice()[pos]
        )));
    }
    Ok(())
}

/// `log P(v_j | v_{−j}) = −log(1 + e^{F(v) − F(v^{(j)})})`, where `v^{(j)}`
/// is `v` with bit `j` flipped.
fn conditional(model: &UnitModel<'_>, v: &mut [f64], f_v: f64, j: usize) -> f64 {
    v[j] = 1.0 - v[j];
    let f_flip = model.free_energy(v);
    v[j] = 1.0 - v[j];
    -log1p_exp(f_v - f_flip)
}

/// Mean over rows of `Σ_j log P(v_j | v_{−j})`.
pub fn pseudo_likelihood(params: &RbmParams, data: &Matrix) -> Result<f64> {
    check_binary(params, data)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let mut total = 0.0;
    for row in data.row_iter() {
        let mut v = row.to_vec();
        let f_v = model.free_energy(&v);
        total += (0..v.len()).map(|j| conditional(&model, &mut v, f_v, j)).sum::<f64>();
    }
    Ok(total / data.rows().max(1) as f64)
}

/// Unbiased single-flip estimate: one uniformly chosen `j` per row, scaled
/// by `J`.
pub fn stochastic_pseudo_likelihood(params: &RbmParams, data: &Matrix, rng: &mut RandomSource) -> Result<f64> {
    check_binary(params, data)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let n_visible = params.n_visible();
    let mut total = 0.0;
    for row in data.row_iter() {
        let mut v = row.to_vec();
        let f_v = model.free_energy(&v);
        let j = rng.below(n_visible);
        total += n_visible as f64 * conditional(&model, &mut v, f_v, j);
    }
    Ok(total / data.rows().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::{enumerate_states, energy, state_index};

    fn random_params(seed: u64) -> RbmParams {
        let mut rng = RandomSource::new(seed, 0);
        let mut p = RbmParams::random_init(5, 3, &mut rng);
        p.visible_bias.iter_mut().for_each(|b| *b = rng.normal());
        p.hidden_bias.iter_mut().for_each(|c| *c = rng.normal());
        p
    }

    #[test]
    fn zero_model_gives_j_log_half() {
        let p = RbmParams::zeros(7, 3);
        let data = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(pseudo_likelihood(&p, &data).unwrap(), -7.0 * 2f64.ln());
    }

    #[test]
    fn full_sum_matches_joint_table() {
        for seed in 0..5 {
            let p = random_params(seed);
            // Unnormalized P(v) from the joint table.
            let joint: Vec<f64> = enumerate_states(5)
                .map(|v| enumerate_states(3).map(|h| (-energy(&p, &v, &h).unwrap()).exp()).sum())
                .collect();
            let data = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0, 1.0, 1.0]]).unwrap();
            let mut expected = 0.0;
            for v in data.row_iter() {
                for j in 0..5 {
                    let mut f = v.to_vec();
                    f[j] = 1.0 - f[j];
                    let a = joint[state_index(v)];
                    expected += (a / (a + joint[state_index(&f)])).ln();
                }
            }
            expected /= 2.0;
            let got = pseudo_likelihood(&p, &data).unwrap();
            assert!((got - expected).abs() <= 1e-10 * expected.abs(), "{got} vs {expected}");
        }
    }

    #[test]
    fn stochastic_variant_is_unbiased() {
        let p = random_params(9);
        let data = Matrix::from_rows(&[vec![1.0, 0.0, 1.0, 1.0, 0.0]]).unwrap();
        let full = pseudo_likelihood(&p, &data).unwrap();
        let mut rng = RandomSource::new(1, 0);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| stochastic_pseudo_likelihood(&p, &data, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let se = (var / draws.len() as f64).sqrt();
        assert!((mean - full).abs() < 3.0 * se, "mean {mean} full {full} se {se}");
    }

    #[test]
    fn rejects_non_binary_data() {
        let p = RbmParams::zeros(2, 1);
        let data = Matrix::from_rows(&[vec![0.5, 1.0]]).unwrap();
        assert!(matches!(pseudo_likelihood(&p, &data), Err(Error::Data(_))));
    }
}
