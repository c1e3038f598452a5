use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, Matrix};
use crate::rbm::{LayerKind, RbmParams};

use super::ReferenceWeights;

/// Smallest reference magnitude used as an adaptive-L¹ denominator.
pub const ADAPTIVE_L1_FLOOR: f64 = 1e-8;

/// Gradient `2λW` and value `λ Σ W²`.
pub fn l2_penalty_gradient(weights: &Matrix, lambda: f64) -> (Matrix, f64) {
    let value = lambda * weights.as_slice().iter().map(|w| w * w).sum::<f64>();
    (weights.scale(2.0 * lambda), value)
}

/// Subgradient and value of `(μ / IJ) Σ |W_ij| / |Ŵ_ij|`, with `sign(0) = 0`
/// and denominators clamped below at [`ADAPTIVE_L1_FLOOR`].
pub fn adaptive_l1_penalty_gradient(
    weights: &Matrix,
    reference: Option<&ReferenceWeights>,
    mu: f64,
) -> Result<(Matrix, f64)> {
    let reference = reference.ok_or(Error::MissingReference)?;
    let r = reference.matrix();
    if r.shape() != weights.shape() {
        return Err(Error::ShapeMismatch {
            op: "adaptive_l1",
            left: weights.shape(),
            right: r.shape(),
        });
    }
    let scale = mu / weights.len().max(1) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(weights.len());
    for (&w, &w_hat) in weights.as_slice().iter().zip(r.as_slice()) {
        let denom = w_hat.abs().max(ADAPTIVE_L1_FLOOR);
        value += w.abs() / denom;
        let sign = if w > 0.0 {
            1.0
        } else if w < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.push(scale * sign / denom);
    }
    Ok((Matrix::from_vec(weights.rows(), weights.cols(), grad)?, scale * value))
}

/// L² plus adaptive L¹. Needs the phase-one reference weights.
pub fn l2_plus_al1(
    weights: &Matrix,
    reference: Option<&ReferenceWeights>,
    lambda: f64,
    mu: f64,
) -> Result<(Matrix, f64)> {
    if reference.is_none() {
        return Err(Error::Contract(
            "L2+AL1 retraining requested before reference weights were trained".into(),
        ));
    }
    let (g1, v1) = l2_penalty_gradient(weights, lambda);
    let (g2, v2) = adaptive_l1_penalty_gradient(weights, reference, mu)?;
    Ok((g1.add(&g2)?, v1 + v2))
}

/// `∂/∂q_i` of `coefficient · Σ_i (target − q_i)²`.
pub fn sparsity_activation_gradient(mean_activations: &[f64], target: f64, coefficient: f64) -> Vec<f64> {
    mean_activations
        .iter()
        .map(|&q| 2.0 * coefficient * (q - target))
        .collect()
}

#[derive(Clone, Debug)]
pub struct SparsityPenalty {
    pub hidden_bias: Vec<f64>,
    pub weights: Matrix,
    pub value: f64,
}

/// Sparsity penalty on the batch-mean hidden activations
/// `q_i = mean_n σ(a_i(v_n))`, with gradients pushed through the sigmoid to
/// the hidden biases and weights.
pub fn sparsity_penalty_gradient(
    kind: LayerKind,
    params: &RbmParams,
    batch: &Matrix,
    target: f64,
    coefficient: f64,
) -> Result<SparsityPenalty> {
    if batch.cols() != params.n_visible() {
        return Err(Error::ShapeMismatch {
            op: "sparsity penalty",
            left: (batch.rows(), params.n_visible()),
            right: batch.shape(),
        });
    }
    let (i_count, j_count) = (params.n_hidden(), params.n_visible());
    let n = batch.rows().max(1) as f64;
    let mut means = vec![0.0; i_count];
    // Per-example sigmoid values and derivatives, needed again for the chain rule.
    let mut acts = Vec::with_capacity(batch.rows());
    for v in batch.row_iter() {
        let scale = match kind {
            LayerKind::SoftmaxCounts => v.iter().sum(),
            _ => 1.0,
        };
        let s: Vec<f64> = params
            .weights
            .row_iter()
            .zip(&params.hidden_bias)
            .map(|(row, &c)| sigmoid(scale * c + dot(row, v)))
            .collect();
        for (m, &x) in means.iter_mut().zip(&s) {
            *m += x / n;
        }
        acts.push((scale, s));
    }
    let value = coefficient * means.iter().map(|q| (target - q) * (target - q)).sum::<f64>();
    let dq = sparsity_activation_gradient(&means, target, coefficient);
    let mut hidden_bias = vec![0.0; i_count];
    let mut weights = Matrix::zeros(i_count, j_count);
    for (v, (scale, s)) in batch.row_iter().zip(&acts) {
        for i in 0..i_count {
            let d = dq[i] * s[i] * (1.0 - s[i]) / n;
            if d == 0.0 {
                continue;
            }
            hidden_bias[i] += d * scale;
            for (g, &x) in weights.row_mut(i).iter_mut().zip(v) {
                *g += d * x;
            }
        }
    }
    Ok(SparsityPenalty {
        hidden_bias,
        weights,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RandomSource;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = RandomSource::new(seed, 0);
        Matrix::from_fn(rows, cols, |_, _| rng.uniform() * 2.0 - 1.0)
    }

    #[test]
    fn l2_basic_cases() {
        let w = random_matrix(3, 4, 1);
        let (g, v) = l2_penalty_gradient(&w, 0.0);
        assert_eq!(g, Matrix::zeros(3, 4));
        assert_eq!(v, 0.0);
        let (g, _) = l2_penalty_gradient(&Matrix::identity(2), 0.5);
        assert_eq!(g, Matrix::identity(2));
    }

    #[test]
    fn l2_finite_differences() {
        let w = random_matrix(3, 4, 2);
        let lambda = 0.3;
        let (g, _) = l2_penalty_gradient(&w, lambda);
        let eps = 1e-6;
        for d in 0..w.len() {
            let mut up = w.clone();
            up.as_mut_slice()[d] += eps;
            let mut dn = w.clone();
            dn.as_mut_slice()[d] -= eps;
            let num = (l2_penalty_gradient(&up, lambda).1 - l2_penalty_gradient(&dn, lambda).1) / (2.0 * eps);
            let exact = g.as_slice()[d];
            assert!((num - exact).abs() / exact.abs().max(1e-3) < 1e-6);
        }
    }

    #[test]
    fn adaptive_l1_equals_mu_at_reference() {
        let w = random_matrix(3, 4, 3);
        let r = ReferenceWeights::new(w.clone());
        let (_, v) = adaptive_l1_penalty_gradient(&w, Some(&r), 0.07).unwrap();
        assert!((v - 0.07).abs() < 1e-12);
        let (g, v) = adaptive_l1_penalty_gradient(&Matrix::zeros(3, 4), Some(&r), 0.07).unwrap();
        assert_eq!(g, Matrix::zeros(3, 4));
        assert_eq!(v, 0.0);
    }

    #[test]
    fn adaptive_l1_scalar_loop() {
        let w = random_matrix(4, 5, 4);
        let r = random_matrix(4, 5, 5);
        let mu = 0.05;
        let (_, v) = adaptive_l1_penalty_gradient(&w, Some(&ReferenceWeights::new(r.clone())), mu).unwrap();
        let mut expect = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                expect += w.get(i, j).abs() / r.get(i, j).abs();
            }
        }
        expect *= mu / 20.0;
        assert!(((v - expect) / expect).abs() < 1e-10);
    }

    #[test]
    fn adaptive_l1_finite_differences_away_from_zero() {
        let w = random_matrix(3, 3, 6).map(|x| if x.abs() < 0.05 { 0.5 } else { x });
        let r = ReferenceWeights::new(random_matrix(3, 3, 7));
        let mu = 0.2;
        let (g, _) = adaptive_l1_penalty_gradient(&w, Some(&r), mu).unwrap();
        let eps = 1e-6;
        for d in 0..w.len() {
            let mut up = w.clone();
            up.as_mut_slice()[d] += eps;
            let mut dn = w.clone();
            dn.as_mut_slice()[d] -= eps;
            let f = |m: &Matrix| adaptive_l1_penalty_gradient(m, Some(&r), mu).unwrap().1;
            let num = (f(&up) - f(&dn)) / (2.0 * eps);
            let exact = g.as_slice()[d];
            assert!((num - exact).abs() / exact.abs() < 1e-5);
        }
    }

    #[test]
    fn adaptive_l1_clamps_tiny_reference() {
        let w = Matrix::filled(1, 1, 1.0);
        let r = ReferenceWeights::new(Matrix::zeros(1, 1));
        let (g, v) = adaptive_l1_penalty_gradient(&w, Some(&r), 1.0).unwrap();
        assert!(g.is_finite());
        assert_eq!(v, 1.0 / ADAPTIVE_L1_FLOOR);
    }

    #[test]
    fn missing_reference_is_an_error() {
        let w = Matrix::zeros(2, 2);
        assert!(matches!(adaptive_l1_penalty_gradient(&w, None, 0.1), Err(Error::MissingReference)));
        assert!(matches!(l2_plus_al1(&w, None, 0.1, 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn combined_penalty_composes() {
        let w = random_matrix(3, 4, 8);
        let r = ReferenceWeights::new(random_matrix(3, 4, 9));
        let (g0, v0) = l2_plus_al1(&w, Some(&r), 0.2, 0.0).unwrap();
        let (g_l2, v_l2) = l2_penalty_gradient(&w, 0.2);
        assert_eq!(g0, g_l2);
        assert_eq!(v0, v_l2);
        let (_, v) = l2_plus_al1(&w, Some(&ReferenceWeights::new(w.clone())), 0.0, 0.4).unwrap();
        assert!((v - 0.4).abs() < 1e-12);
        let (g, v) = l2_plus_al1(&w, Some(&r), 0.2, 0.3).unwrap();
        let (g_al1, v_al1) = adaptive_l1_penalty_gradient(&w, Some(&r), 0.3).unwrap();
        assert_eq!(g, g_l2.add(&g_al1).unwrap());
        assert_eq!(v, v_l2 + v_al1);
    }

    #[test]
    fn sparsity_zero_cases() {
        assert_eq!(sparsity_activation_gradient(&[0.02, 0.02], 0.02, 10.0), vec![0.0, 0.0]);
        let mut rng = RandomSource::new(1, 0);
        let p = RbmParams::random_init(4, 3, &mut rng);
        let batch = random_matrix(5, 4, 10).map(|x| (x > 0.0) as u8 as f64);
        let s = sparsity_penalty_gradient(LayerKind::Bernoulli, &p, &batch, 0.02, 0.0).unwrap();
        assert!(s.hidden_bias.iter().all(|&x| x == 0.0));
        assert_eq!(s.weights, Matrix::zeros(3, 4));
    }

    #[test]
    fn sparsity_finite_differences() {
        let mut rng = RandomSource::new(2, 0);
        let p = RbmParams::random_init(4, 3, &mut rng);
        let batch = random_matrix(6, 4, 11).map(|x| (x > 0.0) as u8 as f64);
        let (target, coef) = (0.1, 10.0);
        let s = sparsity_penalty_gradient(LayerKind::Bernoulli, &p, &batch, target, coef).unwrap();
        let value = |q: &RbmParams| {
            sparsity_penalty_gradient(LayerKind::Bernoulli, q, &batch, target, coef)
                .unwrap()
                .value
        };
        let flat = p.to_flat();
        let analytic: Vec<f64> = vec![0.0; 4]
            .into_iter()
            .chain(s.hidden_bias.iter().copied())
            .chain(s.weights.as_slice().iter().copied())
            .collect();
        let eps = 1e-6;
        for d in 0..flat.len() {
            let mut up = flat.clone();
            up[d] += eps;
            let mut dn = flat.clone();
            dn[d] -= eps;
            let num = (value(&p.with_flat(&up).unwrap()) - value(&p.with_flat(&dn).unwrap())) / (2.0 * eps);
            let err = (num - analytic[d]).abs() / analytic[d].abs().max(1e-3);
            assert!(err < 1e-5, "component {d}: {num} vs {}", analytic[d]);
        }
    }
}
