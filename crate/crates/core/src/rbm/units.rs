use std::borrow::Cow;

use super::{LayerKind, Mask, RbmParams};
use crate::error::Result;
use crate::numerics::{dot, log1p_exp, sigmoid, Matrix, RandomSource};

/// An RBM layer seen through an optional realized mask.
///
/// Under an edge mask every use of `W` becomes `m ∗ W`; under a node mask
/// hidden unit `i` is multiplied by `m_i` (so units with `m_i = 0` are fixed
/// at zero) and its free-energy term is gated the same way.
pub struct UnitModel<'a> {
    pub kind: LayerKind,
    params: &'a RbmParams,
    weights: Cow<'a, Matrix>,
    gate: Option<&'a [f64]>,
    edge: Option<&'a Matrix>,
}

impl<'a> UnitModel<'a> {
    pub fn new(kind: LayerKind, params: &'a RbmParams, mask: Option<&'a Mask>) -> Result<Self> {
        if let Some(m) = mask {
            m.check(params)?;
        }
        let edge = Mask::edge(mask);
        let weights = match edge {
            Some(m) => Cow::Owned(params.weights.hadamard(m)?),
            None => Cow::Borrowed(&params.weights),
        };
        Ok(UnitModel {
            kind,
            params,
            weights,
            gate: Mask::node_gate(mask),
            edge,
        })
    }

    pub fn params(&self) -> &RbmParams {
        self.params
    }

    /// Effective weights (`m ∗ W` under an edge mask).
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Document length for replicated-softmax layers, 1 otherwise.
    #[inline]
    pub fn bias_scale(&self, v: &[f64]) -> f64 {
        match self.kind {
            LayerKind::SoftmaxCounts => v.iter().sum(),
            _ => 1.0,
        }
    }

    /// `scale·c + W v`.
    pub fn hidden_input(&self, v: &[f64]) -> Vec<f64> {
        let scale = self.bias_scale(v);
        self.weights
            .row_iter()
            .zip(&self.params.hidden_bias)
            .map(|(row, &c)| scale * c + dot(row, v))
            .collect()
    }

    /// `P(h_i = 1 | v)`, times `m_i` under a node mask.
    pub fn hidden_probs(&self, v: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = self.hidden_input(v).into_iter().map(sigmoid).collect();
        if let Some(g) = self.gate {
            p.iter_mut().zip(g).for_each(|(x, &m)| *x *= m);
        }
        p
    }

    /// Mean of the visible conditional given `h`. For replicated softmax the
    /// result is the expected count vector for a document of `doc_len` words.
    pub fn visible_mean(&self, h: &[f64], doc_len: f64) -> Vec<f64> {
        let act = self.visible_activation(h);
        match self.kind {
            LayerKind::Bernoulli => act.into_iter().map(sigmoid).collect(),
            LayerKind::Gaussian => act,
            LayerKind::SoftmaxCounts => {
                let max = act.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = act.iter().map(|&a| (a - max).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| doc_len * x / z).collect()
            }
        }
    }

    /// `b + (m ∗ W)ᵀ h`.
    pub fn visible_activation(&self, h: &[f64]) -> Vec<f64> {
        let mut act = self.params.visible_bias.clone();
        for (i, &hi) in h.iter().enumerate() {
            if hi == 0.0 {
                continue;
            }
            for (a, &w) in act.iter_mut().zip(self.weights.row(i)) {
                *a += hi * w;
            }
        }
        act
    }

    pub fn sample_visible(&self, mean: &[f64], doc_len: f64, rng: &mut RandomSource) -> Vec<f64> {
        match self.kind {
            LayerKind::Bernoulli => sample_binary(mean, rng),
            LayerKind::Gaussian => mean.iter().map(|&m| m + rng.normal()).collect(),
            LayerKind::SoftmaxCounts => {
                let words = doc_len.round() as usize;
                let mut counts = vec![0.0; mean.len()];
                for _ in 0..words {
                    counts[rng.categorical(mean)] += 1.0;
                }
                counts
            }
        }
    }

    pub fn free_energy(&self, v: &[f64]) -> f64 {
        let visible_term = match self.kind {
            LayerKind::Gaussian => {
                v.iter()
                    .zip(&self.params.visible_bias)
                    .map(|(&x, &b)| 0.5 * (x - b) * (x - b))
                    .sum::<f64>()
            }
            _ => -dot(&self.params.visible_bias, v),
        };
        let input = self.hidden_input(v);
        let hidden_term: f64 = match self.gate {
            Some(g) => input.iter().zip(g).map(|(&x, &m)| m * log1p_exp(x)).sum(),
            None => input.iter().map(|&x| log1p_exp(x)).sum(),
        };
        visible_term - hidden_term
    }

    /// `grad += alpha · ∂F(v)/∂θ`, where `hidden` are the (gated) hidden
    /// probabilities at `v`.
    pub fn accumulate_grad(&self, v: &[f64], hidden: &[f64], alpha: f64, grad: &mut RbmParams) {
        match self.kind {
            LayerKind::Gaussian => {
                for ((g, &x), &b) in grad.visible_bias.iter_mut().zip(v).zip(&self.params.visible_bias) {
                    *g -= alpha * (x - b);
                }
            }
            _ => {
                for (g, &x) in grad.visible_bias.iter_mut().zip(v) {
                    *g -= alpha * x;
                }
            }
        }
        let scale = self.bias_scale(v);
        for (g, &hp) in grad.hidden_bias.iter_mut().zip(hidden) {
            *g -= alpha * scale * hp;
        }
        match self.edge {
            None => grad.weights.add_outer(-alpha, hidden, v),
            Some(m) => {
                for (i, &hp) in hidden.iter().enumerate() {
                    let s = -alpha * hp;
                    if s == 0.0 {
                        continue;
                    }
                    let mrow = m.row(i);
                    for ((g, &x), &mij) in grad.weights.row_mut(i).iter_mut().zip(v).zip(mrow) {
                        *g += s * x * mij;
                    }
                }
            }
        }
    }
}

pub(crate) fn sample_binary(p: &[f64], rng: &mut RandomSource) -> Vec<f64> {
    p.iter().map(|&pi| if rng.bernoulli(pi) { 1.0 } else { 0.0 }).collect()
}

/// `E(v, h) = −bᵀv − cᵀh − hᵀWv` for a binary RBM.
pub fn energy(params: &RbmParams, v: &[f64], h: &[f64]) -> Result<f64> {
    params.check_visible(v)?;
    params.check_hidden(h)?;
    let wv = params.weights.matvec(v)?;
    Ok(-dot(&params.visible_bias, v) - dot(&params.hidden_bias, h) - dot(h, &wv))
}

/// `F(v) = −bᵀv − Σ_i ln(1 + e^{c_i + W_i· v})`.
pub fn free_energy(params: &RbmParams, v: &[f64]) -> Result<f64> {
    free_energy_masked(params, v, None)
}

/// Free energy under a realized mask; with a node mask this is
/// `−bᵀv − Σ_i m_i ln(1 + e^{c_i + W_i· v})`.
pub fn free_energy_masked(params: &RbmParams, v: &[f64], mask: Option<&Mask>) -> Result<f64> {
    params.check_visible(v)?;
    Ok(UnitModel::new(LayerKind::Bernoulli, params, mask)?.free_energy(v))
}

/// `∂F(v)/∂θ` for a binary RBM.
pub fn free_energy_gradient(params: &RbmParams, v: &[f64]) -> Result<RbmParams> {
    params.check_visible(v)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, None)?;
    let mut grad = RbmParams::zeros(params.n_visible(), params.n_hidden());
    let hp = model.hidden_probs(v);
    model.accumulate_grad(v, &hp, 1.0, &mut grad);
    Ok(grad)
}

/// `P(h_i = 1 | v) = σ(c_i + W_i· v)`.
pub fn cond_h_given_v(params: &RbmParams, v: &[f64]) -> Result<Vec<f64>> {
    params.check_visible(v)?;
    Ok(UnitModel::new(LayerKind::Bernoulli, params, None)?.hidden_probs(v))
}

/// `P(v_j = 1 | h) = σ(b_j + W_·jᵀ h)`.
pub fn cond_v_given_h(params: &RbmParams, h: &[f64]) -> Result<Vec<f64>> {
    params.check_hidden(h)?;
    Ok(UnitModel::new(LayerKind::Bernoulli, params, None)?.visible_mean(h, 1.0))
}

/// Visible conditional mean for any layer kind.
pub fn visible_mean(kind: LayerKind, params: &RbmParams, h: &[f64], doc_len: f64) -> Result<Vec<f64>> {
    params.check_hidden(h)?;
    Ok(UnitModel::new(kind, params, None)?.visible_mean(h, doc_len))
}

/// Row-wise hidden probabilities for a whole design matrix.
pub fn hidden_probabilities(kind: LayerKind, params: &RbmParams, data: &Matrix) -> Result<Matrix> {
    if data.cols() != params.n_visible() {
        return Err(crate::Error::ShapeMismatch {
            op: "hidden_probabilities",
            left: (data.rows(), params.n_visible()),
            right: data.shape(),
        });
    }
    let model = UnitModel::new(kind, params, None)?;
    let mut out = Vec::with_capacity(data.rows() * params.n_hidden());
    for row in data.row_iter() {
        out.extend(model.hidden_probs(row));
    }
    Matrix::from_vec(data.rows(), params.n_hidden(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbm::enumerate_states;
    use std::f64::consts::LN_2;

    fn random_params(j: usize, i: usize, seed: u64) -> RbmParams {
        let mut rng = RandomSource::new(seed, 0);
        let mut p = RbmParams::random_init(j, i, &mut rng);
        for b in p.visible_bias.iter_mut().chain(p.hidden_bias.iter_mut()) {
            *b = rng.uniform() * 2.0 - 1.0;
        }
        p
    }

    #[test]
    fn zero_params_zero_energy() {
        let p = RbmParams::zeros(3, 2);
        assert_eq!(energy(&p, &[1.0, 0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn all_ones_energy() {
        let mut p = RbmParams::zeros(3, 2);
        p.weights = Matrix::filled(2, 3, 1.0);
        assert_eq!(energy(&p, &[1.0; 3], &[1.0; 2]).unwrap(), -6.0);
    }

    #[test]
    fn energy_matches_scalar_loop() {
        let p = random_params(4, 3, 17);
        let v = [1.0, 0.0, 1.0, 1.0];
        let h = [0.0, 1.0, 1.0];
        let mut e = 0.0;
        for j in 0..4 {
            e -= p.visible_bias[j] * v[j];
        }
        for i in 0..3 {
            e -= p.hidden_bias[i] * h[i];
            for j in 0..4 {
                e -= h[i] * p.weights.get(i, j) * v[j];
            }
        }
        assert!((energy(&p, &v, &h).unwrap() - e).abs() < 1e-12);
    }

    #[test]
    fn zero_params_free_energy() {
        let p = RbmParams::zeros(4, 5);
        let f = free_energy(&p, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!((f + 5.0 * LN_2).abs() < 1e-12);
        assert!((f + 3.465_736).abs() < 1e-6);
    }

    #[test]
    fn single_hidden_unit_free_energy() {
        let mut p = RbmParams::zeros(3, 1);
        p.visible_bias[0] = 1.0;
        for v1 in [0.0, 1.0] {
            let f = free_energy(&p, &[v1, 1.0, 0.0]).unwrap();
            assert!((f - (-v1 - LN_2)).abs() < 1e-12);
        }
    }

    #[test]
    fn free_energy_marginalizes_hidden() {
        let p = random_params(4, 3, 5);
        for v in enumerate_states(4) {
            let lhs = (-free_energy(&p, &v).unwrap()).exp();
            let rhs: f64 = enumerate_states(3).map(|h| (-energy(&p, &v, &h).unwrap()).exp()).sum();
            assert!(((lhs - rhs) / rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn conditionals_at_zero_are_half() {
        let p = RbmParams::zeros(3, 2);
        assert_eq!(cond_h_given_v(&p, &[1.0, 0.0, 1.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(cond_v_given_h(&p, &[1.0, 0.0]).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn saturated_hidden_bias() {
        let mut p = RbmParams::zeros(2, 2);
        p.hidden_bias[0] = 30.0;
        assert!(cond_h_given_v(&p, &[0.0, 1.0]).unwrap()[0] > 1.0 - 1e-13);
    }

    #[test]
    fn conditionals_match_joint_table() {
        let p = random_params(3, 2, 23);
        let v = [1.0, 0.0, 1.0];
        let joint: Vec<(Vec<f64>, f64)> = enumerate_states(2)
            .map(|h| {
                let w = (-energy(&p, &v, &h).unwrap()).exp();
                (h, w)
            })
            .collect();
        let z: f64 = joint.iter().map(|(_, w)| w).sum();
        let probs = cond_h_given_v(&p, &v).unwrap();
        for i in 0..2 {
            let m: f64 = joint.iter().filter(|(h, _)| h[i] == 1.0).map(|(_, w)| w).sum::<f64>() / z;
            assert!((m - probs[i]).abs() < 1e-12);
        }
        let h = [1.0, 0.0];
        let joint_v: Vec<(Vec<f64>, f64)> = enumerate_states(3)
            .map(|v| {
                let w = (-energy(&p, &v, &h).unwrap()).exp();
                (v, w)
            })
            .collect();
        let z: f64 = joint_v.iter().map(|(_, w)| w).sum();
        let probs = cond_v_given_h(&p, &h).unwrap();
        for j in 0..3 {
            let m: f64 = joint_v.iter().filter(|(v, _)| v[j] == 1.0).map(|(_, w)| w).sum::<f64>() / z;
            assert!((m - probs[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn all_ones_mask_free_energy_is_exact() {
        let p = random_params(5, 4, 8);
        let v = [1.0, 1.0, 0.0, 1.0, 0.0];
        let plain = free_energy(&p, &v).unwrap();
        let node = free_energy_masked(&p, &v, Some(&Mask::Node(vec![1.0; 4]))).unwrap();
        let edge = free_energy_masked(&p, &v, Some(&Mask::Edge(Matrix::filled(4, 5, 1.0)))).unwrap();
        assert_eq!(plain.to_bits(), node.to_bits());
        assert_eq!(plain.to_bits(), edge.to_bits());
    }

    #[test]
    fn dropout_free_energy_drops_terms() {
        let p = random_params(3, 2, 9);
        let v = [1.0, 0.0, 1.0];
        let f = free_energy_masked(&p, &v, Some(&Mask::Node(vec![1.0, 0.0]))).unwrap();
        let expect = -dot(&p.visible_bias, &v) - log1p_exp(p.hidden_bias[0] + dot(p.weights.row(0), &v));
        assert!((f - expect).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        let p = RbmParams::zeros(3, 2);
        assert!(energy(&p, &[1.0], &[0.0, 0.0]).is_err());
        assert!(free_energy(&p, &[1.0; 4]).is_err());
        assert!(cond_v_given_h(&p, &[1.0]).is_err());
        assert!(free_energy_masked(&p, &[0.0; 3], Some(&Mask::Node(vec![1.0; 3]))).is_err());
    }

    #[test]
    fn gaussian_reconstruction_mean_is_bias() {
        let mut p = RbmParams::zeros(3, 2);
        p.visible_bias = vec![0.5, -1.0, 2.0];
        let m = visible_mean(LayerKind::Gaussian, &p, &[1.0, 1.0], 1.0).unwrap();
        assert_eq!(m, p.visible_bias);
    }

    #[test]
    fn gaussian_zero_free_energy() {
        let p = RbmParams::zeros(3, 4);
        let v = [0.5, -1.5, 2.0];
        let model = UnitModel::new(LayerKind::Gaussian, &p, None).unwrap();
        let expect = v.iter().map(|x| x * x / 2.0).sum::<f64>() - 4.0 * LN_2;
        assert!((model.free_energy(&v) - expect).abs() < 1e-12);
    }

    #[test]
    fn softmax_hidden_bias_scales_with_length() {
        let mut p = RbmParams::zeros(3, 1);
        p.hidden_bias[0] = 0.25;
        let model = UnitModel::new(LayerKind::SoftmaxCounts, &p, None).unwrap();
        assert!((model.hidden_input(&[2.0, 0.0, 1.0])[0] - 0.75).abs() < 1e-15);
        let zero = RbmParams::zeros(3, 2);
        let model = UnitModel::new(LayerKind::SoftmaxCounts, &zero, None).unwrap();
        assert_eq!(model.hidden_probs(&[5.0, 1.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn reduced_kinds_match_binary_conditionals() {
        // A one-word document and a Bernoulli layer share the hidden conditional.
        let p = random_params(3, 2, 41);
        let v = [0.0, 1.0, 0.0];
        let bern = UnitModel::new(LayerKind::Bernoulli, &p, None).unwrap().hidden_probs(&v);
        let soft = UnitModel::new(LayerKind::SoftmaxCounts, &p, None).unwrap().hidden_probs(&v);
        let gauss = UnitModel::new(LayerKind::Gaussian, &p, None).unwrap().hidden_probs(&v);
        assert_eq!(bern, soft);
        assert_eq!(bern, gauss);
    }

    #[test]
    fn single_word_vocabulary_reconstructs_same_word() {
        let mut p = RbmParams::zeros(1, 2);
        p.weights = Matrix::from_vec(2, 1, vec![0.3, -0.7]).unwrap();
        let model = UnitModel::new(LayerKind::SoftmaxCounts, &p, None).unwrap();
        let mut rng = RandomSource::new(0, 0);
        for _ in 0..10 {
            let mean = model.visible_mean(&[1.0, 0.0], 4.0);
            assert_eq!(model.sample_visible(&mean, 4.0, &mut rng), vec![4.0]);
        }
    }
}
