use super::units::{sample_binary, UnitModel};
use super::{LayerKind, Mask, RbmParams};
use crate::error::Result;
use crate::numerics::RandomSource;

/// State of a block Gibbs chain on a binary RBM.
#[derive(Clone, Debug)]
pub struct GibbsChain {
    pub visible: Vec<f64>,
    pub hidden: Vec<f64>,
    rng: RandomSource,
}

impl GibbsChain {
    pub fn new(visible: Vec<f64>, n_hidden: usize, rng: RandomSource) -> Self {
        GibbsChain {
            visible,
            hidden: vec![0.0; n_hidden],
            rng,
        }
    }

    pub fn stream(&self) -> u64 {
        self.rng.stream()
    }
}

/// One block Gibbs transition: `h ~ P(h | v)` then `v ~ P(v | h)`.
///
/// Under a node mask, hidden units with `m_i = 0` are fixed at zero; under an
/// edge mask, `m ∗ W` is used in both conditionals.
pub fn gibbs_step(mut chain: GibbsChain, params: &RbmParams, mask: Option<&Mask>) -> Result<GibbsChain> {
    params.check_visible(&chain.visible)?;
    params.check_hidden(&chain.hidden)?;
    let model = UnitModel::new(LayerKind::Bernoulli, params, mask)?;
    let hp = model.hidden_probs(&chain.visible);
    chain.hidden = sample_binary(&hp, &mut chain.rng);
    let vm = model.visible_mean(&chain.hidden, 1.0);
    chain.visible = sample_binary(&vm, &mut chain.rng);
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, Matrix};
    use crate::rbm::{energy, enumerate_states, state_index};

    #[test]
    fn all_ones_mask_matches_unmasked() {
        let mut rng = RandomSource::new(4, 0);
        let p = RbmParams::random_init(5, 3, &mut rng);
        let start = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let mut a = GibbsChain::new(start.clone(), 3, RandomSource::new(7, 1));
        let mut b = GibbsChain::new(start.clone(), 3, RandomSource::new(7, 1));
        let mut c = GibbsChain::new(start, 3, RandomSource::new(7, 1));
        let node = Mask::Node(vec![1.0; 3]);
        let edge = Mask::Edge(Matrix::filled(3, 5, 1.0));
        for _ in 0..50 {
            a = gibbs_step(a, &p, None).unwrap();
            b = gibbs_step(b, &p, Some(&node)).unwrap();
            c = gibbs_step(c, &p, Some(&edge)).unwrap();
            assert_eq!(a.visible, b.visible);
            assert_eq!(a.hidden, b.hidden);
            assert_eq!(a.visible, c.visible);
        }
    }

    #[test]
    fn zero_node_mask_clamps_hidden() {
        let mut p = RbmParams::zeros(2, 3);
        p.visible_bias = vec![2.0, -1.0];
        p.weights = Matrix::filled(3, 2, 5.0);
        let mask = Mask::Node(vec![0.0; 3]);
        let mut chain = GibbsChain::new(vec![1.0, 1.0], 3, RandomSource::new(1, 0));
        let mut ones = [0.0; 2];
        let steps = 20_000;
        for _ in 0..steps {
            chain = gibbs_step(chain, &p, Some(&mask)).unwrap();
            assert_eq!(chain.hidden, vec![0.0; 3]);
            ones[0] += chain.visible[0];
            ones[1] += chain.visible[1];
        }
        for j in 0..2 {
            let freq = ones[j] / steps as f64;
            // 4-sigma binomial band.
            let p = sigmoid(p.visible_bias[j]);
            let sd = (p * (1.0 - p) / steps as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sd, "unit {j}: {freq} vs {p}");
        }
    }

    #[test]
    fn stationary_distribution_of_two_by_two() {
        let p = RbmParams::new(
            vec![0.3, -0.5],
            vec![-0.2, 0.4],
            Matrix::from_rows(&[vec![1.0, -0.7], vec![0.5, 0.8]]).unwrap(),
        )
        .unwrap();
        // Enumerated joint over (v, h).
        let mut exact = vec![0.0; 16];
        for v in enumerate_states(2) {
            for h in enumerate_states(2) {
                exact[state_index(&v) * 4 + state_index(&h)] = (-energy(&p, &v, &h).unwrap()).exp();
            }
        }
        let z: f64 = exact.iter().sum();
        exact.iter_mut().for_each(|x| *x /= z);

        let mut counts = vec![0.0; 16];
        let mut chain = GibbsChain::new(vec![0.0, 0.0], 2, RandomSource::new(99, 0));
        let steps = 1_000_000;
        for _ in 0..1000 {
            chain = gibbs_step(chain, &p, None).unwrap();
        }
        for _ in 0..steps {
            // Record (h_t, v_t): h_t was drawn from P(h | v_{t-1}), so pair it
            // with the visible state it was conditioned on.
            let v_prev = chain.visible.clone();
            chain = gibbs_step(chain, &p, None).unwrap();
            counts[state_index(&v_prev) * 4 + state_index(&chain.hidden)] += 1.0;
        }
        let tv: f64 = counts
            .iter()
            .zip(&exact)
            .map(|(c, e)| (c / steps as f64 - e).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.01, "tv = {tv}");
    }
}
