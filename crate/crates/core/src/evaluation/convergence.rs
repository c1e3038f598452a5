use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};
use crate::rbm::{visible_distribution, LayerKind, RbmParams, TrainConfig};
use crate::regularizers::{train_regularized, RegConfig, RegMode};

const SAMPLE: u64 = 0x5341;

/// `N` examples drawn exactly from the RBM's visible distribution by
/// inverse-CDF over the enumerated states.
pub fn sample_exact(params: &RbmParams, n: usize, rng: &mut RandomSource) -> Result<Matrix> {
    let p = visible_distribution(params)?;
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for x in &p {
        acc += x;
        cdf.push(acc);
    }
    let j = params.n_visible();
    let mut data = Vec::with_capacity(n * j);
    for _ in 0..n {
        let u = rng.uniform() * acc;
        let idx = cdf.partition_point(|&c| c <= u).min(p.len() - 1);
        data.extend((0..j).map(|b| ((idx >> b) & 1) as f64));
    }
    Matrix::from_vec(n, j, data)
}

/// `½ Σ |p − q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "tv_distance",
            left: (p.len(), 1),
            right: (q.len(), 1),
        });
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// The hidden-unit permutation of `estimate` best matching `truth`, up to
/// the sign of each weight row (a hidden unit and its complement have
/// weights of opposite sign). `perm[i]` is the estimated row matched to
/// true row `i`.
pub fn align_hidden_units(truth: &Matrix, estimate: &Matrix) -> Result<Vec<usize>> {
    if truth.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch {
            op: "align_hidden_units",
            left: truth.shape(),
            right: estimate.shape(),
        });
    }
    let i = truth.rows();
    if i > 8 {
        return Err(Error::EnumerationTooLarge { units: i, limit: 8 });
    }
    let cost = |a: usize, b: usize| {
        let (mut plus, mut minus) = (0.0, 0.0);
        for (x, y) in truth.row(a).iter().zip(estimate.row(b)) {
            plus += (x - y).powi(2);
            minus += (x + y).powi(2);
        }
        f64::min(plus, minus)
    };
    let mut best = (f64::INFINITY, Vec::new());
    let mut perm: Vec<usize> = (0..i).collect();
    permute(&mut perm, 0, &mut |p| {
        let c: f64 = p.iter().enumerate().map(|(a, &b)| cost(a, b)).sum();
        if c < best.0 {
            best = (c, p.to_vec());
        }
    });
    Ok(best.1)
}

fn permute(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for s in k..items.len() {
        items.swap(k, s);
        permute(items, k + 1, visit);
        items.swap(k, s);
    }
}

/// Zero-set recovery after aligning hidden units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportRecovery {
    /// True nonzero weights that the estimate kept (nonzero or retained).
    pub kept: usize,
    pub true_support: usize,
    /// True zeros that the estimate also set to zero.
    pub zeros_recovered: usize,
    pub true_zeros: usize,
}

impl SupportRecovery {
    pub fn retains_all(&self) -> bool {
        self.kept == self.true_support
    }
}

/// Compare the support `{W° ≠ 0}` with the estimated support `kept`
/// (same shape as `W`, 1 where retained).
pub fn support_recovery(truth: &Matrix, estimate: &Matrix, kept: &Matrix) -> Result<SupportRecovery> {
    let perm = align_hidden_units(truth, estimate)?;
    let mut r = SupportRecovery {
        kept: 0,
        true_support: 0,
        zeros_recovered: 0,
        true_zeros: 0,
    };
    for (i, &pi) in perm.iter().enumerate() {
        for j in 0..truth.cols() {
            let retained = kept.get(pi, j) != 0.0;
            if truth.get(i, j) != 0.0 {
                r.true_support += 1;
                r.kept += usize::from(retained);
            } else {
                r.true_zeros += 1;
                r.zeros_recovered += usize::from(!retained);
            }
        }
    }
    Ok(r)
}

/// One sample size of a convergence study with its regularizer settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub reg: RegConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub n: usize,
    /// TV distance between the trained and generating distributions.
    pub tv_distance: f64,
    /// TV distance of the initialization.
    pub initial_tv_distance: f64,
    /// Support recovery: retained mask for pruning modes, nonzero weights
    /// (|w| > 1e-3) for L²+AL¹, absent otherwise.
    pub support: Option<SupportRecovery>,
}

/// Sample `N` examples from `truth` for every grid point, train from `init`
/// under the point's regularizer and report how close the fit is.
pub fn convergence_suite(
    truth: &RbmParams,
    init: &RbmParams,
    grid: &[GridPoint],
    train: &TrainConfig,
    seed: u64,
) -> Result<Vec<ConvergencePoint>> {
    let target = visible_distribution(truth)?;
    let initial_tv_distance = tv_distance(&visible_distribution(init)?, &target)?;
    let root = RandomSource::new(seed, SAMPLE);
    grid.iter()
        .map(|point| {
            let data = sample_exact(truth, point.n, &mut root.derive(&[point.n as u64]))?;
            let rng = root.derive(&[point.n as u64, 1]);
            let trained = train_regularized(LayerKind::Bernoulli, init.clone(), &data, train, &point.reg, &rng, &mut |_| Ok(()))?;
            let model = trained.regularizer.mean_network(&trained.params)?;
            let support = match point.reg.mode {
                RegMode::Snp | RegMode::Inp => {
                    let kept = trained.regularizer.mask_spec().map(|s| s.to_matrix()).expect("pruning mask");
                    Some(support_recovery(&truth.weights, &trained.params.weights, &kept)?)
                }
                RegMode::L2al1 => {
                    let kept = trained.params.weights.map(|w| if w.abs() > 1e-3 { 1.0 } else { 0.0 });
                    Some(support_recovery(&truth.weights, &trained.params.weights, &kept)?)
                }
                _ => None,
            };
            Ok(ConvergencePoint {
                n: point.n,
                tv_distance: tv_distance(&visible_distribution(&model)?, &target)?,
                initial_tv_distance,
                support,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sampler_frequencies() {
        let mut rng = RandomSource::new(1, 0);
        let mut p = RbmParams::random_init(3, 2, &mut rng);
        p.visible_bias = vec![0.5, -1.0, 0.2];
        let data = sample_exact(&p, 200_000, &mut rng).unwrap();
        let mut counts = vec![0.0; 8];
        for v in data.row_iter() {
            counts[crate::rbm::state_index(v)] += 1.0 / 200_000.0;
        }
        let tv = tv_distance(&counts, &visible_distribution(&p).unwrap()).unwrap();
        assert!(tv < 0.01, "{tv}");
    }

    #[test]
    fn zero_learning_rate_keeps_initial_distance() {
        let mut rng = RandomSource::new(2, 0);
        let truth = RbmParams::random_init(4, 2, &mut rng);
        let init = RbmParams::zeros(4, 2);
        let train = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = convergence_suite(&truth, &init, &[GridPoint { n: 50, reg: RegConfig::none() }], &train, 0).unwrap();
        assert_eq!(out[0].tv_distance, out[0].initial_tv_distance);
    }

    #[test]
    fn alignment_undoes_permutation_and_sign() {
        let truth = Matrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -3.0, 0.5], vec![4.0, 1.0, 0.0]]).unwrap();
        let est = Matrix::from_rows(&[vec![0.0, 3.0, -0.5], vec![4.0, 1.0, 0.0], vec![1.0, 0.0, 2.0]]).unwrap();
        assert_eq!(align_hidden_units(&truth, &est).unwrap(), vec![2, 0, 1]);
        let kept = est.map(|w| if w != 0.0 { 1.0 } else { 0.0 });
        let r = support_recovery(&truth, &est, &kept).unwrap();
        assert!(r.retains_all());
        assert_eq!(r.zeros_recovered, r.true_zeros);
    }
}
