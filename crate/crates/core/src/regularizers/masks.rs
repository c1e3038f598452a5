use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};
use crate::rbm::Mask;

use super::ReferenceWeights;

/// Per-unit or per-weight retain probabilities.
#[derive(Clone, Debug, PartialEq)]
pub enum RetainProbs {
    /// One probability per hidden unit.
    Node(Vec<f64>),
    /// One probability per weight, shaped like `W`.
    Edge(Matrix),
}

/// A mask distribution: independent Bernoulli draws with the given retain
/// probabilities, or a fixed 0/1 mask when `frozen`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSpec {
    probs: RetainProbs,
    frozen: bool,
}

fn check_probs(values: &[f64]) -> Result<()> {
    match values.iter().enumerate().find(|(_, &v)| !(0.0..=1.0).contains(&v)) {
        Some((index, &value)) => Err(Error::InvalidProbability { index, value }),
        None => Ok(()),
    }
}

impl MaskSpec {
    pub fn node(probs: Vec<f64>, frozen: bool) -> Result<Self> {
        Self::build(RetainProbs::Node(probs), frozen)
    }

    pub fn edge(probs: Matrix, frozen: bool) -> Result<Self> {
        Self::build(RetainProbs::Edge(probs), frozen)
    }

    /// Plain Dropout: every hidden unit kept with probability `p`.
    pub fn uniform_node(n_hidden: usize, p: f64) -> Result<Self> {
        Self::node(vec![p; n_hidden], false)
    }

    /// Plain DropConnect: every weight kept with probability `p`.
    pub fn uniform_edge(n_hidden: usize, n_visible: usize, p: f64) -> Result<Self> {
        Self::edge(Matrix::filled(n_hidden, n_visible, p), false)
    }

    fn build(probs: RetainProbs, frozen: bool) -> Result<Self> {
        let values = match &probs {
            RetainProbs::Node(v) => v.as_slice(),
            RetainProbs::Edge(m) => m.as_slice(),
        };
        check_probs(values)?;
        if frozen && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Contract("a frozen mask must be 0/1 valued".into()));
        }
        Ok(MaskSpec { probs, frozen })
    }

    pub fn probs(&self) -> &RetainProbs {
        &self.probs
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_node(&self) -> bool {
        matches!(self.probs, RetainProbs::Node(_))
    }

    /// Probabilities as a flat slice (row-major for edge masks).
    pub fn values(&self) -> &[f64] {
        match &self.probs {
            RetainProbs::Node(v) => v,
            RetainProbs::Edge(m) => m.as_slice(),
        }
    }

    /// Number of entries with retain probability exactly 1.
    pub fn protected_count(&self) -> usize {
        self.values().iter().filter(|&&v| v == 1.0).count()
    }

    /// Draw a mask. Frozen specs return the same mask on every call without
    /// touching `rng`.
    pub fn sample(&self, rng: &mut RandomSource) -> Mask {
        let draw = |p: f64, rng: &mut RandomSource| if rng.bernoulli(p) { 1.0 } else { 0.0 };
        match (&self.probs, self.frozen) {
            (RetainProbs::Node(v), true) => Mask::Node(v.clone()),
            (RetainProbs::Edge(m), true) => Mask::Edge(m.clone()),
            (RetainProbs::Node(v), false) => Mask::Node(v.iter().map(|&p| draw(p, rng)).collect()),
            (RetainProbs::Edge(m), false) => Mask::Edge(m.map(|p| draw(p, rng))),
        }
    }

    pub(crate) fn check_shape(&self, n_hidden: usize, n_visible: usize) -> Result<()> {
        let ok = match &self.probs {
            RetainProbs::Node(v) => v.len() == n_hidden,
            RetainProbs::Edge(m) => m.shape() == (n_hidden, n_visible),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op: "mask spec",
                left: (n_hidden, n_visible),
                right: match &self.probs {
                    RetainProbs::Node(v) => (v.len(), 1),
                    RetainProbs::Edge(m) => m.shape(),
                },
            })
        }
    }

    /// Debug dump as a dense matrix (a single column for node masks).
    pub fn to_matrix(&self) -> Matrix {
        match &self.probs {
            RetainProbs::Node(v) => Matrix::from_vec(v.len(), 1, v.clone()).expect("column shape"),
            RetainProbs::Edge(m) => m.clone(),
        }
    }
}

/// `⌈fraction · total⌉`, tolerant of representation error in `fraction`.
pub fn retain_count(fraction: f64, total: usize) -> usize {
    let x = fraction * total as f64;
    ((x - 1e-9).ceil().max(0.0) as usize).min(total)
}

/// Indices ordered by value descending, ties by index ascending.
pub fn importance_order(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Indicator of the `count` most important entries.
fn top_indicator(values: &[f64], count: usize) -> Vec<bool> {
    let mut keep = vec![false; values.len()];
    for &i in importance_order(values).iter().take(count) {
        keep[i] = true;
    }
    keep
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie strictly inside (0, 1), got {x}")))
    }
}

/// Simple network pruning: keep the `⌈p·IJ⌉` largest `|Ŵ_ij|` and freeze.
pub fn snp_mask(reference: &ReferenceWeights, p: f64) -> Result<MaskSpec> {
    check_open_unit("p", p)?;
    let w = reference.matrix();
    let mags: Vec<f64> = w.as_slice().iter().map(|x| x.abs()).collect();
    let keep = top_indicator(&mags, retain_count(p, mags.len()));
    let data = keep.into_iter().map(|k| if k { 1.0 } else { 0.0 }).collect();
    MaskSpec::edge(Matrix::from_vec(w.rows(), w.cols(), data)?, true)
}

/// Partial DropConnect rates: the `⌈q·IJ⌉` largest `|Ŵ_ij|` get retain
/// probability 1, the rest `p₀`.
pub fn pdc_rates(reference: &ReferenceWeights, p0: f64, q: f64) -> Result<MaskSpec> {
    check_open_unit("p0", p0)?;
    check_open_unit("q", q)?;
    let w = reference.matrix();
    let mags: Vec<f64> = w.as_slice().iter().map(|x| x.abs()).collect();
    let keep = top_indicator(&mags, retain_count(q, mags.len()));
    let data = keep.into_iter().map(|k| if k { 1.0 } else { p0 }).collect();
    MaskSpec::edge(Matrix::from_vec(w.rows(), w.cols(), data)?, false)
}

/// Partial Dropout rates: the `⌈q·I⌉` hidden units with the largest
/// Euclidean row norm `‖Ŵ_i·‖` get retain probability 1, the rest `p₀`.
pub fn pdo_rates(reference: &ReferenceWeights, p0: f64, q: f64) -> Result<MaskSpec> {
    check_open_unit("p0", p0)?;
    check_open_unit("q", q)?;
    let norms: Vec<f64> = reference
        .matrix()
        .row_iter()
        .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let keep = top_indicator(&norms, retain_count(q, norms.len()));
    MaskSpec::node(keep.into_iter().map(|k| if k { 1.0 } else { p0 }).collect(), false)
}

/// One node mask per example.
pub fn dropout_masks(spec: &MaskSpec, batch_size: usize, rng: &mut RandomSource) -> Result<Vec<Mask>> {
    if !spec.is_node() {
        return Err(Error::Contract("dropout masks need a node mask spec".into()));
    }
    Ok((0..batch_size).map(|_| spec.sample(rng)).collect())
}

/// One edge mask for a whole minibatch.
pub fn dropconnect_mask(spec: &MaskSpec, rng: &mut RandomSource) -> Result<Mask> {
    if spec.is_node() {
        return Err(Error::Contract("dropconnect masks need an edge mask spec".into()));
    }
    Ok(spec.sample(rng))
}

/// `Σ (1 − p_ij) |Ŵ_ij|`, the data-independent part of the partial
/// DropConnect bound.
pub fn drop_cost(spec: &MaskSpec, reference: &ReferenceWeights) -> f64 {
    spec.values()
        .iter()
        .zip(reference.matrix().as_slice())
        .map(|(p, w)| (1.0 - p) * w.abs())
        .sum()
}
