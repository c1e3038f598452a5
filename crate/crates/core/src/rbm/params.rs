use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

/// Visible-unit family of an RBM layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Bernoulli,
    Gaussian,
    SoftmaxCounts,
}

/// Parameters `(b, c, W)`: `b` has one entry per visible unit, `c` one per
/// hidden unit, and `W` is hidden × visible.
///
/// The same shape doubles as a gradient container.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct RbmParams {
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
    pub weights: Matrix,
}

#[derive(Deserialize)]
struct RawParams {
    visible_bias: Vec<f64>,
    hidden_bias: Vec<f64>,
    weights: Matrix,
}

impl TryFrom<RawParams> for RbmParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        RbmParams::new(raw.visible_bias, raw.hidden_bias, raw.weights)
    }
}

/// A realized (already sampled) mask.
#[derive(Clone, Debug, PartialEq)]
pub enum Mask {
    /// One entry per hidden unit; hidden units with a zero entry are clamped off.
    Node(Vec<f64>),
    /// Same shape as `W`; the model uses `m ∗ W` in both directions.
    Edge(Matrix),
}

impl Mask {
    pub(crate) fn check(&self, params: &RbmParams) -> Result<()> {
        match self {
            Mask::Node(m) if m.len() != params.n_hidden() => Err(Error::ShapeMismatch {
                op: "node mask",
                left: (params.n_hidden(), 1),
                right: (m.len(), 1),
            }),
            Mask::Edge(m) if m.shape() != params.weights.shape() => Err(Error::ShapeMismatch {
                op: "edge mask",
                left: params.weights.shape(),
                right: m.shape(),
            }),
            _ => Ok(()),
        }
    }

    pub(crate) fn node_gate(mask: Option<&Mask>) -> Option<&[f64]> {
        match mask {
            Some(Mask::Node(m)) => Some(m),
            _ => None,
        }
    }

    pub(crate) fn edge(mask: Option<&Mask>) -> Option<&Matrix> {
        match mask {
            Some(Mask::Edge(m)) => Some(m),
            _ => None,
        }
    }
}

impl RbmParams {
    pub fn new(visible_bias: Vec<f64>, hidden_bias: Vec<f64>, weights: Matrix) -> Result<Self> {
        if weights.shape() != (hidden_bias.len(), visible_bias.len()) {
            return Err(Error::ShapeMismatch {
                op: "RbmParams::new",
                left: (hidden_bias.len(), visible_bias.len()),
                right: weights.shape(),
            });
        }
        let p = RbmParams {
            visible_bias,
            hidden_bias,
            weights,
        };
        if !p.is_finite() {
            return Err(Error::Contract("parameters contain non-finite values".into()));
        }
        Ok(p)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        RbmParams {
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
            weights: Matrix::zeros(n_hidden, n_visible),
        }
    }

    /// Zero biases and weights uniform on `±4·sqrt(6 / (I + J))`.
    pub fn random_init(n_visible: usize, n_hidden: usize, rng: &mut RandomSource) -> Self {
        let bound = 4.0 * (6.0 / (n_visible + n_hidden).max(1) as f64).sqrt();
        let weights = Matrix::from_fn(n_hidden, n_visible, |_, _| (2.0 * rng.uniform() - 1.0) * bound);
        RbmParams {
            visible_bias: vec![0.0; n_visible],
            hidden_bias: vec![0.0; n_hidden],
            weights,
        }
    }

    #[inline]
    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    #[inline]
    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.n_visible() + self.n_hidden() + self.weights.len()
    }

    /// Flattened as `[b, c, W(row-major)]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.visible_bias);
        out.extend_from_slice(&self.hidden_bias);
        out.extend_from_slice(self.weights.as_slice());
        out
    }

    /// Inverse of [`RbmParams::to_flat`] using this value's shape.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                op: "with_flat",
                left: (self.num_params(), 1),
                right: (flat.len(), 1),
            });
        }
        let (j, i) = (self.n_visible(), self.n_hidden());
        Ok(RbmParams {
            visible_bias: flat[..j].to_vec(),
            hidden_bias: flat[j..j + i].to_vec(),
            weights: Matrix::from_vec(i, j, flat[j + i..].to_vec())?,
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &RbmParams) -> Result<()> {
        if self.weights.shape() != other.weights.shape() {
            return Err(Error::ShapeMismatch {
                op: "RbmParams::axpy",
                left: self.weights.shape(),
                right: other.weights.shape(),
            });
        }
        for (a, b) in self.visible_bias.iter_mut().zip(&other.visible_bias) {
            *a += alpha * b;
        }
        for (a, b) in self.hidden_bias.iter_mut().zip(&other.hidden_bias) {
            *a += alpha * b;
        }
        self.weights.axpy(alpha, &other.weights)
    }

    pub fn scale(&mut self, factor: f64) {
        self.visible_bias.iter_mut().for_each(|x| *x *= factor);
        self.hidden_bias.iter_mut().for_each(|x| *x *= factor);
        self.weights.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
    }

    pub fn max_abs(&self) -> f64 {
        self.visible_bias
            .iter()
            .chain(&self.hidden_bias)
            .fold(self.weights.max_abs(), |m, &x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.visible_bias.iter().chain(&self.hidden_bias).all(|x| x.is_finite()) && self.weights.is_finite()
    }

    /// Roles of visible and hidden swapped: `W ↦ Wᵀ`, `b ↔ c`.
    pub fn transposed(&self) -> RbmParams {
        RbmParams {
            visible_bias: self.hidden_bias.clone(),
            hidden_bias: self.visible_bias.clone(),
            weights: self.weights.transpose(),
        }
    }

    pub(crate) fn check_visible(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_visible() {
            return Err(Error::ShapeMismatch {
                op: "visible vector",
                left: (self.n_visible(), 1),
                right: (v.len(), 1),
            });
        }
        Ok(())
    }

    pub(crate) fn check_hidden(&self, h: &[f64]) -> Result<()> {
        if h.len() != self.n_hidden() {
            return Err(Error::ShapeMismatch {
                op: "hidden vector",
                left: (self.n_hidden(), 1),
                right: (h.len(), 1),
            });
        }
        Ok(())
    }
}
