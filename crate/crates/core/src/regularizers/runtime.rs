use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};
use crate::rbm::{LayerKind, Mask, RbmParams};

use super::masks::{pdc_rates, pdo_rates, snp_mask, MaskSpec, RetainProbs};
use super::penalty::{l2_penalty_gradient, l2_plus_al1, sparsity_penalty_gradient};
use super::{RegConfig, RegMode, ReferenceWeights};

const MASK: u64 = 0x4d41;
const BATCH: u64 = 0x4241;

/// Masks drawn for one minibatch.
#[derive(Clone, Debug)]
pub enum MaskBatch {
    Shared(Mask),
    PerExample(Vec<Mask>),
}

/// Penalty contribution to one update. Biases other than the sparsity
/// target's hidden biases are never penalized.
#[derive(Clone, Debug, Default)]
pub struct Penalty {
    pub weights: Option<Matrix>,
    pub hidden_bias: Option<Vec<f64>>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum PenaltyTerm {
    None,
    L2 { lambda: f64 },
    L2Al1 { lambda: f64, mu: f64 },
    Sparsity { target: f64, coefficient: f64 },
}

#[derive(Clone, Debug, PartialEq)]
enum MaskSource {
    None,
    UniformNode(f64),
    UniformEdge(f64),
    Spec(MaskSpec),
}

/// A regularizer ready to plug into SGD: a penalty term, a mask source, or
/// neither.
#[derive(Clone, Debug, PartialEq)]
pub struct Regularizer {
    mode: RegMode,
    penalty: PenaltyTerm,
    masks: MaskSource,
    reference: Option<ReferenceWeights>,
}

impl Regularizer {
    pub fn none() -> Self {
        Regularizer {
            mode: RegMode::None,
            penalty: PenaltyTerm::None,
            masks: MaskSource::None,
            reference: None,
        }
    }

    /// Build the retraining-phase regularizer for `config`. Modes that need
    /// `Ŵ` fail with [`Error::MissingReference`] when `reference` is `None`.
    pub fn from_config(config: &RegConfig, reference: Option<ReferenceWeights>) -> Result<Self> {
        config.validate()?;
        let need = |r: &Option<ReferenceWeights>| r.clone().ok_or(Error::MissingReference);
        let mut reg = Regularizer {
            mode: config.mode,
            ..Regularizer::none()
        };
        match config.mode {
            RegMode::None => {}
            RegMode::Do => reg.masks = MaskSource::UniformNode(config.p),
            RegMode::Dc => reg.masks = MaskSource::UniformEdge(config.p),
            RegMode::L2 => reg.penalty = PenaltyTerm::L2 { lambda: config.lambda },
            RegMode::L2al1 => {
                need(&reference)?;
                reg.penalty = PenaltyTerm::L2Al1 {
                    lambda: config.lambda,
                    mu: config.mu,
                };
            }
            RegMode::Snp | RegMode::Inp => {
                reg.masks = MaskSource::Spec(snp_mask(&need(&reference)?, config.p)?);
            }
            RegMode::Pdo => {
                reg.masks = MaskSource::Spec(pdo_rates(&need(&reference)?, config.p0, config.q)?);
            }
            RegMode::Pdc => {
                reg.masks = MaskSource::Spec(pdc_rates(&need(&reference)?, config.p0, config.q)?);
            }
            RegMode::Sparsity => {
                reg.penalty = PenaltyTerm::Sparsity {
                    target: config.sparsity_target,
                    coefficient: config.sparsity_coefficient,
                }
            }
        }
        reg.reference = reference;
        Ok(reg)
    }

    /// L² only.
    pub fn l2(lambda: f64) -> Self {
        Regularizer {
            mode: RegMode::L2,
            penalty: PenaltyTerm::L2 { lambda },
            ..Regularizer::none()
        }
    }

    /// Masks drawn from an explicit spec, no penalty.
    pub fn with_mask(mode: RegMode, spec: MaskSpec) -> Self {
        Regularizer {
            mode,
            masks: MaskSource::Spec(spec),
            ..Regularizer::none()
        }
    }

    pub fn mode(&self) -> RegMode {
        self.mode
    }

    pub fn reference(&self) -> Option<&ReferenceWeights> {
        self.reference.as_ref()
    }

    pub fn mask_spec(&self) -> Option<&MaskSpec> {
        match &self.masks {
            MaskSource::Spec(s) => Some(s),
            _ => None,
        }
    }

    /// The mask distribution for a layer of the given size, if any.
    pub fn resolved_spec(&self, n_hidden: usize, n_visible: usize) -> Result<Option<MaskSpec>> {
        Ok(match &self.masks {
            MaskSource::None => None,
            MaskSource::UniformNode(p) => Some(MaskSpec::uniform_node(n_hidden, *p)?),
            MaskSource::UniformEdge(p) => Some(MaskSpec::uniform_edge(n_hidden, n_visible, *p)?),
            MaskSource::Spec(s) => {
                s.check_shape(n_hidden, n_visible)?;
                Some(s.clone())
            }
        })
    }

    /// Masks for one minibatch. Node masks are drawn per example from a
    /// stream keyed by `(epoch, dataset row)`; edge masks once per minibatch.
    pub fn masks_for_batch(
        &self,
        params: &RbmParams,
        rows: &[usize],
        epoch: usize,
        batch_index: usize,
        rng: &RandomSource,
    ) -> Result<Option<MaskBatch>> {
        let Some(spec) = self.resolved_spec(params.n_hidden(), params.n_visible())? else {
            return Ok(None);
        };
        if spec.is_frozen() {
            let mut unused = rng.clone();
            return Ok(Some(MaskBatch::Shared(spec.sample(&mut unused))));
        }
        Ok(Some(if spec.is_node() {
            MaskBatch::PerExample(
                rows.iter()
                    .map(|&r| spec.sample(&mut rng.derive(&[MASK, epoch as u64, r as u64])))
                    .collect(),
            )
        } else {
            let mut batch_rng = rng.derive(&[MASK, epoch as u64, BATCH, batch_index as u64]);
            MaskBatch::Shared(spec.sample(&mut batch_rng))
        }))
    }

    pub fn penalty(&self, kind: LayerKind, params: &RbmParams, batch: &Matrix) -> Result<Penalty> {
        Ok(match &self.penalty {
            PenaltyTerm::None => Penalty::default(),
            PenaltyTerm::L2 { lambda } => {
                let (g, value) = l2_penalty_gradient(&params.weights, *lambda);
                Penalty {
                    weights: Some(g),
                    hidden_bias: None,
                    value,
                }
            }
            PenaltyTerm::L2Al1 { lambda, mu } => {
                let (g, value) = l2_plus_al1(&params.weights, self.reference.as_ref(), *lambda, *mu)?;
                Penalty {
                    weights: Some(g),
                    hidden_bias: None,
                    value,
                }
            }
            PenaltyTerm::Sparsity { target, coefficient } => {
                let s = sparsity_penalty_gradient(kind, params, batch, *target, *coefficient)?;
                Penalty {
                    weights: Some(s.weights),
                    hidden_bias: Some(s.hidden_bias),
                    value: s.value,
                }
            }
        })
    }

    /// Deterministic network used for evaluation and feature extraction:
    /// weights scaled by their retain probabilities (rows by `p_i` for node
    /// masks, entrywise by `p_ij` for edge masks; pruned weights become zero).
    pub fn mean_network(&self, params: &RbmParams) -> Result<RbmParams> {
        let mut out = params.clone();
        match self.resolved_spec(params.n_hidden(), params.n_visible())? {
            None => {}
            Some(spec) => match spec.probs() {
                RetainProbs::Node(p) => {
                    for (i, &pi) in p.iter().enumerate() {
                        out.weights.row_mut(i).iter_mut().for_each(|w| *w *= pi);
                    }
                }
                RetainProbs::Edge(m) => out.weights = out.weights.hadamard(m)?,
            },
        }
        Ok(out)
    }
}
