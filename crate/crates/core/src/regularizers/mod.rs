//! The regularization modes for RBM training and the outer loops that need
//! a previously trained reference `Ŵ` (adaptive L¹, pruning, partial
//! Dropout/DropConnect).

mod masks;
mod penalty;
mod runtime;
mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub use masks::{
    drop_cost, dropconnect_mask, dropout_masks, importance_order, pdc_rates, pdo_rates, retain_count,
    snp_mask, MaskSpec, RetainProbs,
};
pub use penalty::{
    adaptive_l1_penalty_gradient, l2_penalty_gradient, l2_plus_al1, sparsity_activation_gradient,
    sparsity_penalty_gradient, SparsityPenalty, ADAPTIVE_L1_FLOOR,
};
pub use runtime::{MaskBatch, Penalty, Regularizer};
pub use schedule::{
    inp_loop, pdc_loop, pdo_loop, split_epochs, train_regularized, EpochEvent, InpOutcome, TrainedLayer,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    None,
    /// Dropout on hidden units.
    Do,
    /// DropConnect on weights.
    Dc,
    L2,
    /// L² plus adaptive L¹, two-phase.
    L2al1,
    /// Simple network pruning.
    Snp,
    /// Iterative network pruning.
    Inp,
    /// Partial Dropout.
    Pdo,
    /// Partial DropConnect.
    Pdc,
    Sparsity,
}

impl RegMode {
    pub const ALL_NINE: [RegMode; 9] = [
        RegMode::None,
        RegMode::Do,
        RegMode::Dc,
        RegMode::L2,
        RegMode::L2al1,
        RegMode::Snp,
        RegMode::Inp,
        RegMode::Pdo,
        RegMode::Pdc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegMode::None => "none",
            RegMode::Do => "do",
            RegMode::Dc => "dc",
            RegMode::L2 => "l2",
            RegMode::L2al1 => "l2al1",
            RegMode::Snp => "snp",
            RegMode::Inp => "inp",
            RegMode::Pdo => "pdo",
            RegMode::Pdc => "pdc",
            RegMode::Sparsity => "sparsity",
        }
    }

    /// Modes that first train without regularization to obtain `Ŵ`.
    pub fn needs_reference(self) -> bool {
        matches!(
            self,
            RegMode::L2al1 | RegMode::Snp | RegMode::Inp | RegMode::Pdo | RegMode::Pdc
        )
    }
}

/// Regularizer choice and hyperparameters. Only the fields used by `mode`
/// are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegConfig {
    pub mode: RegMode,
    /// L² coefficient.
    pub lambda: f64,
    /// Adaptive-L¹ coefficient.
    pub mu: f64,
    /// Retain probability for DO/DC/SNP/INP.
    pub p: f64,
    /// Retain probability of unprotected units/weights (PDO/PDC).
    pub p0: f64,
    /// Protected fraction (PDO/PDC).
    pub q: f64,
    /// Pruning rounds (INP).
    pub rounds: usize,
    /// Rate recomputations in the partial loops.
    pub partial_updates: usize,
    pub sparsity_target: f64,
    pub sparsity_coefficient: f64,
}

impl Default for RegConfig {
    fn default() -> Self {
        RegConfig {
            mode: RegMode::None,
            lambda: 1e-4,
            mu: 0.01,
            p: 0.9,
            p0: 0.5,
            q: 0.8,
            rounds: 3,
            partial_updates: 1,
            sparsity_target: 0.02,
            sparsity_coefficient: 10.0,
        }
    }
}

impl RegConfig {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_mode(mode: RegMode) -> Self {
        RegConfig {
            mode,
            ..Self::default()
        }
    }

    pub fn dropout(p: f64) -> Self {
        RegConfig {
            p,
            ..Self::with_mode(RegMode::Do)
        }
    }

    pub fn dropconnect(p: f64) -> Self {
        RegConfig {
            p,
            ..Self::with_mode(RegMode::Dc)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let open = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie strictly inside (0, 1), got {x}")))
            }
        };
        let nonneg = |name: &str, x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {x}")))
            }
        };
        match self.mode {
            RegMode::None => Ok(()),
            RegMode::Do | RegMode::Dc | RegMode::Snp => open("p", self.p),
            RegMode::Inp => {
                open("p", self.p)?;
                if self.rounds < 1 {
                    return Err(Error::Config("rounds must be >= 1".into()));
                }
                Ok(())
            }
            RegMode::L2 => nonneg("lambda", self.lambda),
            RegMode::L2al1 => {
                nonneg("lambda", self.lambda)?;
                nonneg("mu", self.mu)
            }
            RegMode::Pdo | RegMode::Pdc => {
                open("p0", self.p0)?;
                open("q", self.q)
            }
            RegMode::Sparsity => {
                nonneg("sparsity_coefficient", self.sparsity_coefficient)?;
                if (0.0..=1.0).contains(&self.sparsity_target) {
                    Ok(())
                } else {
                    Err(Error::Config("sparsity_target must lie in [0, 1]".into()))
                }
            }
        }
    }
}

/// Weights `Ŵ` of a model trained without regularization; fixed while
/// retraining.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceWeights(Matrix);

impl ReferenceWeights {
    pub fn new(weights: Matrix) -> Self {
        ReferenceWeights(weights)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}
