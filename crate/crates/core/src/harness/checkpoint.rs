use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deep::{dbm_features, Ffnn, LayerStack};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::config::{DataConfig, HeadKind, ModelKind};
use super::metrics::{read_json, write_json};
use super::prepare::Preprocessing;

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with everything needed to map raw data to predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelKind,
    /// Mean-network parameters of every layer.
    pub stack: LayerStack,
    pub seed: u64,
    /// Training epochs completed.
    pub epoch: usize,
    pub head: Option<Ffnn>,
    pub head_kind: Option<HeadKind>,
    pub data: DataConfig,
    pub preprocessing: Preprocessing,
    pub mean_field_iterations: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Checkpoint = read_json(path)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        Ok(c)
    }

    /// Top-layer representation used by a logistic head.
    pub fn features(&self, data: &Matrix) -> Result<Matrix> {
        features_for(self.model, &self.stack, data, self.mean_field_iterations)
    }

    /// The stored head and the inputs it takes for `data`.
    pub fn head_inputs(&self, data: &Matrix) -> Result<(&Ffnn, Matrix)> {
        let head = self
            .head
            .as_ref()
            .ok_or_else(|| Error::Config("checkpoint has no classifier head".into()))?;
        let inputs = match self.head_kind {
            Some(HeadKind::Finetune) => data.clone(),
            _ => self.features(data)?,
        };
        Ok((head, inputs))
    }
}

/// Features a logistic head sees: the recognition pass for DBN-like stacks,
/// mean-field marginals of the top layer for DBMs.
pub fn features_for(model: ModelKind, stack: &LayerStack, data: &Matrix, mean_field_iterations: usize) -> Result<Matrix> {
    match model {
        ModelKind::Dbm => dbm_features(stack, data, mean_field_iterations),
        _ => stack.features(data),
    }
}
