use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deep::{FinetuneConfig, Propagation};
use crate::error::{Error, Result};
use crate::evaluation::AisConfig;
use crate::rbm::TrainConfig;
use crate::regularizers::{RegConfig, RegMode};

use super::dataset::SplitCounts;

/// Overrides `output_dir` of every experiment when set.
pub const OUTPUT_ROOT_ENV: &str = "BOLTZREG_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rbm,
    Dbn,
    Dbm,
    Rsm,
    Grbm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// IDX image file, binarized.
    Idx,
    /// Bag-of-words text, one document per line.
    Bow,
    /// Numeric CSV, standardized.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub format: DataFormat,
    pub path: PathBuf,
    /// IDX label vector matching `path`.
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub valid: usize,
    #[serde(default)]
    pub test: Option<usize>,
    /// Shuffle rows before splitting.
    #[serde(default)]
    pub shuffle_seed: Option<u64>,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
    /// 0-based CSV column holding class labels.
    #[serde(default)]
    pub label_column: Option<usize>,
    #[serde(default)]
    pub header: bool,
}

fn default_vocab_size() -> usize {
    2000
}

impl DataConfig {
    pub fn split_counts(&self) -> SplitCounts {
        SplitCounts {
            train: self.train,
            valid: self.valid,
            test: self.test,
        }
    }

    /// Make relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        self.path = base.join(&self.path);
        if let Some(l) = &self.labels {
            self.labels = Some(base.join(l));
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlVariant {
    None,
    /// Sum over every visible unit.
    #[default]
    Full,
    /// One random unit per example, scaled by `J`.
    Stochastic,
}

/// Which model-fit metrics to record. Both are computed on the validation
/// split (the training split if it is empty) with the mean network of a
/// binary-input first layer; other layers and models leave them blank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub pseudo_likelihood: PlVariant,
    /// Evaluate every this many epochs; 0 evaluates only the last one.
    pub every: usize,
    pub ais: bool,
    /// Epoch cadence for AIS; 0 runs it after the last epoch only.
    pub ais_every: usize,
    pub ais_temperatures: usize,
    pub ais_runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pseudo_likelihood: PlVariant::Full,
            every: 1,
            ais: false,
            ais_every: 0,
            ais_temperatures: 1000,
            ais_runs: 100,
        }
    }
}

impl EvalConfig {
    pub fn ais_config(&self, seed: u64) -> AisConfig {
        AisConfig {
            num_temperatures: self.ais_temperatures,
            num_runs: self.ais_runs,
            seed,
            base_visible_bias: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// Softmax regression on the top-layer features.
    #[default]
    Logistic,
    /// Backpropagation through the unrolled stack.
    Finetune,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub kind: HeadKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub frozen_layers: usize,
    pub init_scale: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        let f = FinetuneConfig::default();
        HeadConfig {
            kind: HeadKind::Logistic,
            epochs: f.epochs,
            learning_rate: f.learning_rate,
            batch_size: f.batch_size,
            frozen_layers: f.frozen_layers,
            init_scale: f.head_init_scale,
        }
    }
}

impl HeadConfig {
    pub fn finetune_config(&self, seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            frozen_layers: self.frozen_layers,
            head_init_scale: self.init_scale,
        }
    }
}

/// DBM-specific settings; `train` above drives joint training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DbmSettings {
    pub pretrain: TrainConfig,
    pub mean_field_iterations: usize,
    pub gibbs_steps: usize,
}

impl Default for DbmSettings {
    fn default() -> Self {
        let d = crate::deep::DbmConfig::default();
        DbmSettings {
            pretrain: d.pretrain,
            mean_field_iterations: d.mean_field_iterations,
            gibbs_steps: d.gibbs_steps,
        }
    }
}

/// One experiment, read from a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Name of the run directory under the output root.
    pub name: String,
    pub model: ModelKind,
    /// Hidden layer sizes, bottom first.
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub reg: RegConfig,
    /// Per-layer regularizers for DBNs; `reg` applies to layers not listed.
    #[serde(default)]
    pub layer_regs: Vec<RegConfig>,
    #[serde(default)]
    pub propagation: Propagation,
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub head: Option<HeadConfig>,
    #[serde(default)]
    pub dbm: DbmSettings,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Fill the `wall_seconds` column; off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Read and validate a config file; relative paths inside are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.data.resolve_paths(base);
        self.output_dir = base.join(&self.output_dir);
    }

    /// Directory the run writes into: the output root (environment
    /// override first) joined with `name`.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone());
        root.join(&self.name)
    }

    pub fn layer_reg(&self, layer: usize) -> &RegConfig {
        self.layer_regs.get(layer).unwrap_or(&self.reg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.name.is_empty() || self.name.contains("..") || Path::new(&self.name).is_absolute() {
            return bad(format!("invalid run name {:?}", self.name));
        }
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return bad("layer_sizes must list at least one positive size".into());
        }
        let single = matches!(self.model, ModelKind::Rbm | ModelKind::Rsm | ModelKind::Grbm);
        if single && self.layer_sizes.len() != 1 {
            return bad(format!("{:?} models have exactly one hidden layer", self.model));
        }
        if self.layer_regs.len() > self.layer_sizes.len() {
            return bad("more layer_regs than layers".into());
        }
        self.train.validate()?;
        if self.train.learning_rate <= 0.0 {
            return bad("learning_rate must be > 0".into());
        }
        self.reg.validate()?;
        for r in &self.layer_regs {
            r.validate()?;
        }
        let expected = match self.model {
            ModelKind::Rbm | ModelKind::Dbn | ModelKind::Dbm => DataFormat::Idx,
            ModelKind::Rsm => DataFormat::Bow,
            ModelKind::Grbm => DataFormat::Csv,
        };
        if self.data.format != expected {
            return bad(format!("{:?} models read {:?} data, not {:?}", self.model, expected, self.data.format));
        }
        if self.model == ModelKind::Dbm {
            self.dbm.pretrain.validate()?;
            for r in std::iter::once(&self.reg).chain(&self.layer_regs) {
                if !matches!(r.mode, RegMode::None | RegMode::L2) {
                    return bad(format!("DBM training supports none and l2, not {}", r.mode.name()));
                }
            }
        }
        if self.eval.ais && (self.eval.ais_temperatures < 2 || self.eval.ais_runs < 1) {
            return bad("AIS needs at least 2 temperatures and 1 run".into());
        }
        if let Some(h) = &self.head {
            if h.batch_size == 0 || !(h.learning_rate > 0.0) {
                return bad("head needs batch_size >= 1 and learning_rate > 0".into());
            }
            if h.kind == HeadKind::Finetune && self.model == ModelKind::Rsm {
                return bad("count-input models take a logistic head, not finetuning".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal() -> &'static str {
        r#"{"name":"t","model":"rbm","layer_sizes":[4],"data":{"format":"idx","path":"x.idx"}}"#
    }

    #[test]
    fn minimal_config_round_trips() {
        let c = ExperimentConfig::from_json(minimal()).unwrap();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = minimal().replace("\"seed\"", "").replacen('{', r#"{"sead":3,"#, 1);
        assert!(matches!(ExperimentConfig::from_json(&text), Err(Error::Serde(_))));
        let nested = minimal().replace(r#""layer_sizes""#, r#""train":{"epocs":3},"layer_sizes""#);
        assert!(ExperimentConfig::from_json(&nested).is_err());
    }

    #[test]
    fn validation_runs_before_compute() {
        let bad = minimal().replace("[4]", "[4, 3]");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))));
        let bad = minimal().replace(r#""model":"rbm""#, r#""model":"rsm""#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let bad = minimal().replace(r#""model":"rbm""#, r#""model":"dbm","reg":{"mode":"do"}"#);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, minimal()).unwrap();
        let c = ExperimentConfig::load(&path).unwrap();
        assert_eq!(c.data.path, dir.path().join("x.idx"));
        assert_eq!(c.output_dir, dir.path().join("runs"));
    }
}
