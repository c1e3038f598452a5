use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::deep::{
    dbm_pretrain_and_train, dbn_layer_init, dbn_pretrain, ffnn_finetune, grbm_train, logistic_head, rsm_train,
    DbmConfig, DbmEvent, DbnLayerConfig, Ffnn, FinetuneReport, Labeled, LayerStack,
};
use crate::error::{Error, Result};
use crate::evaluation::{ais_log_likelihood, classification_error, pseudo_likelihood, stochastic_pseudo_likelihood};
use crate::numerics::{Matrix, RandomSource};
use crate::rbm::{LayerKind, RbmParams};
use crate::regularizers::EpochEvent;

use super::checkpoint::{features_for, Checkpoint, CHECKPOINT_VERSION};
use super::config::{EvalConfig, ExperimentConfig, HeadKind, ModelKind, PlVariant};
use super::dataset::{DataKind, Dataset, Split};
use super::metrics::{write_json, MetricsRow, MetricsWriter};
use super::prepare::prepare;

const TRAIN: u64 = 0x5452;
const EVAL: u64 = 0x4556;
const HEAD: u64 = 0x4844;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const ERROR_FILE: &str = "error.json";

/// Final numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub model: ModelKind,
    pub seed: u64,
    pub epochs: usize,
    pub pseudo_likelihood: Option<f64>,
    pub ais_loglik: Option<f64>,
    pub ais_stderr: Option<f64>,
    /// Head epoch with the lowest validation error.
    pub head_best_epoch: Option<usize>,
    /// Validation error of the head before its first update.
    pub init_valid_err: Option<f64>,
    pub valid_err: Option<f64>,
    pub test_err: Option<f64>,
}

/// Seed and environment of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub package: String,
    pub version: String,
    pub target_os: String,
    pub target_arch: String,
    pub seed: u64,
    pub data_provenance: String,
    pub rows: RowCounts,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub checkpoint: Checkpoint,
}

#[derive(Clone, Copy, Debug, Default)]
struct Evaluated {
    pl: Option<f64>,
    ais: Option<(f64, f64)>,
}

/// Writes metrics rows and evaluates the model-fit columns on schedule.
struct Recorder<'a> {
    writer: MetricsWriter,
    eval: &'a EvalConfig,
    /// Binary evaluation rows, when the first layer is binary.
    eval_data: Option<Matrix>,
    seed: u64,
    last_epoch: usize,
    start: Instant,
    record_wall_time: bool,
    last: Evaluated,
}

fn due(every: usize, epoch: usize, last: usize) -> bool {
    epoch == last || (every > 0 && epoch % every == 0)
}

impl Recorder<'_> {
    fn evaluate(&mut self, params: &RbmParams, epoch: usize) -> Result<Evaluated> {
        let Some(data) = &self.eval_data else {
            return Ok(Evaluated::default());
        };
        let mut out = Evaluated::default();
        if due(self.eval.every, epoch, self.last_epoch) {
            out.pl = match self.eval.pseudo_likelihood {
                PlVariant::None => None,
                PlVariant::Full => Some(pseudo_likelihood(params, data)?),
                PlVariant::Stochastic => {
                    let mut rng = RandomSource::new(self.seed, EVAL).derive(&[epoch as u64]);
                    Some(stochastic_pseudo_likelihood(params, data, &mut rng)?)
                }
            };
        }
        if self.eval.ais && due(self.eval.ais_every, epoch, self.last_epoch) {
            let r = ais_log_likelihood(params, data, &self.eval.ais_config(self.seed))?;
            out.ais = Some((r.log_likelihood, r.estimate.stderr));
        }
        if out.pl.is_some() {
            self.last.pl = out.pl;
        }
        if out.ais.is_some() {
            self.last.ais = out.ais;
        }
        Ok(out)
    }

    fn write(&mut self, mut row: MetricsRow, ev: Evaluated) -> Result<()> {
        row.pseudo_likelihood = ev.pl;
        row.ais_loglik = ev.ais.map(|a| a.0);
        row.ais_stderr = ev.ais.map(|a| a.1);
        if self.record_wall_time {
            row.wall_seconds = Some(self.start.elapsed().as_secs_f64());
        }
        self.writer.write(&row)
    }

    fn epoch_event(&mut self, epoch: usize, phase: String, e: &EpochEvent<'_>, evaluate: bool) -> Result<()> {
        let ev = if evaluate {
            let mean = e.regularizer.mean_network(e.params)?;
            self.evaluate(&mean, e.epoch)?
        } else {
            Evaluated::default()
        };
        let row = MetricsRow {
            penalty_value: Some(e.penalty),
            ..MetricsRow::new(epoch, phase)
        };
        self.write(row, ev)
    }
}

fn total_epochs(config: &ExperimentConfig) -> usize {
    match config.model {
        ModelKind::Dbm => config.dbm.pretrain.epochs * config.layer_sizes.len() + config.train.epochs,
        ModelKind::Dbn => config.train.epochs * config.layer_sizes.len(),
        _ => config.train.epochs,
    }
}

/// Train the configured model and write `config.json`, `metrics.csv`,
/// `checkpoint.json`, `manifest.json` and `summary.json` into
/// [`ExperimentConfig::run_dir`]. The config echo is written first; if the
/// run fails, `error.json` is written next to it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let dir = config.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_json(&dir.join(CONFIG_FILE), config)?;
    let result = execute(config, &dir);
    if let Err(e) = &result {
        let report = serde_json::json!({"kind": e.kind(), "message": e.to_string()});
        if let Err(w) = write_json(&dir.join(ERROR_FILE), &report) {
            warn!("could not record the failure: {w}");
        }
    }
    result
}

fn execute(config: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let prepared = prepare(&config.data, None)?;
    let data = &prepared.dataset;
    let (train_x, train_y) = data.part(Split::Train);
    if train_x.rows() == 0 {
        return Err(Error::Data("the training split is empty".into()));
    }
    info!(
        "{}: {} train / {} valid / {} test rows, {} features",
        config.name,
        train_x.rows(),
        data.indices(Split::Valid).len(),
        data.indices(Split::Test).len(),
        train_x.cols()
    );
    let (valid_x, valid_y) = data.part(Split::Valid);
    let eval_rows = if valid_x.rows() > 0 { &valid_x } else { &train_x };
    let eval_data = (data.kind() == DataKind::Binary).then(|| eval_rows.clone());

    let mut rec = Recorder {
        writer: MetricsWriter::create(&dir.join(METRICS_FILE))?,
        eval: &config.eval,
        eval_data,
        seed: config.seed,
        last_epoch: config.train.epochs,
        start: Instant::now(),
        record_wall_time: config.record_wall_time,
        last: Evaluated::default(),
    };
    let rng = RandomSource::new(config.seed, 0);
    let train_rng = rng.derive(&[TRAIN]);

    let init_eval = match config.model {
        ModelKind::Rbm | ModelKind::Dbn => {
            let init = dbn_layer_init(train_x.cols(), config.layer_sizes[0], &train_rng, 0);
            rec.evaluate(&init, 0)?
        }
        _ => Evaluated::default(),
    };
    rec.write(MetricsRow::new(0, "init"), init_eval)?;

    let stack = train_model(config, &train_x, &train_rng, &mut rec)?;

    let mut summary = RunSummary {
        name: config.name.clone(),
        model: config.model,
        seed: config.seed,
        epochs: total_epochs(config),
        pseudo_likelihood: rec.last.pl,
        ais_loglik: rec.last.ais.map(|a| a.0),
        ais_stderr: rec.last.ais.map(|a| a.1),
        head_best_epoch: None,
        init_valid_err: None,
        valid_err: None,
        test_err: None,
    };

    let mut head = None;
    if let Some(hcfg) = &config.head {
        let (Some(train_y), Some(valid_y)) = (train_y, valid_y) else {
            return Err(Error::Config("a classifier head needs labelled data".into()));
        };
        let n_classes = data.n_classes();
        let features = |x: &Matrix| -> Result<Matrix> {
            match hcfg.kind {
                HeadKind::Logistic => features_for(config.model, &stack, x, config.dbm.mean_field_iterations),
                HeadKind::Finetune => Ok(x.clone()),
            }
        };
        let tf = features(&train_x)?;
        let (vf, vy) = if valid_x.rows() > 0 {
            (features(&valid_x)?, valid_y)
        } else {
            warn!("no validation rows; the head is selected on the training split");
            (tf.clone(), train_y.clone())
        };
        let train_l = Labeled {
            features: &tf,
            labels: &train_y,
        };
        let valid_l = Labeled {
            features: &vf,
            labels: &vy,
        };
        let fcfg = hcfg.finetune_config(config.seed);
        let (net, report): (Ffnn, FinetuneReport) = match hcfg.kind {
            HeadKind::Logistic => logistic_head(train_l, valid_l, n_classes, &fcfg)?,
            HeadKind::Finetune => {
                let init = Ffnn::from_stack(&stack, n_classes, hcfg.init_scale, &rng.derive(&[HEAD]))?;
                ffnn_finetune(&init, train_l, valid_l, &fcfg)?
            }
        };
        for h in &report.history {
            let row = MetricsRow {
                train_err: Some(h.train_error),
                valid_err: Some(h.valid_error),
                ..MetricsRow::new(h.epoch, "head")
            };
            rec.write(row, Evaluated::default())?;
        }
        let (test_x, test_y) = data.part(Split::Test);
        if test_x.rows() > 0 {
            let test_y = test_y.expect("labelled");
            summary.test_err = Some(classification_error(&net, &features(&test_x)?, &test_y)?);
        }
        summary.head_best_epoch = Some(report.best_epoch);
        summary.init_valid_err = report.history.first().map(|h| h.valid_error);
        summary.valid_err = Some(report.best_valid_error);
        head = Some(net);
    }

    let checkpoint = Checkpoint {
        version: CHECKPOINT_VERSION,
        model: config.model,
        stack,
        seed: config.seed,
        epoch: total_epochs(config),
        head,
        head_kind: config.head.as_ref().map(|h| h.kind),
        data: config.data.clone(),
        preprocessing: prepared.preprocessing.clone(),
        mean_field_iterations: config.dbm.mean_field_iterations,
    };
    checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    write_json(&dir.join(MANIFEST_FILE), &manifest(config, data))?;
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(RunOutput {
        dir: dir.to_path_buf(),
        summary,
        checkpoint,
    })
}

fn manifest(config: &ExperimentConfig, data: &Dataset) -> Manifest {
    Manifest {
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        target_os: std::env::consts::OS.into(),
        target_arch: std::env::consts::ARCH.into(),
        seed: config.seed,
        data_provenance: data.provenance.clone(),
        rows: RowCounts {
            train: data.indices(Split::Train).len(),
            valid: data.indices(Split::Valid).len(),
            test: data.indices(Split::Test).len(),
        },
        files: [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE, MANIFEST_FILE, SUMMARY_FILE]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

fn train_model(config: &ExperimentConfig, x: &Matrix, rng: &RandomSource, rec: &mut Recorder<'_>) -> Result<LayerStack> {
    let epochs = config.train.epochs;
    match config.model {
        ModelKind::Rbm | ModelKind::Dbn => {
            let layers: Vec<DbnLayerConfig> = config
                .layer_sizes
                .iter()
                .enumerate()
                .map(|(l, &n_hidden)| DbnLayerConfig {
                    n_hidden,
                    train: config.train.clone(),
                    reg: config.layer_reg(l).clone(),
                })
                .collect();
            let single = config.model == ModelKind::Rbm;
            dbn_pretrain(LayerKind::Bernoulli, x, &layers, config.propagation, rng, &mut |l, e| {
                let phase = if single {
                    e.phase.to_string()
                } else {
                    format!("layer{}:{}", l + 1, e.phase)
                };
                rec.epoch_event(l * epochs + e.epoch, phase, e, l == 0)
            })
        }
        ModelKind::Rsm | ModelKind::Grbm => {
            let mut observer = |e: &EpochEvent<'_>| rec.epoch_event(e.epoch, e.phase.to_string(), e, false);
            let (kind, trained) = if config.model == ModelKind::Rsm {
                let t = rsm_train(x, config.layer_sizes[0], &config.train, &config.reg, rng, &mut observer)?;
                (LayerKind::SoftmaxCounts, t)
            } else {
                let t = grbm_train(x, config.layer_sizes[0], &config.train, &config.reg, rng, &mut observer)?;
                (LayerKind::Gaussian, t)
            };
            let params = trained.regularizer.mean_network(&trained.params)?;
            Ok(LayerStack::single(kind, params))
        }
        ModelKind::Dbm => {
            let dbm = DbmConfig {
                pretrain: config.dbm.pretrain.clone(),
                train: config.train.clone(),
                mean_field_iterations: config.dbm.mean_field_iterations,
                gibbs_steps: config.dbm.gibbs_steps,
            };
            dbm_pretrain_and_train(x, &config.layer_sizes, &dbm, &config.reg, rng, &mut |e: &DbmEvent<'_>| {
                let row = MetricsRow {
                    penalty_value: Some(e.penalty),
                    ..MetricsRow::new(e.epoch, e.phase)
                };
                rec.write(row, Evaluated::default())
            })
        }
    }
}
