use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use boltzreg::deep::{argmax, Classifier};
use boltzreg::evaluation::{ais_log_likelihood, classification_error, confusion_matrix, pseudo_likelihood, AisConfig};
use boltzreg::harness::{
    prepare, read_json, run_experiment, run_oracles, sweep_files, Checkpoint, DataConfig, DataKind, ExperimentConfig,
    OracleConfig, Split,
};
use boltzreg::rbm::LayerKind;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

/// Train, evaluate and sweep regularized Boltzmann machines.
#[derive(Parser)]
#[command(name = "boltzreg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Train { config: PathBuf },
    /// Model-fit metrics of a checkpoint's first layer on its data.
    Eval {
        checkpoint: PathBuf,
        /// Pseudo-likelihood.
        #[arg(long)]
        pl: bool,
        /// AIS log-likelihood.
        #[arg(long)]
        ais: bool,
        #[arg(long, value_enum, default_value = "valid")]
        split: SplitArg,
        #[arg(long, default_value_t = 1000)]
        ais_temperatures: usize,
        #[arg(long, default_value_t = 100)]
        ais_runs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Classify a dataset (a data config JSON) with a checkpoint's head.
    Classify { checkpoint: PathBuf, dataset: PathBuf },
    /// Run a hyperparameter grid over a config template.
    Sweep { template: PathBuf, grid: PathBuf },
    /// Cross-check tractable quantities against enumeration.
    Oracle { config: PathBuf },
}

fn print(value: &serde_json::Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn train(config: &Path) -> anyhow::Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let out = run_experiment(&cfg)?;
    print(&json!({"run_dir": out.dir, "summary": out.summary}))
}

struct EvalArgs {
    pl: bool,
    ais_enabled: bool,
    split: Split,
    ais: AisConfig,
}

fn eval(checkpoint: &Path, args: EvalArgs) -> anyhow::Result<()> {
    if !args.pl && !args.ais_enabled {
        bail!("nothing to evaluate; pass --pl and/or --ais");
    }
    let ckpt = Checkpoint::load(checkpoint)?;
    let layer = &ckpt.stack.layers()[0];
    if layer.kind != LayerKind::Bernoulli {
        bail!("model-fit metrics need a binary first layer");
    }
    let data = prepare(&ckpt.data, Some(&ckpt.preprocessing))?.dataset;
    if data.kind() != DataKind::Binary {
        bail!("model-fit metrics need binary data");
    }
    let (x, _) = data.part(args.split);
    if x.rows() == 0 {
        bail!("the requested split has no rows");
    }
    let mut out = json!({"rows": x.rows()});
    if args.pl {
        out["pseudo_likelihood"] = json!(pseudo_likelihood(&layer.params, &x)?);
    }
    if args.ais_enabled {
        let r = ais_log_likelihood(&layer.params, &x, &args.ais)?;
        out["ais_loglik"] = json!(r.log_likelihood);
        out["ais_stderr"] = json!(r.estimate.stderr);
        out["log_partition"] = json!(r.estimate.log_partition);
    }
    print(&out)
}

fn classify(checkpoint: &Path, dataset: &Path) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg: DataConfig = read_json(dataset)?;
    cfg.resolve_paths(dataset.parent().unwrap_or(Path::new(".")));
    let data = prepare(&cfg, Some(&ckpt.preprocessing))?.dataset;
    let split = if data.indices(Split::Test).is_empty() { None } else { Some(Split::Test) };
    let (x, y) = match split {
        Some(s) => data.part(s),
        None => (data.features().clone(), data.labels().map(<[usize]>::to_vec)),
    };
    let (head, inputs) = ckpt.head_inputs(&x)?;
    let mut out = json!({"rows": x.rows(), "split": if split.is_some() { "test" } else { "all" }});
    match y {
        Some(y) => {
            out["error_rate"] = json!(classification_error(head, &inputs, &y)?);
            out["confusion"] = json!(confusion_matrix(head, &inputs, &y)?);
        }
        None => {
            let predictions: Vec<usize> = inputs.row_iter().map(|r| argmax(&head.scores(r))).collect();
            out["predictions"] = json!(predictions);
        }
    }
    print(&out)
}

fn sweep(template: &Path, grid: &Path) -> anyhow::Result<()> {
    let out = sweep_files(template, grid)?;
    print(&json!({"dir": out.dir, "winner": out.winner, "rows": out.rows}))
}

fn oracle(config: &Path) -> anyhow::Result<()> {
    let cfg: OracleConfig = read_json(config)?;
    let checks = run_oracles(&cfg)?;
    print(&json!({"checks": checks}))?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(anyhow!("oracle checks failed: {}", failed.join(", ")));
    }
    Ok(())
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    err.chain()
        .find_map(|e| e.downcast_ref::<boltzreg::Error>())
        .map_or("cli", boltzreg::Error::kind)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config } => train(&config).with_context(|| format!("training from {}", config.display())),
        Command::Eval {
            checkpoint,
            pl,
            ais,
            split,
            ais_temperatures,
            ais_runs,
            seed,
        } => eval(
            &checkpoint,
            EvalArgs {
                pl,
                ais_enabled: ais,
                split: split.into(),
                ais: AisConfig {
                    num_temperatures: ais_temperatures,
                    num_runs: ais_runs,
                    seed,
                    base_visible_bias: None,
                },
            },
        ),
        Command::Classify { checkpoint, dataset } => classify(&checkpoint, &dataset),
        Command::Sweep { template, grid } => sweep(&template, &grid),
        Command::Oracle { config } => oracle(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({"error": {"kind": error_kind(&e), "message": format!("{e:#}")}});
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}
