use std::path::{Path, PathBuf};

use boltzreg::harness::{
    read_json, read_metrics, read_sweep_rows, run_experiment, sweep, Checkpoint, ExperimentConfig, SweepGrid,
    CHECKPOINT_FILE, CONFIG_FILE, ERROR_FILE, MANIFEST_FILE, METRICS_COLUMNS, METRICS_FILE, OUTPUT_ROOT_ENV,
    SUMMARY_FILE, SWEEP_SUMMARY_FILE,
};
use serde_json::{json, Value};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn digits_template(out: &Path) -> Value {
    std::env::remove_var(OUTPUT_ROOT_ENV);
    json!({
        "name": "digits-small",
        "model": "rbm",
        "layer_sizes": [32],
        "train": {"cd_k": 1, "learning_rate": 0.1, "batch_size": 20, "epochs": 3, "seed": 0, "shuffle": true},
        "data": {
            "format": "idx",
            "path": data_dir().join("digits-images.idx"),
            "labels": data_dir().join("digits-labels.idx"),
            "train": 300, "valid": 100, "test": 100
        },
        "eval": {"pseudo_likelihood": "full", "every": 1},
        "head": {"kind": "logistic", "epochs": 20, "learning_rate": 0.5, "batch_size": 10},
        "output_dir": out,
        "seed": 5
    })
}

fn config(doc: Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&doc.to_string()).unwrap()
}

fn metrics_bytes(dir: &Path) -> Vec<u8> {
    std::fs::read(dir.join(METRICS_FILE)).unwrap()
}

#[test]
fn same_seed_same_bytes_other_seed_differs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&config(digits_template(a.path()))).unwrap();
    let rb = run_experiment(&config(digits_template(b.path()))).unwrap();
    assert_eq!(metrics_bytes(&ra.dir), metrics_bytes(&rb.dir));
    assert_eq!(
        std::fs::read(ra.dir.join(CHECKPOINT_FILE)).unwrap(),
        std::fs::read(rb.dir.join(CHECKPOINT_FILE)).unwrap()
    );

    let c = tempfile::tempdir().unwrap();
    let mut doc = digits_template(c.path());
    doc["seed"] = json!(6);
    let rc = run_experiment(&config(doc)).unwrap();
    assert_ne!(metrics_bytes(&ra.dir), metrics_bytes(&rc.dir));
}

#[test]
fn run_directory_round_trips() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(digits_template(out.path()));
    let run = run_experiment(&cfg).unwrap();
    for f in [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE, MANIFEST_FILE, SUMMARY_FILE] {
        assert!(run.dir.join(f).is_file(), "{f}");
    }
    assert!(!run.dir.join(ERROR_FILE).exists());

    let echoed: ExperimentConfig = read_json(&run.dir.join(CONFIG_FILE)).unwrap();
    assert_eq!(echoed, cfg);
    let ckpt = Checkpoint::load(&run.dir.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt, run.checkpoint);
    assert_eq!(ckpt.epoch, 3);

    let rows = read_metrics(&run.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(rows.len(), 1 + 3 + 21);
    assert_eq!(rows[0].phase, "init");
    assert!(rows[1..4].iter().all(|r| r.phase == "train" && r.pseudo_likelihood.is_some()));
    assert!(rows[4..].iter().all(|r| r.phase == "head" && r.valid_err.is_some()));
    assert!(rows.iter().all(|r| r.wall_seconds.is_none()));
    let text = std::fs::read_to_string(run.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_COLUMNS.join(","));

    let summary: Value = read_json(&run.dir.join(SUMMARY_FILE)).unwrap();
    assert!(summary["test_err"].as_f64().unwrap() < 0.5);
}

#[test]
fn zero_epochs_writes_only_the_initial_row() {
    let out = tempfile::tempdir().unwrap();
    let mut doc = digits_template(out.path());
    doc["train"]["epochs"] = json!(0);
    doc["head"] = Value::Null;
    let run = run_experiment(&config(doc)).unwrap();
    let text = std::fs::read_to_string(run.dir.join(METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 2);
    let rows = read_metrics(&run.dir.join(METRICS_FILE)).unwrap();
    assert_eq!((rows[0].epoch, rows[0].phase.as_str()), (0, "init"));
    assert!(rows[0].pseudo_likelihood.is_some());
}

#[test]
fn single_cell_sweep_matches_a_plain_run() {
    let s = tempfile::tempdir().unwrap();
    let template = digits_template(s.path());
    let grid: SweepGrid = serde_json::from_value(json!({"parameters": {}})).unwrap();
    let outcome = sweep(&template, Path::new("."), &grid).unwrap();
    assert_eq!(outcome.winner, Some(0));
    let rows = read_sweep_rows(&outcome.dir.join(SWEEP_SUMMARY_FILE)).unwrap();
    assert_eq!(rows, outcome.rows);

    let p = tempfile::tempdir().unwrap();
    let plain = run_experiment(&config(digits_template(p.path()))).unwrap();
    assert_eq!(metrics_bytes(&outcome.dir.join("cell000-rep0")), metrics_bytes(&plain.dir));
}

#[test]
fn sweep_reports_every_cell_and_a_winner() {
    let out = tempfile::tempdir().unwrap();
    let mut template = digits_template(out.path());
    template["head"]["epochs"] = json!(1);
    let grid: SweepGrid = serde_json::from_value(json!({
        "parameters": {"reg.mode": ["none", "do"], "train.epochs": [1]},
        "replicates": 2
    }))
    .unwrap();
    let outcome = sweep(&template, Path::new("."), &grid).unwrap();
    let kinds: Vec<&str> = outcome.rows.iter().map(|r| r.row_type.as_str()).collect();
    assert_eq!(kinds.iter().filter(|k| **k == "cell").count(), 2);
    assert_eq!(kinds.iter().filter(|k| **k == "run").count(), 4);
    assert_eq!(kinds.iter().filter(|k| **k == "winner").count(), 1);
    assert!(outcome.winner.is_some());
    for c in 0..2 {
        for r in 0..2 {
            assert!(outcome.dir.join(format!("cell{c:03}-rep{r}")).join(METRICS_FILE).is_file());
        }
    }
}

#[test]
fn failure_writes_error_report() {
    let out = tempfile::tempdir().unwrap();
    let mut doc = digits_template(out.path());
    doc["data"]["path"] = json!(out.path().join("missing.idx"));
    let cfg = config(doc);
    assert!(run_experiment(&cfg).is_err());
    let report: Value = read_json(&cfg.run_dir().join(ERROR_FILE)).unwrap();
    assert_eq!(report["kind"], "io");
    assert!(cfg.run_dir().join(CONFIG_FILE).is_file());
}

#[test]
fn invalid_config_is_rejected_before_any_output() {
    let out = tempfile::tempdir().unwrap();
    let mut doc = digits_template(out.path());
    doc["model"] = json!("rsm");
    assert!(ExperimentConfig::from_json(&doc.to_string()).is_err());
    let mut cfg = config(digits_template(out.path()));
    cfg.layer_sizes.clear();
    assert!(run_experiment(&cfg).is_err());
    assert!(!cfg.run_dir().exists());
    let mut doc = digits_template(out.path());
    doc["unexpected"] = json!(1);
    assert!(ExperimentConfig::from_json(&doc.to_string()).is_err());
}

#[test]
fn deep_models_run_end_to_end() {
    for (model, sizes, head) in [("dbn", json!([32, 32]), "finetune"), ("dbm", json!([32, 32]), "logistic")] {
        let out = tempfile::tempdir().unwrap();
        let mut doc = digits_template(out.path());
        doc["model"] = json!(model);
        doc["layer_sizes"] = sizes;
        doc["head"]["kind"] = json!(head);
        doc["dbm"] = json!({"pretrain": {"epochs": 3, "learning_rate": 0.05, "batch_size": 20}});
        let run = run_experiment(&config(doc)).unwrap();
        assert_eq!(run.checkpoint.stack.len(), 2, "{model}");
        let err = run.summary.test_err.unwrap();
        assert!(err < 0.6, "{model}: {err}");
    }
}

#[test]
fn replicated_softmax_on_bag_of_words() {
    let out = tempfile::tempdir().unwrap();
    let corpus = out.path().join("docs.txt");
    let mut text = String::new();
    for n in 0..60 {
        if n % 2 == 0 {
            text.push_str("sport\tball:3 goal team:2 win\n");
        } else {
            text.push_str("tech\tchip:2 code compiler:3 bug\n");
        }
    }
    std::fs::write(&corpus, text).unwrap();
    let mut doc = digits_template(out.path());
    doc["model"] = json!("rsm");
    doc["layer_sizes"] = json!([4]);
    doc["data"] = json!({"format": "bow", "path": corpus, "train": 40, "valid": 10, "test": 10, "vocab_size": 8});
    let run = run_experiment(&config(doc)).unwrap();
    assert!(run.summary.test_err.unwrap() <= 0.2);
}

#[test]
fn gaussian_rbm_on_csv() {
    let out = tempfile::tempdir().unwrap();
    let table = out.path().join("points.csv");
    let mut text = String::from("x,y,z,label\n");
    for n in 0..80 {
        let s = if n % 2 == 0 { 1.0 } else { -1.0 };
        let jitter = (n as f64 * 0.37).sin() * 0.2;
        text.push_str(&format!("{},{},{},{}\n", s + jitter, -s + jitter, jitter, if s > 0.0 { "a" } else { "b" }));
    }
    std::fs::write(&table, text).unwrap();
    let mut doc = digits_template(out.path());
    doc["model"] = json!("grbm");
    doc["layer_sizes"] = json!([4]);
    doc["train"]["learning_rate"] = json!(0.01);
    doc["data"] = json!({"format": "csv", "path": table, "train": 50, "valid": 15, "test": 15, "label_column": 3, "header": true});
    let run = run_experiment(&config(doc)).unwrap();
    assert!(run.summary.test_err.unwrap() <= 0.2);
    let rows = read_metrics(&run.dir.join(METRICS_FILE)).unwrap();
    assert!(rows.iter().all(|r| r.pseudo_likelihood.is_none()));
}
