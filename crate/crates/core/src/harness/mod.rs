//! Data ingestion, experiment configs, runs with metrics and checkpoints,
//! hyperparameter sweeps and enumeration cross-checks.

mod bow;
mod checkpoint;
mod config;
mod csvdata;
mod dataset;
mod idx;
mod metrics;
mod oracle;
mod prepare;
mod run;
mod sweep;

pub use bow::{bow_corpus, build_vocabulary, count_matrix, load_bow, parse_bow, read_bow_documents, BowCorpus, Document};
pub use checkpoint::{features_for, Checkpoint, CHECKPOINT_VERSION};
pub use config::{
    DataConfig, DataFormat, DbmSettings, EvalConfig, ExperimentConfig, HeadConfig, HeadKind, ModelKind, PlVariant,
    OUTPUT_ROOT_ENV,
};
pub use csvdata::{load_csv_features, read_csv, CsvTable, Standardizer, VARIANCE_FLOOR};
pub use dataset::{encode_labels, split_order, DataKind, Dataset, Split, SplitCounts};
pub use idx::{
    encode_idx, idx_images, load_idx, load_idx_labels, parse_idx, IdxArray, BINARIZE_THRESHOLD, IDX_IMAGES_MAGIC,
    IDX_VECTOR_MAGIC,
};
pub use metrics::{read_json, read_metrics, write_json, MetricsRow, MetricsWriter, METRICS_COLUMNS};
pub use oracle::{run_oracles, OracleCheck, OracleConfig};
pub use prepare::{prepare, Prepared, Preprocessing};
pub use run::{
    run_experiment, Manifest, RowCounts, RunOutput, RunSummary, CHECKPOINT_FILE, CONFIG_FILE, ERROR_FILE,
    MANIFEST_FILE, METRICS_FILE, SUMMARY_FILE,
};
pub use sweep::{
    cell_seed, expand_grid, read_sweep_rows, sample_sd, select_winner, set_path, summarize, sweep, sweep_files,
    write_sweep_rows, SweepGrid, SweepOutcome, SweepRow, SWEEP_SUMMARY_FILE,
};
