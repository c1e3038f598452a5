use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunSummary};

pub const SWEEP_SUMMARY_FILE: &str = "summary.csv";

/// Hyperparameter grid: dotted config paths mapped to candidate values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub parameters: BTreeMap<String, Vec<Value>>,
    #[serde(default = "one")]
    pub replicates: usize,
}

fn one() -> usize {
    1
}

/// Cartesian product of the grid in key order, the last key varying
/// fastest. No parameters gives a single empty cell.
pub fn expand_grid(grid: &SweepGrid) -> Result<Vec<BTreeMap<String, Value>>> {
    if grid.replicates == 0 {
        return Err(Error::Config("the sweep needs at least one replicate".into()));
    }
    if let Some((k, _)) = grid.parameters.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Config(format!("the sweep grid is empty: {k:?} has no values")));
    }
    let mut cells = vec![BTreeMap::new()];
    for (key, values) in &grid.parameters {
        cells = cells
            .into_iter()
            .flat_map(|cell| {
                values.iter().map(move |v| {
                    let mut c = cell.clone();
                    c.insert(key.clone(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

/// Set `path` (dot-separated object keys) inside `doc`, creating objects
/// on the way. Unknown keys are caught when the result is deserialized.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("{path:?}: {:?} is not an object", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(Error::Config("empty parameter path".into()))
}

/// Seed of replicate `rep` of cell `cell`.
pub fn cell_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    seed ^ cell as u64 ^ ((rep as u64) << 32)
}

/// Sample standard deviation (denominator `n − 1`); `None` below two values.
pub fn sample_sd(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    Some((xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Index of the lowest validation error, the earliest on ties. Missing and
/// NaN errors never win.
pub fn select_winner(valid_errs: &[Option<f64>]) -> Option<usize> {
    valid_errs
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.filter(|x| !x.is_nan()).map(|x| (i, x)))
        .fold(None, |best: Option<(usize, f64)>, (i, x)| match best {
            Some((_, b)) if b <= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

/// One line of the sweep summary: a single run, a cell aggregated over
/// replicates, or the winning cell repeated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub row_type: String,
    pub cell: usize,
    pub replicate: Option<usize>,
    /// Cell overrides as compact JSON.
    pub parameters: String,
    pub seed: Option<u64>,
    pub n: usize,
    pub valid_err: Option<f64>,
    pub valid_err_sd: Option<f64>,
    pub test_err: Option<f64>,
    pub test_err_sd: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub winner: Option<usize>,
}

fn mean_sd(xs: Vec<Option<f64>>) -> (Option<f64>, Option<f64>) {
    let xs: Option<Vec<f64>> = xs.into_iter().collect();
    match xs {
        Some(v) if !v.is_empty() => (Some(v.iter().sum::<f64>() / v.len() as f64), sample_sd(&v)),
        _ => (None, None),
    }
}

/// Per-cell aggregate rows followed by run rows and a winner row, built
/// from run summaries ordered by cell then replicate.
pub fn summarize(cells: &[BTreeMap<String, Value>], runs: &[Vec<RunSummary>]) -> (Vec<SweepRow>, Option<usize>) {
    let params = |c: usize| serde_json::to_string(&cells[c]).expect("JSON values serialize");
    let mut rows = Vec::new();
    let mut aggregates = Vec::new();
    for (c, reps) in runs.iter().enumerate() {
        for (r, s) in reps.iter().enumerate() {
            rows.push(SweepRow {
                row_type: "run".into(),
                cell: c,
                replicate: Some(r),
                parameters: params(c),
                seed: Some(s.seed),
                n: 1,
                valid_err: s.valid_err,
                valid_err_sd: None,
                test_err: s.test_err,
                test_err_sd: None,
            });
        }
        let (valid_err, valid_err_sd) = mean_sd(reps.iter().map(|s| s.valid_err).collect());
        let (test_err, test_err_sd) = mean_sd(reps.iter().map(|s| s.test_err).collect());
        aggregates.push(SweepRow {
            row_type: "cell".into(),
            cell: c,
            replicate: None,
            parameters: params(c),
            seed: None,
            n: reps.len(),
            valid_err,
            valid_err_sd,
            test_err,
            test_err_sd,
        });
    }
    let winner = select_winner(&aggregates.iter().map(|a| a.valid_err).collect::<Vec<_>>());
    let mut out = aggregates.clone();
    out.extend(rows);
    if let Some(w) = winner {
        out.push(SweepRow {
            row_type: "winner".into(),
            ..aggregates[w].clone()
        });
    }
    (out, winner)
}

pub fn write_sweep_rows(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

/// Run every cell and replicate of `grid` on top of the JSON `template`.
/// Relative paths in the template resolve against `base`. Runs go to
/// `<run_dir>/cellNNN-repR` of the template and `summary.csv` next to them.
pub fn sweep(template: &Value, base: &Path, grid: &SweepGrid) -> Result<SweepOutcome> {
    let cells = expand_grid(grid)?;
    let mut root_cfg: ExperimentConfig = serde_json::from_value(template.clone())?;
    root_cfg.validate()?;
    root_cfg.resolve_paths(base);
    let dir = root_cfg.run_dir();

    let mut configs = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let mut doc = template.clone();
        for (k, v) in cell {
            set_path(&mut doc, k, v.clone())?;
        }
        let mut cfg: ExperimentConfig = serde_json::from_value(doc)?;
        cfg.resolve_paths(base);
        let reps = (0..grid.replicates)
            .map(|r| {
                let mut rc = cfg.clone();
                rc.seed = cell_seed(cfg.seed, c, r);
                rc.name = format!("{}/cell{c:03}-rep{r}", root_cfg.name);
                rc.validate()?;
                Ok(rc)
            })
            .collect::<Result<Vec<_>>>()?;
        configs.push(reps);
    }
    info!("sweep {}: {} cells x {} replicates", root_cfg.name, cells.len(), grid.replicates);
    let runs: Vec<Vec<RunSummary>> = configs
        .par_iter()
        .map(|reps| reps.iter().map(|c| run_experiment(c).map(|o| o.summary)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let (rows, winner) = summarize(&cells, &runs);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_sweep_rows(&dir.join(SWEEP_SUMMARY_FILE), &rows)?;
    Ok(SweepOutcome { dir, rows, winner })
}

/// [`sweep`] with the template and grid read from JSON files.
pub fn sweep_files(template: &Path, grid: &Path) -> Result<SweepOutcome> {
    let text = std::fs::read_to_string(template).map_err(|e| Error::io(template, e))?;
    let doc: Value = serde_json::from_str(&text)?;
    let grid_text = std::fs::read_to_string(grid).map_err(|e| Error::io(grid, e))?;
    let grid: SweepGrid = serde_json::from_str(&grid_text)?;
    sweep(&doc, template.parent().unwrap_or(Path::new(".")), &grid)
}
