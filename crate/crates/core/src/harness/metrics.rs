use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the metrics CSV.
pub const METRICS_COLUMNS: [&str; 9] = [
    "epoch",
    "phase",
    "pseudo_likelihood",
    "ais_loglik",
    "ais_stderr",
    "penalty_value",
    "train_err",
    "valid_err",
    "wall_seconds",
];

/// One line of the metrics CSV; `None` is written as an empty cell.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub phase: String,
    pub pseudo_likelihood: Option<f64>,
    pub ais_loglik: Option<f64>,
    pub ais_stderr: Option<f64>,
    pub penalty_value: Option<f64>,
    pub train_err: Option<f64>,
    pub valid_err: Option<f64>,
    pub wall_seconds: Option<f64>,
}

impl MetricsRow {
    pub fn new(epoch: usize, phase: impl Into<String>) -> Self {
        MetricsRow {
            epoch,
            phase: phase.into(),
            ..Default::default()
        }
    }
}

/// Appends rows to a metrics file, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        inner.write_record(METRICS_COLUMNS)?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.serialize(row)?;
        self.inner.flush().map_err(|e| Error::io("metrics.csv", e))?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_COLUMNS {
        return Err(Error::Data(format!("{} has header {header:?}", path.display())));
    }
    reader.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Serialize `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip_with_blanks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            MetricsRow::new(0, "init"),
            MetricsRow {
                pseudo_likelihood: Some(-12.5),
                penalty_value: Some(1e-7),
                ..MetricsRow::new(1, "layer1:train")
            },
            MetricsRow {
                train_err: Some(0.25),
                valid_err: Some(0.1 + 0.2),
                ..MetricsRow::new(3, "head")
            },
        ];
        let mut w = MetricsWriter::create(&path).unwrap();
        for r in &rows {
            w.write(r).unwrap();
        }
        drop(w);
        assert_eq!(read_metrics(&path).unwrap(), rows);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(&METRICS_COLUMNS.join(",")));
        assert!(text.contains("\n0,init,,,,,,,\n"));
    }
}
