use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::dataset::{encode_labels, DataKind, Dataset};

/// Variances below this are treated as this value when standardizing.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Raw numeric table with optional string labels.
#[derive(Clone, Debug)]
pub struct CsvTable {
    pub features: Matrix,
    pub labels: Option<Vec<String>>,
}

/// Read a numeric CSV. `label_column`, if given, is taken verbatim as a
/// class label; every other cell must parse as a finite number. Rows and
/// columns in errors are 1-based and count the header line.
pub fn read_csv(path: &Path, label_column: Option<usize>, header: bool) -> Result<CsvTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let offset = if header { 2 } else { 1 };
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let mut row = Vec::with_capacity(record.len());
        for (c, cell) in record.iter().enumerate() {
            if Some(c) == label_column {
                labels.push(cell.to_string());
                continue;
            }
            let x: f64 = cell.parse().map_err(|_| Error::CsvCell {
                row: r + offset,
                col: c + 1,
                message: format!("{cell:?} is not a number"),
            })?;
            if !x.is_finite() {
                return Err(Error::CsvCell {
                    row: r + offset,
                    col: c + 1,
                    message: format!("{cell:?} is not finite"),
                });
            }
            row.push(x);
        }
        if let Some(lc) = label_column {
            if lc >= record.len() {
                return Err(Error::CsvCell {
                    row: r + offset,
                    col: lc + 1,
                    message: "missing label column".into(),
                });
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, Vec::len);
    let features = if rows.is_empty() {
        Matrix::zeros(0, 0)
    } else {
        Matrix::from_rows(&rows)?
    };
    debug_assert_eq!(features.cols(), cols);
    Ok(CsvTable {
        features,
        labels: label_column.map(|_| labels),
    })
}

/// Per-feature affine map to zero mean and unit variance, fitted on one
/// matrix and applied to any other.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Population statistics of `train`.
    pub fn fit(train: &Matrix) -> Result<Self> {
        if train.rows() == 0 {
            return Err(Error::Data("cannot standardize with an empty training split".into()));
        }
        let means = train.column_means();
        let n = train.rows() as f64;
        let scales = (0..train.cols())
            .map(|j| {
                let var = train.row_iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
                var.max(VARIANCE_FLOOR).sqrt()
            })
            .collect();
        Ok(Standardizer { means, scales })
    }

    pub fn apply(&self, data: &Matrix) -> Result<Matrix> {
        if data.cols() != self.means.len() {
            return Err(Error::ShapeMismatch {
                op: "standardize",
                left: (1, self.means.len()),
                right: data.shape(),
            });
        }
        Ok(Matrix::from_fn(data.rows(), data.cols(), |i, j| {
            (data.get(i, j) - self.means[j]) / self.scales[j]
        }))
    }
}

/// Load a CSV whose rows all form the training split and standardize it.
pub fn load_csv_features(path: &Path, label_column: Option<usize>, header: bool) -> Result<(Dataset, Standardizer)> {
    let table = read_csv(path, label_column, header)?;
    let standardizer = Standardizer::fit(&table.features)?;
    let labels = table.labels.map(|l| encode_labels(&l).0);
    let data = Dataset::new(
        DataKind::Real,
        standardizer.apply(&table.features)?,
        labels,
        format!("csv:{}", path.display()),
    )?;
    Ok((data, standardizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn write(text: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, text).unwrap();
        (dir, path)
    }

    #[test]
    fn constant_feature_becomes_zero() {
        let (_d, path) = write("1,5\n2,5\n3,5\n");
        let (data, _) = load_csv_features(&path, None, false).unwrap();
        assert!(data.features().column(1).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn training_split_is_standard() {
        let (_d, path) = write("f1,f2,y\n1,10,a\n2,40,b\n4,20,a\n9,30,c\n");
        let (data, _) = load_csv_features(&path, Some(2), true).unwrap();
        assert_eq!(data.labels().unwrap(), &[0, 1, 0, 2]);
        for j in 0..2 {
            let col = data.features().column(j);
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn validation_uses_training_statistics() {
        let train = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        let valid = Matrix::from_rows(&[vec![10.0], vec![10.0], vec![13.0]]).unwrap();
        let s = Standardizer::fit(&train).unwrap();
        let v = s.apply(&valid).unwrap();
        let own = Standardizer::fit(&valid).unwrap().apply(&valid).unwrap();
        assert_ne!(v, own);
        assert_abs_diff_eq!(v.get(0, 0), 9.0 / (2.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn bad_cell_names_position() {
        let (_d, path) = write("h1,h2\n1,2\n3,oops\n");
        match read_csv(&path, None, true) {
            Err(Error::CsvCell { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
