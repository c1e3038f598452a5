use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomSource};

const SPLIT: u64 = 0x5350;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Binary,
    Real,
    Counts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// A design matrix with optional labels and a split tag per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    kind: DataKind,
    features: Matrix,
    labels: Option<Vec<usize>>,
    splits: Vec<Split>,
    pub provenance: String,
}

impl Dataset {
    /// All rows start in the training split.
    pub fn new(kind: DataKind, features: Matrix, labels: Option<Vec<usize>>, provenance: impl Into<String>) -> Result<Self> {
        check_domain(kind, &features)?;
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::ShapeMismatch {
                    op: "dataset labels",
                    left: (features.rows(), 1),
                    right: (l.len(), 1),
                });
            }
        }
        let splits = vec![Split::Train; features.rows()];
        Ok(Dataset {
            kind,
            features,
            labels,
            splits,
            provenance: provenance.into(),
        })
    }

    pub fn kind(&self) -> DataKind {
        self.kind
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |&m| m + 1)
    }

    pub fn set_splits(&mut self, splits: Vec<Split>) -> Result<()> {
        if splits.len() != self.rows() {
            return Err(Error::ShapeMismatch {
                op: "split tags",
                left: (self.rows(), 1),
                right: (splits.len(), 1),
            });
        }
        self.splits = splits;
        Ok(())
    }

    /// Reorder rows by [`split_order`] and tag them.
    pub fn split_by_counts(&self, counts: SplitCounts, shuffle_seed: Option<u64>) -> Result<Dataset> {
        let order = split_order(self.rows(), counts, shuffle_seed)?;
        let rows: Vec<usize> = order.iter().map(|&(r, _)| r).collect();
        let mut out = self.select(&rows);
        out.splits = order.into_iter().map(|(_, s)| s).collect();
        Ok(out)
    }

    /// Rows in the given order, keeping their tags.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            kind: self.kind,
            features: self.features.select_rows(rows),
            labels: self.labels.as_ref().map(|l| rows.iter().map(|&r| l[r]).collect()),
            splits: rows.iter().map(|&r| self.splits[r]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows()).filter(|&r| self.splits[r] == split).collect()
    }

    /// Features and labels of one split.
    pub fn part(&self, split: Split) -> (Matrix, Option<Vec<usize>>) {
        let idx = self.indices(split);
        (
            self.features.select_rows(&idx),
            self.labels.as_ref().map(|l| idx.iter().map(|&r| l[r]).collect()),
        )
    }

    /// Replace the features (same rows), e.g. after standardization.
    pub fn with_features(&self, kind: DataKind, features: Matrix) -> Result<Dataset> {
        if features.rows() != self.rows() {
            return Err(Error::ShapeMismatch {
                op: "with_features",
                left: (self.rows(), 0),
                right: features.shape(),
            });
        }
        check_domain(kind, &features)?;
        Ok(Dataset {
            kind,
            features,
            ..self.clone()
        })
    }
}

/// Requested split sizes. A missing `train` takes every row not claimed by
/// `valid` and `test`; a missing `test` takes what is left after `train`
/// and `valid`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: Option<usize>,
    pub valid: usize,
    pub test: Option<usize>,
}

impl SplitCounts {
    pub fn resolve(self, n: usize) -> Result<(usize, usize, usize)> {
        let too_many = |t: usize, v: usize, e: usize| {
            Error::Config(format!("split sizes {t}+{v}+{e} exceed the {n} available rows"))
        };
        let (train, test) = match (self.train, self.test) {
            (Some(t), Some(e)) => (t, e),
            (Some(t), None) => (t, n.saturating_sub(t + self.valid)),
            (None, e) => {
                let e = e.unwrap_or(0);
                (n.checked_sub(self.valid + e).ok_or_else(|| too_many(0, self.valid, e))?, e)
            }
        };
        if train + self.valid + test > n {
            return Err(too_many(train, self.valid, test));
        }
        Ok((train, self.valid, test))
    }
}

/// Row order and split tags for `n` rows: an optional seeded shuffle, then
/// train, valid and test rows in that order. Rows past the requested sizes
/// are left out.
pub fn split_order(n: usize, counts: SplitCounts, shuffle_seed: Option<u64>) -> Result<Vec<(usize, Split)>> {
    let (train, valid, test) = counts.resolve(n)?;
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        RandomSource::new(seed, SPLIT).shuffle(&mut order);
    }
    order.truncate(train + valid + test);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let tag = if i < train {
                Split::Train
            } else if i < train + valid {
                Split::Valid
            } else {
                Split::Test
            };
            (r, tag)
        })
        .collect())
}

fn check_domain(kind: DataKind, features: &Matrix) -> Result<()> {
    let bad = features.as_slice().iter().position(|&x| match kind {
        DataKind::Binary => x != 0.0 && x != 1.0,
        DataKind::Counts => !(x >= 0.0 && x.fract() == 0.0 && x.is_finite()),
        DataKind::Real => !x.is_finite(),
    });
    match bad {
        None => Ok(()),
        Some(pos) => Err(Error::Data(format!(
            "entry ({}, {}) = {} is not valid for {:?} data",
            pos / features.cols().max(1),
            pos % features.cols().max(1),
            features.as_slice()[pos],
            kind
        ))),
    }
}

/// Map string labels to class indices in sorted label order.
pub fn encode_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = raw.to_vec();
    names.sort();
    names.dedup();
    let idx = raw
        .iter()
        .map(|r| names.binary_search(r).expect("label present"))
        .collect();
    (idx, names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let x = Matrix::from_fn(10, 2, |i, j| ((i + j) % 2) as f64);
        Dataset::new(DataKind::Binary, x, Some((0..10).map(|i| i % 3).collect()), "toy").unwrap()
    }

    #[test]
    fn domain_is_checked() {
        let x = Matrix::from_rows(&[vec![0.0, 0.5]]).unwrap();
        assert!(Dataset::new(DataKind::Binary, x.clone(), None, "").is_err());
        assert!(Dataset::new(DataKind::Counts, x.clone(), None, "").is_err());
        assert!(Dataset::new(DataKind::Real, x, None, "").is_ok());
    }

    #[test]
    fn splits_partition_rows() {
        let counts = |t, v, e| SplitCounts {
            train: t,
            valid: v,
            test: e,
        };
        let d = toy().split_by_counts(counts(Some(5), 3, None), Some(7)).unwrap();
        assert_eq!(d.indices(Split::Train).len(), 5);
        assert_eq!(d.indices(Split::Valid).len(), 3);
        assert_eq!(d.indices(Split::Test).len(), 2);
        assert!(toy().split_by_counts(counts(Some(8), 3, None), None).is_err());
        assert!(toy().split_by_counts(counts(None, 8, Some(3)), None).is_err());
        let limited = toy().split_by_counts(counts(Some(2), 2, Some(2)), None).unwrap();
        assert_eq!(limited.rows(), 6);
        let rest = toy().split_by_counts(counts(None, 3, None), None).unwrap();
        assert_eq!(rest.indices(Split::Train), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn labels_encode_sorted() {
        let raw: Vec<String> = ["b", "a", "c", "a"].iter().map(|s| s.to_string()).collect();
        let (idx, names) = encode_labels(&raw);
        assert_eq!(idx, vec![1, 0, 2, 0]);
        assert_eq!(names, vec!["a", "b", "c"]);
    }
}
