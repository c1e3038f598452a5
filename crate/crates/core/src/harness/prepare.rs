use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::bow::{bow_corpus, count_matrix, read_bow_documents};
use super::config::{DataConfig, DataFormat};
use super::csvdata::{read_csv, Standardizer};
use super::dataset::{split_order, DataKind, Dataset, Split};
use super::idx::load_idx;

/// Preprocessing fitted on the training split, stored with checkpoints so
/// new data is mapped the same way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Preprocessing {
    Binarize,
    Vocabulary {
        words: Vec<String>,
        label_names: Vec<String>,
    },
    Standardize {
        standardizer: Standardizer,
        label_names: Vec<String>,
    },
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub preprocessing: Preprocessing,
}

fn lookup_labels(raw: Vec<String>, names: &[String]) -> Result<Vec<usize>> {
    raw.into_iter()
        .map(|l| {
            names
                .binary_search(&l)
                .map_err(|_| Error::Data(format!("label {l:?} was not seen in training")))
        })
        .collect()
}

fn sorted_names<'a>(labels: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut names: Vec<String> = labels.cloned().collect();
    names.sort();
    names.dedup();
    names
}

/// Load, split and preprocess. With `fitted` the stored preprocessing is
/// applied; otherwise it is fitted on the training split alone.
pub fn prepare(cfg: &DataConfig, fitted: Option<&Preprocessing>) -> Result<Prepared> {
    let counts = cfg.split_counts();
    match cfg.format {
        DataFormat::Idx => {
            let raw = load_idx(&cfg.path, cfg.labels.as_deref())?;
            Ok(Prepared {
                dataset: raw.split_by_counts(counts, cfg.shuffle_seed)?,
                preprocessing: Preprocessing::Binarize,
            })
        }
        DataFormat::Bow => {
            let docs = read_bow_documents(&cfg.path)?;
            let order = split_order(docs.len(), counts, cfg.shuffle_seed)?;
            let docs: Vec<_> = order.iter().map(|&(r, _)| docs[r].clone()).collect();
            let tags: Vec<Split> = order.iter().map(|&(_, s)| s).collect();
            let provenance = format!("bow:{}", cfg.path.display());
            let (dataset, kept_tags, preprocessing) = match fitted {
                None => {
                    let train: Vec<usize> = (0..docs.len()).filter(|&r| tags[r] == Split::Train).collect();
                    let corpus = bow_corpus(&docs, &train, cfg.vocab_size, &provenance)?;
                    let kept_tags = corpus.kept.iter().map(|&r| tags[r]).collect();
                    let pre = Preprocessing::Vocabulary {
                        words: corpus.vocabulary,
                        label_names: corpus.label_names,
                    };
                    (corpus.dataset, kept_tags, pre)
                }
                Some(pre @ Preprocessing::Vocabulary { words, label_names }) => {
                    let m = count_matrix(&docs, words);
                    let keep: Vec<usize> = (0..docs.len())
                        .filter(|&r| m.row(r).iter().any(|&c| c > 0.0))
                        .collect();
                    let labels = if label_names.is_empty() {
                        None
                    } else {
                        let raw = keep
                            .iter()
                            .map(|&r| docs[r].label.clone().ok_or_else(|| Error::Data("unlabelled document".into())))
                            .collect::<Result<Vec<_>>>()?;
                        Some(lookup_labels(raw, label_names)?)
                    };
                    let d = Dataset::new(DataKind::Counts, m.select_rows(&keep), labels, provenance)?;
                    (d, keep.iter().map(|&r| tags[r]).collect(), pre.clone())
                }
                Some(other) => return Err(mismatch(other, cfg.format)),
            };
            let mut dataset = dataset;
            dataset.set_splits(kept_tags)?;
            Ok(Prepared { dataset, preprocessing })
        }
        DataFormat::Csv => {
            let table = read_csv(&cfg.path, cfg.label_column, cfg.header)?;
            let order = split_order(table.features.rows(), counts, cfg.shuffle_seed)?;
            let rows: Vec<usize> = order.iter().map(|&(r, _)| r).collect();
            let tags: Vec<Split> = order.iter().map(|&(_, s)| s).collect();
            let x = table.features.select_rows(&rows);
            let raw_labels: Option<Vec<String>> =
                table.labels.map(|l| rows.iter().map(|&r| l[r].clone()).collect());
            let (standardizer, label_names) = match fitted {
                None => {
                    let train: Vec<usize> = (0..rows.len()).filter(|&r| tags[r] == Split::Train).collect();
                    let names = raw_labels
                        .as_ref()
                        .map(|l| sorted_names(train.iter().map(|&r| &l[r])))
                        .unwrap_or_default();
                    (Standardizer::fit(&x.select_rows(&train))?, names)
                }
                Some(Preprocessing::Standardize {
                    standardizer,
                    label_names,
                }) => (standardizer.clone(), label_names.clone()),
                Some(other) => return Err(mismatch(other, cfg.format)),
            };
            let labels = raw_labels.map(|l| lookup_labels(l, &label_names)).transpose()?;
            let mut dataset = Dataset::new(
                DataKind::Real,
                standardizer.apply(&x)?,
                labels,
                format!("csv:{}", cfg.path.display()),
            )?;
            dataset.set_splits(tags)?;
            Ok(Prepared {
                dataset,
                preprocessing: Preprocessing::Standardize {
                    standardizer,
                    label_names,
                },
            })
        }
    }
}

fn mismatch(pre: &Preprocessing, format: DataFormat) -> Error {
    Error::Config(format!("stored preprocessing {pre:?} does not apply to {format:?} data"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn data_cfg(format: DataFormat, path: PathBuf, train: usize, valid: usize) -> DataConfig {
        DataConfig {
            format,
            path,
            labels: None,
            train: Some(train),
            valid,
            test: None,
            shuffle_seed: None,
            vocab_size: 10,
            label_column: None,
            header: false,
        }
    }

    #[test]
    fn csv_statistics_come_from_training_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        std::fs::write(&path, "0\n2\n100\n").unwrap();
        let p = prepare(&data_cfg(DataFormat::Csv, path, 2, 1), None).unwrap();
        let x = p.dataset.features();
        assert_eq!((x.get(0, 0), x.get(1, 0)), (-1.0, 1.0));
        assert_eq!(x.get(2, 0), 99.0);
    }

    #[test]
    fn bow_vocabulary_comes_from_training_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        std::fs::write(&path, "a b\na\nz z z z\n").unwrap();
        let p = prepare(&data_cfg(DataFormat::Bow, path.clone(), 2, 1), None).unwrap();
        match &p.preprocessing {
            Preprocessing::Vocabulary { words, .. } => assert_eq!(words, &vec!["a".to_string(), "b".to_string()]),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.dataset.rows(), 2);
        let again = prepare(&data_cfg(DataFormat::Bow, path, 2, 1), Some(&p.preprocessing)).unwrap();
        assert_eq!(again.dataset.features(), p.dataset.features());
    }
}
