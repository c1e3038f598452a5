use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::dataset::{encode_labels, DataKind, Dataset};

/// One document: an optional label and its token counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub label: Option<String>,
    pub counts: BTreeMap<String, u64>,
}

/// Parse one document per line: an optional `label<TAB>` prefix followed by
/// whitespace-separated tokens, each `word` or `word:count`.
pub fn parse_bow(text: &str) -> Result<Vec<Document>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| {
            let (label, body) = match line.split_once('\t') {
                Some((l, b)) => (Some(l.trim().to_string()), b),
                None => (None, line),
            };
            let mut counts = BTreeMap::new();
            for token in body.split_whitespace() {
                let (word, count) = match token.rsplit_once(':') {
                    Some((w, c)) if !w.is_empty() => {
                        let c: u64 = c.parse().map_err(|_| {
                            Error::Data(format!("line {}: bad count in token {token:?}", n + 1))
                        })?;
                        (w, c)
                    }
                    _ => (token, 1),
                };
                *counts.entry(word.to_string()).or_insert(0) += count;
            }
            Ok(Document { label, counts })
        })
        .collect()
}

pub fn read_bow_documents(path: &Path) -> Result<Vec<Document>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bow(&text)
}

/// The `size` most frequent words over `docs`, ties broken by lexicographic
/// token order. Returned in rank order.
pub fn build_vocabulary<'a>(docs: impl IntoIterator<Item = &'a Document>, size: usize) -> Vec<String> {
    let mut totals: HashMap<&str, u64> = HashMap::new();
    for d in docs {
        for (w, &c) in &d.counts {
            *totals.entry(w.as_str()).or_insert(0) += c;
        }
    }
    let mut ranked: Vec<(&str, u64)> = totals.into_iter().filter(|&(_, c)| c > 0).collect();
    let size = size.min(ranked.len());
    if size < ranked.len() {
        ranked.select_nth_unstable_by(size, |a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(size);
    }
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.into_iter().map(|(w, _)| w.to_string()).collect()
}

/// Counts of the vocabulary words, one row per document.
pub fn count_matrix(docs: &[Document], vocabulary: &[String]) -> Matrix {
    let index: HashMap<&str, usize> = vocabulary.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let mut m = Matrix::zeros(docs.len(), vocabulary.len());
    for (r, d) in docs.iter().enumerate() {
        for (w, &c) in &d.counts {
            if let Some(&j) = index.get(w.as_str()) {
                m.set(r, j, c as f64);
            }
        }
    }
    m
}

#[derive(Clone, Debug)]
pub struct BowCorpus {
    pub dataset: Dataset,
    pub vocabulary: Vec<String>,
    /// Class names, indexed by label.
    pub label_names: Vec<String>,
    pub doc_lengths: Vec<f64>,
    /// Input position of each retained document.
    pub kept: Vec<usize>,
    /// Documents with no vocabulary words.
    pub dropped_empty: usize,
}

/// Build a count dataset from `docs` with a vocabulary taken from the
/// documents at `vocab_rows` only. Documents left empty are dropped.
pub fn bow_corpus(docs: &[Document], vocab_rows: &[usize], vocab_size: usize, provenance: &str) -> Result<BowCorpus> {
    let vocabulary = build_vocabulary(vocab_rows.iter().map(|&r| &docs[r]), vocab_size);
    let counts = count_matrix(docs, &vocabulary);
    let keep: Vec<usize> = (0..docs.len())
        .filter(|&r| counts.row(r).iter().any(|&c| c > 0.0))
        .collect();
    let dropped_empty = docs.len() - keep.len();
    if dropped_empty > 0 {
        warn!("dropped {dropped_empty} documents with no vocabulary words");
    }
    let counts = counts.select_rows(&keep);
    let kept = keep.clone();
    let labelled = docs.iter().filter(|d| d.label.is_some()).count();
    let (labels, label_names) = if labelled == 0 {
        (None, Vec::new())
    } else if labelled == docs.len() {
        let raw: Vec<String> = keep.iter().map(|&r| docs[r].label.clone().expect("labelled")).collect();
        let (idx, names) = encode_labels(&raw);
        (Some(idx), names)
    } else {
        return Err(Error::Data(format!("{labelled} of {} documents carry a label", docs.len())));
    };
    let doc_lengths = counts.row_iter().map(|r| r.iter().sum()).collect();
    Ok(BowCorpus {
        dataset: Dataset::new(DataKind::Counts, counts, labels, provenance)?,
        vocabulary,
        label_names,
        doc_lengths,
        kept,
        dropped_empty,
    })
}

/// Load a bag-of-words file whose documents all form the training corpus.
pub fn load_bow(path: &Path, vocab_size: usize) -> Result<BowCorpus> {
    let docs = read_bow_documents(path)?;
    let all: Vec<usize> = (0..docs.len()).collect();
    bow_corpus(&docs, &all, vocab_size, &format!("bow:{}", path.display()))
}
