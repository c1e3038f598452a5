use crate::deep::{argmax, Classifier};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

fn check(classifier: &dyn Classifier, features: &Matrix, labels: &[usize]) -> Result<()> {
    if features.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "classification_error",
            left: (labels.len(), features.cols()),
            right: features.shape(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classifier.n_classes()) {
        return Err(Error::Data(format!(
            "label {y} out of range for {} classes",
            classifier.n_classes()
        )));
    }
    Ok(())
}

/// Fraction of rows whose arg-max class (lowest index on ties) differs from
/// the label.
pub fn classification_error(classifier: &dyn Classifier, features: &Matrix, labels: &[usize]) -> Result<f64> {
    check(classifier, features, labels)?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let wrong = features
        .row_iter()
        .zip(labels)
        .filter(|(x, &y)| argmax(&classifier.scores(x)) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion_matrix(classifier: &dyn Classifier, features: &Matrix, labels: &[usize]) -> Result<Vec<Vec<usize>>> {
    check(classifier, features, labels)?;
    let c = classifier.n_classes();
    let mut counts = vec![vec![0; c]; c];
    for (x, &y) in features.row_iter().zip(labels) {
        counts[y][argmax(&classifier.scores(x))] += 1;
    }
    Ok(counts)
}
