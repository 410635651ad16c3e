use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

/// Accuracy and macro-averaged F1 over `num_classes` classes.
///
/// Classes with no support and no predictions still count, with F1 = 0.
/// `num_classes` is raised to cover every label and prediction seen.
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<ClassificationReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("no labels to score".into()));
    }
    let c = predictions
        .iter()
        .chain(labels)
        .map(|v| v + 1)
        .max()
        .unwrap_or(0)
        .max(num_classes);
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fn_ = vec![0usize; c];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[l] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..c)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .collect();
    let correct: usize = tp.iter().sum();
    Ok(ClassificationReport {
        accuracy: correct as f64 / labels.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / c as f64,
        per_class_f1,
    })
}
