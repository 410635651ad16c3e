use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::metrics::{classification_metrics, ClassificationReport};
use crate::encoders::vision::patchify;
use crate::encoders::ModelParams;
use crate::tensor::{Graph, Tensor};
use crate::{par, Error, Result};

/// A prompt pattern with exactly one `{}` placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(pattern: impl Into<String>) -> Result<Self> {
        let pattern = pattern.into();
        let n = pattern.matches("{}").count();
        if n != 1 {
            return Err(Error::Config(format!(
                "prompt template {pattern:?} has {n} placeholders, expected 1"
            )));
        }
        Ok(Self(pattern))
    }

    pub fn fill(&self, class_name: &str) -> String {
        self.0.replacen("{}", class_name, 1)
    }

    pub fn pattern(&self) -> &str {
        &self.0
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self("An image of {}.".into())
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for PromptTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroShotPrediction {
    pub class: usize,
    /// Cosine similarity to each class prompt, in class-list order.
    pub scores: Vec<f64>,
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if scores[b] >= s => {}
            _ => best = Some(i),
        }
    }
    best
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Classify one image embedding against precomputed class embeddings.
pub fn classify_embedding(image: &[f64], classes: &[Vec<f64>]) -> Result<ZeroShotPrediction> {
    if classes.is_empty() {
        return Err(Error::Input("zero-shot needs at least one class".into()));
    }
    let scores: Vec<f64> = classes.iter().map(|c| cosine(image, c)).collect();
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            tensor: format!("zero-shot score of class {i}"),
        });
    }
    let class = argmax(&scores).expect("non-empty");
    Ok(ZeroShotPrediction { class, scores })
}

/// Mean of unit-normalized vectors, renormalized.
pub fn average_normalized(vectors: &[Vec<f64>]) -> Vec<f64> {
    let d = vectors.first().map_or(0, Vec::len);
    let mut acc = vec![0.0; d];
    for v in vectors {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x / n;
        }
    }
    let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    acc.iter().map(|x| x / n).collect()
}

/// Classify an `H×W×C` image by cosine similarity to templated class prompts.
///
/// Each class prompt is encoded under this image's visual context, so the
/// text side sees the same refinement it saw during training. With several
/// templates the per-template embeddings are averaged.
pub fn zeroshot_classify(
    params: &ModelParams,
    image: &Tensor,
    class_names: &[String],
    templates: &[PromptTemplate],
) -> Result<ZeroShotPrediction> {
    if class_names.is_empty() {
        return Err(Error::Input("zero-shot needs at least one class".into()));
    }
    if templates.is_empty() {
        return Err(Error::Config("no prompt templates given".into()));
    }
    let patches = patchify(image, params.config.patch_size)?;
    let g = Graph::new();
    let bound = params.bind(&g, false);
    let ctx = bound.encode_image(&patches)?;
    let img = bound.image_embedding(&ctx)?.value().into_data();
    let mut classes = Vec::with_capacity(class_names.len());
    for name in class_names {
        let per_template = templates
            .iter()
            .map(|t| {
                let ids = params.tokenize(&t.fill(name));
                Ok(bound.text_embedding(&ids, Some(&ctx))?.value().into_data())
            })
            .collect::<Result<Vec<_>>>()?;
        classes.push(average_normalized(&per_template));
    }
    classify_embedding(&img, &classes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroShotReport {
    pub num_images: usize,
    pub num_classes: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Zero-shot accuracy and macro-F1 over labelled images (in parallel).
pub fn zeroshot_evaluate(
    params: &ModelParams,
    images: &[Tensor],
    labels: &[usize],
    class_names: &[String],
    templates: &[PromptTemplate],
) -> Result<ZeroShotReport> {
    if images.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
        return Err(Error::Input(format!(
            "label {l} out of range for {} classes",
            class_names.len()
        )));
    }
    let predictions = par::map(images, |img| {
        zeroshot_classify(params, img, class_names, templates).map(|p| p.class)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let ClassificationReport {
        accuracy,
        macro_f1,
        per_class_f1,
    } = classification_metrics(&predictions, labels, class_names.len())?;
    Ok(ZeroShotReport {
        num_images: images.len(),
        num_classes: class_names.len(),
        accuracy,
        macro_f1,
        per_class_f1,
        predictions,
    })
}
