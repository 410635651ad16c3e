//! Zero-shot classification, cross-modal retrieval, linear probing and
//! classification metrics.

pub mod metrics;
pub mod probe;
pub mod retrieval;
pub mod zeroshot;

pub use metrics::{classification_metrics, ClassificationReport};
pub use probe::{linear_probe, ProbeConfig, ProbeReport};
pub use retrieval::{cross_modal_retrieval, partner_ranks, retrieval_from_scores, RetrievalResult};
pub use zeroshot::{
    classify_embedding, zeroshot_classify, zeroshot_evaluate, PromptTemplate, ZeroShotPrediction,
    ZeroShotReport,
};

use crate::encoders::vision::patchify;
use crate::encoders::ModelParams;
use crate::tensor::Tensor;
use crate::{par, Result};

/// Image embeddings (the probe's frozen features), one per image.
pub fn image_features(params: &ModelParams, images: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    par::map(images, |img| {
        let patches = patchify(img, params.config.patch_size)?;
        params.embed_image(&patches)
    })
    .into_iter()
    .collect()
}

/// Image-text score matrix for retrieval: `scores[i][j]` is the cosine of
/// image `i` with text `j` encoded under image `i`'s visual context.
pub fn retrieval_scores(
    params: &ModelParams,
    images: &[Tensor],
    texts: &[Vec<usize>],
) -> Result<Vec<Vec<f64>>> {
    par::map(images, |img| {
        let patches = patchify(img, params.config.patch_size)?;
        let (image, texts) = params.embed_image_and_texts(&patches, texts)?;
        Ok(texts.iter().map(|t| t.iter().zip(&image).map(|(a, b)| a * b).sum()).collect())
    })
    .into_iter()
    .collect()
}
