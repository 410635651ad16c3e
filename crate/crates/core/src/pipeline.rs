//! Glue between manifests, the model and the training loop.

use std::time::Instant;

use serde::Serialize;

use crate::alignment::{train, EpochMetrics, PairExample, TrainOutcome};
use crate::cleaning::clean_manifest;
use crate::config::RunConfig;
use crate::data::synthetic::{generate, SyntheticSample, SyntheticSpec};
use crate::data::ManifestRecord;
use crate::encoders::{ModelParams, Vocab};
use crate::eval::{retrieval_from_scores, retrieval_scores, zeroshot_evaluate, RetrievalResult, ZeroShotReport};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Model tag written into cleaned manifests.
pub const UNTRAINED_MODEL: &str = "untrained";

/// Vocabulary over every text field a record carries.
pub fn build_vocab(records: &[ManifestRecord], capacity: usize) -> Vocab {
    let texts = records.iter().flat_map(|r| {
        std::iter::once(r.caption_gt.as_str())
            .chain(r.captions_gen.iter().map(String::as_str))
            .chain(r.caption_enriched.as_deref())
            .chain(r.label.as_deref())
    });
    Vocab::build(texts, capacity)
}

/// Sorted distinct labels, and each record's index into them.
pub fn label_indices(records: &[ManifestRecord]) -> Result<(Vec<String>, Vec<usize>)> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        let l = r
            .label
            .as_ref()
            .ok_or_else(|| Error::Input(format!("record {} has no label", r.id)))?;
        if !names.contains(l) {
            names.push(l.clone());
        }
    }
    names.sort();
    let idx = records
        .iter()
        .map(|r| names.iter().position(|n| Some(n) == r.label.as_ref()).unwrap())
        .collect();
    Ok((names, idx))
}

/// Fresh parameters for `cfg` with a vocabulary built from `records`.
pub fn init_params(cfg: &RunConfig, records: &[ManifestRecord]) -> Result<ModelParams> {
    let vocab = build_vocab(records, cfg.vocab_size);
    ModelParams::init(cfg.model_config(), vocab, cfg.tau_init, cfg.seed)
}

/// Clean captions with a freshly initialized (untrained) model.
pub fn clean_with_fresh_model(
    cfg: &RunConfig,
    records: &[ManifestRecord],
    images: &[Tensor],
) -> Result<Vec<ManifestRecord>> {
    let params = init_params(cfg, records)?;
    clean_manifest(&params, records, images, cfg.top_p, UNTRAINED_MODEL)
}

/// Training examples from enriched captions; every record must have one.
pub fn training_examples(
    params: &ModelParams,
    records: &[ManifestRecord],
    images: &[Tensor],
) -> Result<Vec<PairExample>> {
    records
        .iter()
        .zip(images)
        .map(|(r, img)| {
            let text = r.caption_enriched.as_ref().ok_or_else(|| {
                Error::Input(format!("record {} has no caption_enriched; run clean-captions first", r.id))
            })?;
            let tokens = params.tokenize(text);
            if tokens.is_empty() {
                return Err(Error::Input(format!("record {} has an empty enriched caption", r.id)));
            }
            Ok(PairExample {
                image: img.clone(),
                tokens,
            })
        })
        .collect()
}

/// Initialize from `cfg` and train on cleaned records.
pub fn train_records(
    cfg: &RunConfig,
    records: &[ManifestRecord],
    images: &[Tensor],
    on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.len() != images.len() {
        return Err(Error::Input(format!(
            "{} records but {} images",
            records.len(),
            images.len()
        )));
    }
    let params = init_params(cfg, records)?;
    let examples = training_examples(&params, records, images)?;
    train(params, &examples, &cfg.train_config(), on_epoch)
}

/// Synthetic corpus matching the image geometry and class count of `cfg`.
pub fn synthetic_corpus(cfg: &RunConfig, num_pairs: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    let mut spec = SyntheticSpec::new(cfg.num_classes, num_pairs, seed);
    spec.image_side = cfg.image_side;
    spec.patch_size = cfg.patch_size;
    generate(&spec)
}

fn split(samples: &[SyntheticSample]) -> (Vec<ManifestRecord>, Vec<Tensor>) {
    samples.iter().map(|s| (s.record.clone(), s.image.clone())).unzip()
}

/// Freshly initialized parameters and `num_pairs` cleaned synthetic pairs.
pub fn synthetic_batch(cfg: &RunConfig, num_pairs: usize) -> Result<(ModelParams, Vec<PairExample>)> {
    let (records, images) = split(&synthetic_corpus(cfg, num_pairs, cfg.seed)?);
    let cleaned = clean_with_fresh_model(cfg, &records, &images)?;
    let params = init_params(cfg, &cleaned)?;
    let examples = training_examples(&params, &cleaned, &images)?;
    Ok((params, examples))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub best_epoch: usize,
    pub final_loss: f64,
    /// Over the training pairs, with the enriched captions.
    pub retrieval: RetrievalResult,
    /// Over a held-out corpus drawn with a different seed.
    pub zeroshot: ZeroShotReport,
    pub seconds: f64,
}

/// Generate, clean, train and evaluate on the synthetic benchmark.
///
/// `cfg.num_pairs` training pairs; evaluation uses the lowest-loss epoch.
pub fn synthetic_benchmark(cfg: &RunConfig, held_out: usize) -> Result<BenchmarkReport> {
    let started = Instant::now();
    let (records, images) = split(&synthetic_corpus(cfg, cfg.num_pairs, cfg.seed)?);
    let cleaned = clean_with_fresh_model(cfg, &records, &images)?;
    let outcome = train_records(cfg, &cleaned, &images, |_| {})?;
    let params = &outcome.best;
    let texts: Vec<Vec<usize>> = cleaned
        .iter()
        .map(|r| params.tokenize(r.caption_enriched.as_deref().unwrap_or_default()))
        .collect();
    let retrieval = retrieval_from_scores(&retrieval_scores(params, &images, &texts)?, &cfg.ks)?;

    let (names, _) = label_indices(&records)?;
    let test = synthetic_corpus(cfg, held_out, cfg.seed.wrapping_add(HELD_OUT_SEED_OFFSET))?;
    let (test_records, test_images) = split(&test);
    let labels = test_records
        .iter()
        .map(|r| {
            names
                .iter()
                .position(|n| Some(n) == r.label.as_ref())
                .ok_or_else(|| Error::Input(format!("held-out label {:?} unseen in training", r.label)))
        })
        .collect::<Result<Vec<_>>>()?;
    let zeroshot = zeroshot_evaluate(params, &test_images, &labels, &names, &cfg.prompt_templates()?)?;
    Ok(BenchmarkReport {
        seed: cfg.seed,
        best_epoch: outcome.best_epoch,
        final_loss: outcome.metrics.last().map_or(f64::NAN, |m| m.loss),
        retrieval,
        zeroshot,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Seed offset of the held-out benchmark corpus.
pub const HELD_OUT_SEED_OFFSET: u64 = 10_000;
