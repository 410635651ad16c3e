//! Caption cleaning: break generated descriptions into keywords, score each
//! keyword against the image embedding, keep the top `p` percent and append
//! them to the ground-truth caption.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::data::ManifestRecord;
use crate::encoders::{words, ModelParams};
use crate::tensor::Tensor;
use crate::{par, Error, Result};

const STOPWORDS_FILE: &str = include_str!("../data/stopwords.txt");
pub const STOPWORDS_VERSION: &str = "v1";

/// Retention percentage used when none is configured.
pub const DEFAULT_TOP_P: f64 = 20.0;

pub fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lowercased content words in first-occurrence order, without duplicates.
pub fn extract_keywords(raw_text: &str) -> Vec<String> {
    let stop = stopwords();
    let mut seen = HashSet::new();
    words(raw_text)
        .into_iter()
        .filter(|w| !stop.contains(w.as_str()))
        .filter(|w| seen.insert(w.clone()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceLevel {
    Image,
    Instance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDescription {
    pub source_level: SourceLevel,
    pub raw_text: String,
    pub keywords: Vec<String>,
}

impl GeneratedDescription {
    pub fn new(source_level: SourceLevel, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let keywords = extract_keywords(&raw_text);
        Self {
            source_level,
            raw_text,
            keywords,
        }
    }
}

/// Keywords of several descriptions merged in order, duplicates dropped.
pub fn merge_keywords(descriptions: &[GeneratedDescription]) -> Vec<String> {
    let mut seen = HashSet::new();
    descriptions
        .iter()
        .flat_map(|d| d.keywords.iter())
        .filter(|k| seen.insert(k.as_str()))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedKeywords {
    /// `(keyword, similarity)` sorted by descending similarity.
    pub kept: Vec<(String, f64)>,
    pub p: f64,
    /// Set when there were no keywords to rank.
    pub empty_input: bool,
}

impl CleanedKeywords {
    pub fn keywords(&self) -> Vec<String> {
        self.kept.iter().map(|(k, _)| k.clone()).collect()
    }
}

/// `⌈p·k/100⌉`, at least one when `k ≥ 1`.
pub fn retain_count(k: usize, p: f64) -> usize {
    if k == 0 {
        return 0;
    }
    (((p * k as f64) / 100.0).ceil() as usize).clamp(1, k)
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Config(format!("top_p must be in (0, 100], got {p}")));
    }
    Ok(())
}

/// Sort scored keywords descending (stable, so ties keep input order) and keep
/// the top `p` percent.
pub fn retain_top(scored: Vec<(String, f64)>, p: f64) -> Result<CleanedKeywords> {
    check_p(p)?;
    if let Some((k, s)) = scored.iter().find(|(_, s)| s.is_nan()) {
        return Err(Error::Input(format!("keyword {k:?} has similarity {s}")));
    }
    let empty_input = scored.is_empty();
    if empty_input {
        log::warn!("no keywords to rank");
    }
    let keep = retain_count(scored.len(), p);
    let mut ranked = scored;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    ranked.truncate(keep);
    Ok(CleanedKeywords {
        kept: ranked,
        p,
        empty_input,
    })
}

/// Score each keyword by the dot product of its embedding with the image
/// embedding and keep the top `p` percent.
pub fn rank_and_retain<F>(
    image_embedding: &[f64],
    keywords: &[String],
    p: f64,
    embed_keyword: F,
) -> Result<CleanedKeywords>
where
    F: Fn(&str) -> Result<Vec<f64>>,
{
    let scored = keywords
        .iter()
        .map(|k| {
            let e = embed_keyword(k)?;
            if e.len() != image_embedding.len() {
                return Err(Error::Input(format!(
                    "keyword {k:?} embeds to {} dims, image to {}",
                    e.len(),
                    image_embedding.len()
                )));
            }
            let s = e.iter().zip(image_embedding).map(|(a, b)| a * b).sum();
            Ok((k.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    retain_top(scored, p)
}

/// Ground-truth caption followed by the kept keywords in rank order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnrichedText(pub String);

pub fn enrich(caption_gt: &str, cleaned: &CleanedKeywords) -> Result<EnrichedText> {
    if caption_gt.trim().is_empty() {
        return Err(Error::Input("ground-truth caption is empty".into()));
    }
    let mut text = caption_gt.to_string();
    for (k, _) in &cleaned.kept {
        text.push(' ');
        text.push_str(k);
    }
    Ok(EnrichedText(text))
}

/// Keyword embedding through the text path alone (no visual refinement).
pub fn keyword_embedding(params: &ModelParams, keyword: &str) -> Result<Vec<f64>> {
    let ids = params.tokenize(keyword);
    if ids.is_empty() {
        return Err(Error::Input(format!("keyword {keyword:?} has no tokens")));
    }
    params.embed_text_only(&ids)
}

/// Clean one record against its image.
pub fn clean_record(
    params: &ModelParams,
    record: &ManifestRecord,
    image: &Tensor,
    p: f64,
) -> Result<(CleanedKeywords, EnrichedText)> {
    let descriptions: Vec<GeneratedDescription> = record
        .captions_gen
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let level = if i == 0 { SourceLevel::Image } else { SourceLevel::Instance };
            GeneratedDescription::new(level, t.as_str())
        })
        .collect();
    let keywords = merge_keywords(&descriptions);
    let patches = crate::encoders::vision::patchify(image, params.config.patch_size)?;
    let image_embedding = params.embed_image(&patches)?;
    let cleaned = rank_and_retain(&image_embedding, &keywords, p, |k| keyword_embedding(params, k))?;
    let enriched = enrich(&record.caption_gt, &cleaned)?;
    Ok((cleaned, enriched))
}

/// Clean every record (in parallel) and return the augmented records.
///
/// `model_version` is stored in each record's `cleaning_model` field.
pub fn clean_manifest(
    params: &ModelParams,
    records: &[ManifestRecord],
    images: &[Tensor],
    p: f64,
    model_version: &str,
) -> Result<Vec<ManifestRecord>> {
    check_p(p)?;
    if records.len() != images.len() {
        return Err(Error::Input(format!(
            "{} records but {} images",
            records.len(),
            images.len()
        )));
    }
    let pairs: Vec<(&ManifestRecord, &Tensor)> = records.iter().zip(images).collect();
    par::map(&pairs, |(rec, img)| {
        let (cleaned, enriched) = clean_record(params, rec, img, p)?;
        let mut out = (*rec).clone();
        out.keywords_kept = Some(cleaned.keywords());
        out.caption_enriched = Some(enriched.0);
        out.extra.insert(
            "cleaning_model".into(),
            serde_json::Value::String(model_version.to_string()),
        );
        Ok(out)
    })
    .into_iter()
    .collect()
}
