//! Flat run configuration shared by every command.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::alignment::{TextContext, TrainConfig};
use crate::cleaning::DEFAULT_TOP_P;
use crate::encoders::{ModelConfig, Variant};
use crate::eval::PromptTemplate;
use crate::{Error, Result};

/// Every documented key. Unknown keys are rejected when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d_p: usize,
    pub n_r: usize,
    pub patch_size: usize,
    pub image_side: usize,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub pgve_layers: usize,
    pub variant: Variant,
    pub init_std: f64,
    pub embed_init_std: f64,
    pub text_norm: bool,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub tau_init: f64,
    pub augment_flips: bool,
    pub text_context: TextContext,
    pub top_p: f64,
    pub seed: u64,
    pub num_pairs: usize,
    pub num_classes: usize,
    pub templates: Vec<String>,
    pub ks: Vec<usize>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            d_p: m.d_p,
            n_r: m.n_r,
            patch_size: m.patch_size,
            image_side: m.image_side,
            latent_dim: m.latent_dim,
            vocab_size: m.vocab_size,
            max_tokens: m.max_tokens,
            pgve_layers: m.pgve_layers,
            variant: m.variant,
            init_std: m.init_std,
            embed_init_std: m.embed_init_std,
            text_norm: m.text_norm,
            lr: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            batch_size: t.batch_size,
            tau_init: t.tau_init,
            augment_flips: t.augment_flips,
            text_context: t.text_context,
            top_p: DEFAULT_TOP_P,
            seed: t.seed,
            num_pairs: 64,
            num_classes: 4,
            templates: vec![PromptTemplate::default().pattern().to_string()],
            ks: vec![1, 50, 200],
            manifest: None,
            checkpoint: None,
            out_dir: None,
        }
    }
}

impl RunConfig {
    /// Paper-scale architecture and schedule (768-d patches, 512-d latent,
    /// 80 epochs at batch 512).
    pub fn paper_scale() -> Self {
        let m = ModelConfig::paper_scale();
        let t = TrainConfig::paper_scale();
        Self {
            d_p: m.d_p,
            patch_size: m.patch_size,
            image_side: m.image_side,
            latent_dim: m.latent_dim,
            vocab_size: m.vocab_size,
            epochs: t.epochs,
            batch_size: t.batch_size,
            ..Self::default()
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_p: self.d_p,
            n_r: self.n_r,
            patch_size: self.patch_size,
            image_side: self.image_side,
            latent_dim: self.latent_dim,
            vocab_size: self.vocab_size,
            max_tokens: self.max_tokens,
            pgve_layers: self.pgve_layers,
            variant: self.variant,
            init_std: self.init_std,
            embed_init_std: self.embed_init_std,
            text_norm: self.text_norm,
            ..ModelConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            tau_init: self.tau_init,
            augment_flips: self.augment_flips,
            text_context: self.text_context,
        }
    }

    pub fn prompt_templates(&self) -> Result<Vec<PromptTemplate>> {
        if self.templates.is_empty() {
            return Err(Error::Config("templates must not be empty".into()));
        }
        self.templates.iter().map(PromptTemplate::new).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train_config().validate()?;
        if !(self.top_p > 0.0 && self.top_p <= 100.0) {
            return Err(Error::Config(format!("top_p must be in (0, 100], got {}", self.top_p)));
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("ks must be non-empty and positive".into()));
        }
        if self.num_classes == 0 || self.num_pairs == 0 {
            return Err(Error::Config("num_classes and num_pairs must be positive".into()));
        }
        self.prompt_templates()?;
        Ok(())
    }
}
