use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use crate::tensor::{Graph, NodeId, Tensor, Var};
use crate::{Error, Result};

/// Which of the two attention encoders are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Prompt-guided vision encoder and vision-guided text encoder.
    #[default]
    Full,
    /// Image feature is the mean patch embedding; text attends to patches only.
    NoPgve,
    /// Text embeddings are not refined by visual context.
    NoVgte,
}

impl Variant {
    pub fn uses_pgve(self) -> bool {
        self != Variant::NoPgve
    }

    pub fn uses_vgte(self) -> bool {
        self != Variant::NoVgte
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "no-pgve" => Ok(Self::NoPgve),
            "no-vgte" => Ok(Self::NoVgte),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected full, no-pgve or no-vgte)"
            ))),
        }
    }
}

/// Architecture hyperparameters. Everything that fixes a tensor shape lives here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_p: usize,
    pub n_r: usize,
    pub patch_size: usize,
    pub image_side: usize,
    pub channels: usize,
    pub latent_dim: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    /// Stacked prompt cross-attention layers (the prompt bank queries each time).
    pub pgve_layers: usize,
    pub variant: Variant,
    pub init_std: f64,
    /// Initial scale of the token embedding table.
    pub embed_init_std: f64,
    /// LayerNorm over the text encoder output, ahead of the visual refinement.
    pub text_norm: bool,
    pub ln_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_p: 64,
            n_r: 20,
            patch_size: 8,
            image_side: 64,
            channels: 3,
            latent_dim: 32,
            vocab_size: 256,
            max_tokens: 76,
            pgve_layers: 1,
            variant: Variant::Full,
            init_std: 0.02,
            embed_init_std: 0.02,
            text_norm: true,
            ln_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    /// ViT-B/16-sized preset with a 512-d latent space.
    pub fn paper_scale() -> Self {
        Self {
            d_p: 768,
            patch_size: 16,
            image_side: 224,
            latent_dim: 512,
            vocab_size: 49408,
            ..Self::default()
        }
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_side / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_p", self.d_p),
            ("n_r", self.n_r),
            ("patch_size", self.patch_size),
            ("image_side", self.image_side),
            ("channels", self.channels),
            ("latent_dim", self.latent_dim),
            ("vocab_size", self.vocab_size),
            ("max_tokens", self.max_tokens),
            ("pgve_layers", self.pgve_layers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.image_side % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_side {} is not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config("vocab_size must be at least 2".into()));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be positive".into()));
        }
        if !(self.embed_init_std > 0.0 && self.embed_init_std.is_finite()) {
            return Err(Error::Config("embed_init_std must be positive".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Names of every learnable tensor, in canonical order.
pub const PARAM_NAMES: [&str; 16] = [
    "vision.proj",
    "vision.pos",
    "text.embed",
    "text.pos",
    "text.attn.q",
    "text.attn.k",
    "text.attn.v",
    "text.attn.o",
    "pgve.Q",
    "pgve.W1",
    "pgve.W2",
    "pgve.W3",
    "pgve.W4",
    "head.image",
    "head.text",
    "tau_log",
];

pub const TEXT_EMBED: usize = 2;
pub const TAU_LOG: usize = 15;

/// All learnable state plus the vocabulary it was built against.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub vocab: Vocab,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Seeded Gaussian initialization; `tau_log = ln(tau_init)`.
    pub fn init(config: ModelConfig, vocab: Vocab, tau_init: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() > config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary has {} tokens but vocab_size is {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        if !(tau_init > 0.0 && tau_init.is_finite()) {
            return Err(Error::Config(format!("tau_init must be positive, got {tau_init}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = Self::shapes_for(&config)
            .into_iter()
            .enumerate()
            .map(|(i, shape)| match i {
                TAU_LOG => Tensor::scalar(tau_init.ln()),
                TEXT_EMBED => Tensor::randn(&shape, config.embed_init_std, &mut rng),
                _ => Tensor::randn(&shape, config.init_std, &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            vocab,
            tensors,
        })
    }

    /// Expected shape of every tensor in [`PARAM_NAMES`] order.
    pub fn shapes_for(c: &ModelConfig) -> Vec<Vec<usize>> {
        let d = c.d_p;
        vec![
            vec![c.patch_len(), d],
            vec![c.n_patches(), d],
            vec![c.vocab_size, d],
            vec![c.max_tokens, d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![d, d],
            vec![c.n_r, d],
            vec![d, d],
            vec![d, d],
            vec![1, d],
            vec![d, d],
            vec![d, c.latent_dim],
            vec![d, c.latent_dim],
            vec![],
        ]
    }

    /// Assemble from named tensors, checking every name and shape first.
    pub fn from_named(
        config: ModelConfig,
        vocab: Vocab,
        mut named: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        config.validate()?;
        let shapes = Self::shapes_for(&config);
        let mut tensors = Vec::with_capacity(PARAM_NAMES.len());
        for (name, shape) in PARAM_NAMES.iter().zip(&shapes) {
            let pos = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| Error::Config(format!("missing tensor {name}")))?;
            let (_, t) = named.swap_remove(pos);
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            tensors.push(t);
        }
        if let Some((extra, _)) = named.first() {
            return Err(Error::Config(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            config,
            vocab,
            tensors,
        })
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_NAMES.iter().copied().zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .map(move |i| &mut self.tensors[i])
    }

    pub fn tau_log(&self) -> f64 {
        self.tensors[TAU_LOG].item()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Place every tensor on `graph`, as trainable leaves or as constants.
    pub fn bind<'g>(&self, graph: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect::<Vec<_>>();
        Bound {
            config: self.config.clone(),
            vars: vars.try_into().expect("one var per parameter"),
        }
    }
}

/// Parameters placed on a graph, in [`PARAM_NAMES`] order.
pub struct Bound<'g> {
    pub config: ModelConfig,
    pub vars: [Var<'g>; 16],
}

impl<'g> Bound<'g> {
    pub fn ids(&self) -> Vec<NodeId> {
        self.vars.iter().map(Var::id).collect()
    }

    pub fn vision_proj(&self) -> &Var<'g> {
        &self.vars[0]
    }
    pub fn vision_pos(&self) -> &Var<'g> {
        &self.vars[1]
    }
    pub fn text_embed(&self) -> &Var<'g> {
        &self.vars[2]
    }
    pub fn text_pos(&self) -> &Var<'g> {
        &self.vars[3]
    }
    pub fn attn(&self) -> [&Var<'g>; 4] {
        [&self.vars[4], &self.vars[5], &self.vars[6], &self.vars[7]]
    }
    pub fn prompts(&self) -> &Var<'g> {
        &self.vars[8]
    }
    pub fn fusion(&self) -> [&Var<'g>; 4] {
        [&self.vars[9], &self.vars[10], &self.vars[11], &self.vars[12]]
    }
    pub fn head_image(&self) -> &Var<'g> {
        &self.vars[13]
    }
    pub fn head_text(&self) -> &Var<'g> {
        &self.vars[14]
    }
    pub fn tau_log(&self) -> &Var<'g> {
        &self.vars[TAU_LOG]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            d_p: 8,
            n_r: 3,
            patch_size: 2,
            image_side: 4,
            latent_dim: 4,
            vocab_size: 16,
            max_tokens: 6,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn init_is_seeded() {
        let v = Vocab::build(["a b"], 16);
        let a = ModelParams::init(small(), v.clone(), 1.0 / 0.07, 3).unwrap();
        let b = ModelParams::init(small(), v.clone(), 1.0 / 0.07, 3).unwrap();
        let c = ModelParams::init(small(), v, 1.0 / 0.07, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.tau_log().exp() - 1.0 / 0.07).abs() < 1e-12);
    }

    #[test]
    fn shapes_match_config() {
        let v = Vocab::build(["a"], 16);
        let p = ModelParams::init(small(), v, 10.0, 0).unwrap();
        assert_eq!(p.get("vision.proj").unwrap().shape(), &[12, 8]);
        assert_eq!(p.get("vision.pos").unwrap().shape(), &[4, 8]);
        assert_eq!(p.get("pgve.W3").unwrap().shape(), &[1, 8]);
        assert_eq!(p.get("pgve.Q").unwrap().shape(), &[3, 8]);
        assert_eq!(p.get("head.text").unwrap().shape(), &[8, 4]);
    }

    #[test]
    fn rejects_indivisible_image() {
        let c = ModelConfig {
            image_side: 5,
            ..small()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn from_named_checks_shapes() {
        let v = Vocab::build(["a"], 16);
        let p = ModelParams::init(small(), v.clone(), 10.0, 0).unwrap();
        let named: Vec<_> = p.named().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let q = ModelParams::from_named(small(), v.clone(), named.clone()).unwrap();
        assert_eq!(p, q);
        let wider = ModelConfig { d_p: 16, ..small() };
        assert!(ModelParams::from_named(wider, v, named).is_err());
    }
}
