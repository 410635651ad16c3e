//! Vision and text encoders.
//!
//! The vision path is a linear patch projection with positional embeddings,
//! followed by the prompt-guided encoder: a learnable prompt bank
//! cross-attends over the patch embeddings and an attention-weighted fusion
//! reduces the prompt outputs to one image feature.
//!
//! The text path is a token embedding table, positional embeddings and one
//! self-attention block, followed by the vision-guided refinement in which
//! the tokens attend over the image's patch embeddings and prompt outputs.

pub mod attention;
mod params;
pub mod vision;
mod vocab;

pub use params::{Bound, ModelConfig, ModelParams, Variant, PARAM_NAMES, TAU_LOG};
pub use vocab::{words, Vocab, UNK, UNK_TOKEN};

use crate::tensor::{Graph, Tensor, Var};
use crate::Result;

/// Visual activations of one image, reused by the text refinement.
pub struct VisualContext<'g> {
    /// `n_p × d_p`
    pub patches: Var<'g>,
    /// `n_r × d_p`, absent when the prompt encoder is ablated.
    pub prompts: Option<Var<'g>>,
    /// `1 × d_p` image-level feature before the projection head.
    pub feature: Var<'g>,
}

impl<'g> Bound<'g> {
    /// Run the vision path on flattened patches (`n_p × patch_len`).
    pub fn encode_image(&self, patches: &Tensor) -> Result<VisualContext<'g>> {
        let g = self.vision_proj().graph();
        let input = g.constant(patches.clone());
        let p = vision::encode_patches(&input, self.vision_proj(), self.vision_pos())?;
        if !self.config.variant.uses_pgve() {
            let feature = p.mean_rows()?;
            return Ok(VisualContext {
                patches: p,
                prompts: None,
                feature,
            });
        }
        let mut e = *self.prompts();
        for _ in 0..self.config.pgve_layers {
            e = attention::pgve_cross_attention(&e, &p, self.config.ln_eps)?;
        }
        let (feature, _) = attention::pgve_fuse(&e, self.fusion())?;
        Ok(VisualContext {
            patches: p,
            prompts: Some(e),
            feature,
        })
    }

    /// Unit-norm image embedding (`1 × latent_dim`).
    pub fn image_embedding(&self, ctx: &VisualContext<'g>) -> Result<Var<'g>> {
        Ok(attention::project_image(&ctx.feature, self.head_image())?)
    }

    /// Contextual token embeddings without visual refinement.
    pub fn encode_tokens(&self, ids: &[usize]) -> Result<Var<'g>> {
        let t = attention::encode_text(
            ids,
            self.text_embed(),
            self.text_pos(),
            self.attn(),
        )?;
        if self.config.text_norm {
            return Ok(t.layer_norm(self.config.ln_eps)?);
        }
        Ok(t)
    }

    /// Unit-norm text embedding (`1 × latent_dim`), refined by `ctx` when the
    /// vision-guided encoder is active and a context is given.
    pub fn text_embedding(&self, ids: &[usize], ctx: Option<&VisualContext<'g>>) -> Result<Var<'g>> {
        self.refine_and_project(&self.encode_tokens(ids)?, ctx)
    }

    /// The tail of [`Bound::text_embedding`] on already encoded tokens.
    pub fn refine_and_project(&self, tokens: &Var<'g>, ctx: Option<&VisualContext<'g>>) -> Result<Var<'g>> {
        let mut t = *tokens;
        if let (true, Some(ctx)) = (self.config.variant.uses_vgte(), ctx) {
            t = attention::vgte_refine(&t, &ctx.patches, ctx.prompts.as_ref())?;
        }
        Ok(attention::pool_and_project(&t, self.head_text())?)
    }
}

impl ModelParams {
    /// Token ids for `text` under this model's vocabulary and length limit.
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.vocab.encode(text, self.config.max_tokens)
    }

    /// Unit-norm image embedding, no gradient tracking.
    pub fn embed_image(&self, patches: &Tensor) -> Result<Vec<f64>> {
        let g = Graph::new();
        let bound = self.bind(&g, false);
        let ctx = bound.encode_image(patches)?;
        Ok(bound.image_embedding(&ctx)?.value().into_data())
    }

    /// Image embedding plus the embeddings of each text under that image's context.
    pub fn embed_image_and_texts(
        &self,
        patches: &Tensor,
        texts: &[Vec<usize>],
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let g = Graph::new();
        let bound = self.bind(&g, false);
        let ctx = bound.encode_image(patches)?;
        let image = bound.image_embedding(&ctx)?.value().into_data();
        let texts = texts
            .iter()
            .map(|ids| Ok(bound.text_embedding(ids, Some(&ctx))?.value().into_data()))
            .collect::<Result<Vec<_>>>()?;
        Ok((image, texts))
    }

    /// Text embedding with no visual context (pool and project only).
    pub fn embed_text_only(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let g = Graph::new();
        let bound = self.bind(&g, false);
        Ok(bound.text_embedding(ids, None)?.value().into_data())
    }
}
