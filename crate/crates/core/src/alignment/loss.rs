use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

pub const TAU_MIN: f64 = 1e-2;
pub const TAU_MAX: f64 = 100.0;

/// Similarity multiplier `τ = exp(tau_log)`, clamped to `[TAU_MIN, TAU_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub tau_log: f64,
}

impl Temperature {
    pub fn from_tau(tau: f64) -> Self {
        Self { tau_log: tau.ln() }
    }

    pub fn tau(&self) -> f64 {
        self.tau_log.clamp(TAU_MIN.ln(), TAU_MAX.ln()).exp()
    }
}

/// `τ` as a graph node; the gradient is zero while the clamp is active.
pub fn temperature<'g>(tau_log: &Var<'g>) -> Result<Var<'g>> {
    Ok(tau_log.clamp(TAU_MIN.ln(), TAU_MAX.ln())?.exp()?)
}

/// Paired unit-norm image and text embeddings, row `i` of each forming a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    images: Tensor,
    texts: Tensor,
}

impl ContrastiveBatch {
    pub fn new(images: &[Vec<f64>], texts: &[Vec<f64>]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Input("empty contrastive batch".into()));
        }
        if images.len() != texts.len() {
            return Err(Error::Input(format!(
                "{} image embeddings but {} text embeddings",
                images.len(),
                texts.len()
            )));
        }
        for (kind, rows) in [("image", images), ("text", texts)] {
            for (i, r) in rows.iter().enumerate() {
                let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::Input(format!("{kind} embedding {i} has norm {n}")));
                }
            }
        }
        let images = Tensor::from_rows(images)?;
        let texts = Tensor::from_rows(texts)?;
        if images.shape() != texts.shape() {
            return Err(Error::Input(format!(
                "embedding widths differ: {:?} vs {:?}",
                images.shape(),
                texts.shape()
            )));
        }
        Ok(Self { images, texts })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn texts(&self) -> &Tensor {
        &self.texts
    }
}

/// The two directional losses and their sum, as graph nodes.
#[derive(Debug, Clone, Copy)]
pub struct LossVars<'g> {
    pub i2t: Var<'g>,
    pub t2i: Var<'g>,
    pub total: Var<'g>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossValues {
    pub i2t: f64,
    pub t2i: f64,
    pub total: f64,
}

/// Bidirectional temperature-scaled cross-entropy over a `W × L` batch.
///
/// With `S = T Fᵀ`, `L_i2t = -(1/W) Σᵢ log softmax(τ Sᵢ)ᵢ` and `L_t2i` is the
/// same over `Sᵀ`. `tau` is the multiplier node, not its log.
pub fn contrastive_loss<'g>(
    images: &Var<'g>,
    texts: &Var<'g>,
    tau: &Var<'g>,
) -> Result<LossVars<'g>> {
    let w = images.shape().first().copied().unwrap_or(0);
    if w == 0 {
        return Err(Error::Input("empty contrastive batch".into()));
    }
    contrastive_loss_from_scores(&texts.matmul(&images.t()?)?, tau)
}

/// The same loss from a precomputed `W × W` similarity matrix whose entry
/// `(i, j)` scores text `i` against image `j`.
pub fn contrastive_loss_from_scores<'g>(scores: &Var<'g>, tau: &Var<'g>) -> Result<LossVars<'g>> {
    let shape = scores.shape();
    let w = match shape.as_slice() {
        [0, _] | [_, 0] => return Err(Error::Input("empty contrastive batch".into())),
        [r, c] if r == c => *r,
        _ => {
            return Err(Error::Input(format!(
                "similarity matrix must be square, got {shape:?}"
            )))
        }
    };
    let g = scores.graph();
    let logits = scores.scale_by(tau)?;
    let eye = g.constant(Tensor::identity(w));
    let scale = -1.0 / w as f64;
    let i2t = logits.log_softmax_rows()?.mul(&eye)?.sum()?.scale(scale)?;
    let t2i = logits.t()?.log_softmax_rows()?.mul(&eye)?.sum()?.scale(scale)?;
    let total = i2t.add(&t2i)?;
    Ok(LossVars { i2t, t2i, total })
}

/// Evaluate the loss on plain embeddings.
pub fn contrastive_loss_values(batch: &ContrastiveBatch, tau: Temperature) -> Result<LossValues> {
    let g = Graph::new();
    let images = g.constant(batch.images.clone());
    let texts = g.constant(batch.texts.clone());
    let tau = temperature(&g.constant(Tensor::scalar(tau.tau_log)))?;
    let l = contrastive_loss(&images, &texts, &tau)?;
    Ok(LossValues {
        i2t: l.i2t.value().item(),
        t2i: l.t2i.value().item(),
        total: l.total.value().item(),
    })
}
