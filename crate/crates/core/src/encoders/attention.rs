//! The attention blocks. All activations are row-major: one row per prompt,
//! patch or token.

use crate::tensor::{Result, TensorError, Var};

fn check_width(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<usize> {
    let (sa, sb) = (a.shape(), b.shape());
    match (sa.as_slice(), sb.as_slice()) {
        ([_, da], [_, db]) if da == db => Ok(*da),
        _ => Err(TensorError::Shape {
            op,
            lhs: sa,
            rhs: sb,
        }),
    }
}

/// `softmax(q kᵀ / √d) v` with keys doubling as values.
fn attend<'g>(queries: &Var<'g>, keys: &Var<'g>, d: usize) -> Result<Var<'g>> {
    queries
        .matmul(&keys.t()?)?
        .scale(1.0 / (d as f64).sqrt())?
        .softmax_rows()?
        .matmul(keys)
}

/// Prompt queries over patch keys/values: `E = Norm(softmax(Q Pᵀ/√d) P) + Q`.
///
/// `prompts` is `n_r × d_p`, `patches` is `n_p × d_p`; output is `n_r × d_p`.
pub fn pgve_cross_attention<'g>(prompts: &Var<'g>, patches: &Var<'g>, eps: f64) -> Result<Var<'g>> {
    let d = check_width("pgve_cross_attention", prompts, patches)?;
    attend(prompts, patches, d)?.layer_norm(eps)?.add(prompts)
}

/// Attention-weighted fusion of the prompt outputs into one image feature.
///
/// `E' = E W1ᵀ`, scores `W3 · tanh(W2 E'ⱼ)`, `a = softmax(scores)`,
/// `f = W4 Σⱼ aⱼ E'ⱼ`. Returns `(f, a)` as `1×d_p` and `1×n_r` rows.
pub fn pgve_fuse<'g>(prompt_out: &Var<'g>, fusion: [&Var<'g>; 4]) -> Result<(Var<'g>, Var<'g>)> {
    let [w1, w2, w3, w4] = fusion;
    let projected = prompt_out.matmul(&w1.t()?)?;
    let scores = projected.matmul(&w2.t()?)?.tanh()?.matmul(&w3.t()?)?;
    let weights = scores.t()?.softmax_rows()?;
    let pooled = weights.matmul(&projected)?;
    Ok((pooled.matmul(&w4.t()?)?, weights))
}

/// Token queries over the concatenated visual items: `T + softmax(T Kᵀ/√d) K`
/// with `K = [P ; E]`. Without prompts the keys are the patches alone.
pub fn vgte_refine<'g>(
    tokens: &Var<'g>,
    patches: &Var<'g>,
    prompts: Option<&Var<'g>>,
) -> Result<Var<'g>> {
    let keys = match prompts {
        Some(e) => {
            check_width("vgte_refine", patches, e)?;
            patches.concat_rows(e)?
        }
        None => *patches,
    };
    let d = check_width("vgte_refine", tokens, &keys)?;
    tokens.add(&attend(tokens, &keys, d)?)
}

/// One residual single-head self-attention block: `X + softmax(XWq (XWk)ᵀ/√d) XWv Wo`.
pub fn self_attention<'g>(x: &Var<'g>, w: [&Var<'g>; 4]) -> Result<Var<'g>> {
    let [wq, wk, wv, wo] = w;
    let d = x.shape()[1];
    let q = x.matmul(wq)?;
    let k = x.matmul(wk)?;
    let v = x.matmul(wv)?;
    let mixed = q
        .matmul(&k.t()?)?
        .scale(1.0 / (d as f64).sqrt())?
        .softmax_rows()?
        .matmul(&v)?;
    x.add(&mixed.matmul(wo)?)
}

/// Contextual token embeddings (`n_tok × d_p`).
pub fn encode_text<'g>(
    ids: &[usize],
    embed: &Var<'g>,
    pos: &Var<'g>,
    attn: [&Var<'g>; 4],
) -> Result<Var<'g>> {
    let max_tokens = pos.shape()[0];
    if ids.is_empty() || ids.len() > max_tokens {
        return Err(TensorError::Invalid {
            op: "encode_text",
            detail: format!("need 1..={max_tokens} tokens, got {}", ids.len()),
        });
    }
    let positions: Vec<usize> = (0..ids.len()).collect();
    let x = embed.gather_rows(ids)?.add(&pos.gather_rows(&positions)?)?;
    self_attention(&x, attn)
}

/// Mean over token rows, linear head, unit norm.
pub fn pool_and_project<'g>(tokens: &Var<'g>, head: &Var<'g>) -> Result<Var<'g>> {
    tokens.mean_rows()?.matmul(head)?.l2_normalize()
}

/// Linear head, unit norm.
pub fn project_image<'g>(feature: &Var<'g>, head: &Var<'g>) -> Result<Var<'g>> {
    feature.matmul(head)?.l2_normalize()
}
