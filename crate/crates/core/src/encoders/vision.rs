use crate::tensor::{Result, Tensor, TensorError, Var};

/// Split an `H×W×C` image into non-overlapping `m×m` patches.
///
/// Patches are ordered row-major over the patch grid; each patch is flattened
/// as `(y, x, channel)`. The result is `n_p × (m·m·C)`.
pub fn patchify(image: &Tensor, m: usize) -> Result<Tensor> {
    let (h, w, c) = image_dims(image)?;
    if m == 0 || h % m != 0 || w % m != 0 {
        return Err(TensorError::Invalid {
            op: "patchify",
            detail: format!("image {h}×{w} is not divisible into {m}×{m} patches"),
        });
    }
    let (gh, gw) = (h / m, w / m);
    let plen = m * m * c;
    let src = image.data();
    let mut out = Vec::with_capacity(h * w * c);
    for py in 0..gh {
        for px in 0..gw {
            for y in 0..m {
                let row = (py * m + y) * w;
                let start = (row + px * m) * c;
                out.extend_from_slice(&src[start..start + m * c]);
            }
        }
    }
    Tensor::new(vec![gh * gw, plen], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &Tensor, h: usize, w: usize, c: usize, m: usize) -> Result<Tensor> {
    let (n, plen) = patches.dims2("unpatchify")?;
    if m == 0 || h % m != 0 || w % m != 0 || n != (h / m) * (w / m) || plen != m * m * c {
        return Err(TensorError::Invalid {
            op: "unpatchify",
            detail: format!("{n}×{plen} patches do not tile a {h}×{w}×{c} image with m={m}"),
        });
    }
    let gw = w / m;
    let mut out = vec![0.0; h * w * c];
    for (p, patch) in patches.data().chunks(plen).enumerate() {
        let (py, px) = (p / gw, p % gw);
        for y in 0..m {
            let start = ((py * m + y) * w + px * m) * c;
            out[start..start + m * c].copy_from_slice(&patch[y * m * c..(y + 1) * m * c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

fn image_dims(image: &Tensor) -> Result<(usize, usize, usize)> {
    match image.shape() {
        &[h, w, c] => Ok((h, w, c)),
        other => Err(TensorError::Invalid {
            op: "patchify",
            detail: format!("expected an H×W×C image, got shape {other:?}"),
        }),
    }
}

/// Patch embeddings: row `j` is `patch_j · proj + pos_j` (`n_p × d_p`).
pub fn encode_patches<'g>(patches: &Var<'g>, proj: &Var<'g>, pos: &Var<'g>) -> Result<Var<'g>> {
    let ps = patches.shape();
    let pos_shape = pos.shape();
    if ps.first() != pos_shape.first() {
        return Err(TensorError::Shape {
            op: "encode_patches",
            lhs: ps,
            rhs: pos_shape,
        });
    }
    patches.matmul(proj)?.add(pos)
}
