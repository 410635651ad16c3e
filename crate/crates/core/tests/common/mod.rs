//! Loop-based reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Mat = Vec<Vec<f64>>;

pub fn randn_mat<R: Rng>(rng: &mut R, r: usize, c: usize, std: f64) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| { let z: f64 = StandardNormal.sample(rng); std * z }).collect::<Vec<f64>>())
        .collect()
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `Σ_j softmax_j(q·k_j/√d) k_j` for every query row.
fn attend(q: &Mat, k: &Mat) -> Mat {
    let d = q[0].len();
    q.iter()
        .map(|qi| {
            let logits: Vec<f64> = k.iter().map(|kj| dot(qi, kj) / (d as f64).sqrt()).collect();
            let a = softmax(&logits);
            let mut out = vec![0.0; d];
            for (j, kj) in k.iter().enumerate() {
                for c in 0..d {
                    out[c] += a[j] * kj[c];
                }
            }
            out
        })
        .collect()
}

fn layer_norm_row(x: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    x.iter().map(|v| (v - mean) / (var + eps).sqrt()).collect()
}

pub fn pgve_cross_attention(q: &Mat, p: &Mat, eps: f64) -> Mat {
    attend(q, p)
        .iter()
        .zip(q)
        .map(|(a, qi)| layer_norm_row(a, eps).iter().zip(qi).map(|(x, y)| x + y).collect())
        .collect()
}

/// `W·x` for a `rows × cols` matrix `w`.
fn apply(w: &Mat, x: &[f64]) -> Vec<f64> {
    w.iter().map(|row| dot(row, x)).collect()
}

/// Returns the fused feature and the fusion weights.
pub fn pgve_fuse(e: &Mat, w1: &Mat, w2: &Mat, w3: &Mat, w4: &Mat) -> (Vec<f64>, Vec<f64>) {
    let proj: Mat = e.iter().map(|r| apply(w1, r)).collect();
    let scores: Vec<f64> = proj
        .iter()
        .map(|r| {
            let h: Vec<f64> = apply(w2, r).iter().map(|v| v.tanh()).collect();
            apply(w3, &h)[0]
        })
        .collect();
    let a = softmax(&scores);
    let mut pooled = vec![0.0; proj[0].len()];
    for (j, r) in proj.iter().enumerate() {
        for c in 0..r.len() {
            pooled[c] += a[j] * r[c];
        }
    }
    (apply(w4, &pooled), a)
}

pub fn vgte_refine(t: &Mat, p: &Mat, e: Option<&Mat>) -> Mat {
    let mut k = p.clone();
    if let Some(e) = e {
        k.extend(e.iter().cloned());
    }
    attend(t, &k)
        .iter()
        .zip(t)
        .map(|(a, ti)| a.iter().zip(ti).map(|(x, y)| x + y).collect())
        .collect()
}

/// Bidirectional contrastive loss with `scores[i][j]` = text `i` · image `j`.
pub fn contrastive_loss(scores: &Mat, tau: f64) -> (f64, f64) {
    let w = scores.len();
    let mut i2t = 0.0;
    let mut t2i = 0.0;
    for i in 0..w {
        let row: Vec<f64> = (0..w).map(|j| tau * scores[i][j]).collect();
        let col: Vec<f64> = (0..w).map(|j| tau * scores[j][i]).collect();
        i2t -= softmax(&row)[i].ln();
        t2i -= softmax(&col)[i].ln();
    }
    (i2t / w as f64, t2i / w as f64)
}

/// Exhaustive ranking: sort all keywords by descending score, ties by position,
/// and keep the first `⌈p·k/100⌉` (at least one).
pub fn top_p_oracle(scored: &[(String, f64)], p: f64) -> Vec<String> {
    let k = scored.len();
    if k == 0 {
        return Vec::new();
    }
    let keep = ((p * k as f64 / 100.0).ceil() as usize).clamp(1, k);
    let mut idx: Vec<usize> = (0..k).collect();
    // selection sort keeps the comparison logic obvious
    for a in 0..k {
        let mut best = a;
        for b in a + 1..k {
            let (sb, sbest) = (scored[idx[b]].1, scored[idx[best]].1);
            if sb > sbest || (sb == sbest && idx[b] < idx[best]) {
                best = b;
            }
        }
        idx.swap(a, best);
    }
    idx[..keep].iter().map(|&i| scored[i].0.clone()).collect()
}
