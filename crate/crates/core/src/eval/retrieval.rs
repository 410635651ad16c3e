use serde::Serialize;

use crate::{par, Error, Result};

/// Recall at each K for both query directions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub ks: Vec<usize>,
    pub image_to_text: Vec<f64>,
    pub text_to_image: Vec<f64>,
}

impl RetrievalResult {
    pub fn i2t_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.image_to_text[i])
    }

    pub fn t2i_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.text_to_image[i])
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// 0-based rank of each query's partner (same index) among all candidates.
///
/// Candidates with equal similarity are ordered by index.
pub fn partner_ranks(queries: &[Vec<f64>], candidates: &[Vec<f64>]) -> Vec<usize> {
    let sim = par::map(queries, |q| candidates.iter().map(|c| cosine(q, c)).collect::<Vec<f64>>());
    ranks_from_rows(&sim)
}

/// Rank of the diagonal entry within each row of a square score matrix.
fn ranks_from_rows(sim: &[Vec<f64>]) -> Vec<usize> {
    par::map_range(sim.len(), |i| {
        let row = &sim[i];
        let target = row[i];
        row.iter()
            .enumerate()
            .filter(|&(j, &s)| s > target || (s == target && j < i))
            .count()
    })
}

fn recall(ranks: &[usize], ks: &[usize]) -> Vec<f64> {
    let n = ranks.len();
    ks.iter()
        .map(|&k| {
            let k = k.min(n);
            ranks.iter().filter(|&&r| r < k).count() as f64 / n as f64
        })
        .collect()
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("retrieval ks must be non-empty and positive".into()));
    }
    Ok(())
}

/// R@K in both directions for aligned `images[i]` ↔ `texts[i]` pairs.
/// K larger than the pool is clipped to the pool size.
pub fn cross_modal_retrieval(
    images: &[Vec<f64>],
    texts: &[Vec<f64>],
    ks: &[usize],
) -> Result<RetrievalResult> {
    if images.len() != texts.len() {
        return Err(Error::Input(format!(
            "{} images but {} texts",
            images.len(),
            texts.len()
        )));
    }
    let sim = par::map(images, |q| texts.iter().map(|c| cosine(q, c)).collect::<Vec<f64>>());
    retrieval_from_scores(&sim, ks)
}

/// R@K from a square score matrix with `scores[i][j]` = similarity of image
/// `i` and text `j`; the true pairs lie on the diagonal.
pub fn retrieval_from_scores(scores: &[Vec<f64>], ks: &[usize]) -> Result<RetrievalResult> {
    let n = scores.len();
    if n == 0 {
        return Err(Error::Input("retrieval needs at least one pair".into()));
    }
    if scores.iter().any(|r| r.len() != n) {
        return Err(Error::Input("retrieval score matrix must be square".into()));
    }
    if scores.iter().flatten().any(|s| s.is_nan()) {
        return Err(Error::NonFinite {
            tensor: "retrieval scores".into(),
        });
    }
    check_ks(ks)?;
    let transposed: Vec<Vec<f64>> = (0..n).map(|j| scores.iter().map(|r| r[j]).collect()).collect();
    Ok(RetrievalResult {
        ks: ks.to_vec(),
        image_to_text: recall(&ranks_from_rows(scores), ks),
        text_to_image: recall(&ranks_from_rows(&transposed), ks),
    })
}
