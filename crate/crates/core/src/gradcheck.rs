//! Central finite-difference check of the full pipeline's gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{batch_gradients, batch_loss, PairExample, TextContext};
use crate::encoders::{ModelParams, PARAM_NAMES};
use crate::{par, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates checked per tensor (all of them when the tensor is smaller).
    pub coords_per_tensor: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
    pub text_context: TextContext,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            coords_per_tensor: 24,
            floor: 1e-4,
            seed: 0,
            text_context: TextContext::default(),
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_error: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < tolerance)
    }
}

/// Coordinates to probe in a tensor of `len` entries: the half with the
/// largest analytic gradient plus a seeded random fill.
fn pick_coords(grad: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let len = grad.len();
    if len <= k {
        return (0..len).collect();
    }
    let mut by_mag: Vec<usize> = (0..len).collect();
    by_mag.sort_by(|&a, &b| grad[b].abs().total_cmp(&grad[a].abs()).then(a.cmp(&b)));
    let mut picked: Vec<usize> = by_mag[..k / 2].to_vec();
    for i in sample(rng, len, len.min(4 * k)).into_iter() {
        if picked.len() == k {
            break;
        }
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    picked.sort_unstable();
    picked
}

/// Compare backward-pass gradients of the contrastive loss on `batch` with
/// fourth-order central differences, grouped by parameter tensor.
pub fn grad_check(params: &ModelParams, batch: &[PairExample], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let refs: Vec<&PairExample> = batch.iter().collect();
    let (loss, grads) = batch_gradients(params, &refs, cfg.text_context)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let jobs: Vec<(usize, usize)> = grads
        .iter()
        .enumerate()
        .flat_map(|(t, g)| {
            pick_coords(g.data(), cfg.coords_per_tensor, &mut rng)
                .into_iter()
                .map(move |i| (t, i))
        })
        .collect();
    let numeric = par::map(&jobs, |&(t, i)| -> Result<f64> {
        let mut p = params.clone();
        let x = p.tensors()[t].data()[i];
        let mut at = |k: f64| {
            p.tensors_mut()[t].data_mut()[i] = x + k * cfg.eps;
            batch_loss(&p, &refs, cfg.text_context).map(|l| l.total)
        };
        let (a, b, c, d) = (at(2.0)?, at(1.0)?, at(-1.0)?, at(-2.0)?);
        Ok((-a + 8.0 * b - 8.0 * c + d) / (12.0 * cfg.eps))
    });
    let mut groups: Vec<GroupReport> = PARAM_NAMES
        .iter()
        .map(|n| GroupReport {
            group: n.to_string(),
            checked: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            max_abs_grad: 0.0,
        })
        .collect();
    for (&(t, i), n) in jobs.iter().zip(numeric) {
        let n = n?;
        let a = grads[t].data()[i];
        let g = &mut groups[t];
        g.checked += 1;
        g.max_rel_error = g.max_rel_error.max(relative_error(a, n, cfg.floor));
        g.max_abs_error = g.max_abs_error.max((a - n).abs());
        g.max_abs_grad = g.max_abs_grad.max(a.abs());
    }
    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        groups,
        max_rel_error,
        loss: loss.total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-4), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-4) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-4) - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn coords_include_largest() {
        let g = [0.0, 5.0, -7.0, 0.1, 0.2, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = pick_coords(&g, 4, &mut rng);
        assert_eq!(c.len(), 4);
        assert!(c.contains(&1) && c.contains(&2));
        assert_eq!(pick_coords(&g[..3], 4, &mut rng), vec![0, 1, 2]);
    }
}
