//! Multinomial logistic regression on frozen features, fitted with L-BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::metrics::classification_metrics;
use super::zeroshot::argmax;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lambda: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl ProbeConfig {
    /// `lambda = 100 / (M·C)` for `M`-dimensional features and `C` classes.
    pub fn for_dims(feature_dim: usize, num_classes: usize) -> Self {
        Self {
            lambda: 100.0 / (feature_dim * num_classes) as f64,
            max_iterations: 1000,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    /// `C × M`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective after initialization and after each accepted iteration.
    pub objective_trace: Vec<f64>,
}

impl ProbeReport {
    pub fn predict(&self, x: &[f64]) -> usize {
        let scores: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b)
            .collect();
        argmax(&scores).expect("at least two classes")
    }
}

struct Problem<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    m: usize,
    c: usize,
    lambda: f64,
}

impl Problem<'_> {
    /// Summed cross-entropy plus `λ/2·‖W‖²`, and its gradient. The bias is
    /// the trailing `C` entries of `theta` and is not penalised.
    fn eval(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (m, c) = (self.m, self.c);
        let (w, b) = theta.split_at(m * c);
        let mut grad = vec![0.0; theta.len()];
        let mut f = 0.0;
        let mut z = vec![0.0; c];
        for (xi, &yi) in self.x.iter().zip(self.y) {
            for k in 0..c {
                z[k] = b[k] + w[k * m..(k + 1) * m].iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            }
            let zmax = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = zmax + z.iter().map(|v| (v - zmax).exp()).sum::<f64>().ln();
            f += lse - z[yi];
            for k in 0..c {
                let r = (z[k] - lse).exp() - if k == yi { 1.0 } else { 0.0 };
                for (g, xv) in grad[k * m..(k + 1) * m].iter_mut().zip(xi) {
                    *g += r * xv;
                }
                grad[m * c + k] += r;
            }
        }
        f += 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>();
        for (g, wv) in grad[..m * c].iter_mut().zip(w) {
            *g += self.lambda * wv;
        }
        (f, grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: approximate inverse-Hessian times `g`.
fn lbfgs_direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - beta) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Fit a linear classifier to `features` (`N × M`) and integer `labels`.
pub fn linear_probe(
    features: &[Vec<f64>],
    labels: &[usize],
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    let n = features.len();
    if n != labels.len() {
        return Err(Error::Input(format!("{n} feature rows but {} labels", labels.len())));
    }
    if num_classes < 2 || n < num_classes {
        return Err(Error::Input(format!(
            "probe needs N >= C >= 2, got N = {n}, C = {num_classes}"
        )));
    }
    if !(config.lambda > 0.0 && config.lambda.is_finite()) {
        return Err(Error::Config(format!("probe lambda must be positive, got {}", config.lambda)));
    }
    let m = features[0].len();
    if m == 0 || features.iter().any(|r| r.len() != m) {
        return Err(Error::Input("feature rows must share a positive width".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            tensor: "probe features".into(),
        });
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Input(format!("label {l} out of range for {num_classes} classes")));
    }
    let missing: Vec<usize> = (0..num_classes).filter(|k| !labels.contains(k)).collect();
    if !missing.is_empty() {
        return Err(Error::Input(format!("classes absent from labels: {missing:?}")));
    }

    let problem = Problem {
        x: features,
        y: labels,
        m,
        c: num_classes,
        lambda: config.lambda,
    };
    let mut theta = vec![0.0; m * num_classes + num_classes];
    let (mut f, mut g) = problem.eval(&theta);
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = norm(&g) < config.tolerance;

    while !converged && iterations < config.max_iterations {
        let mut d = lbfgs_direction(&g, &history);
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut step = if history.is_empty() { 1.0 / norm(&g).max(1.0) } else { 1.0 };
        let accepted = loop {
            let cand: Vec<f64> = theta.iter().zip(&d).map(|(t, di)| t + step * di).collect();
            let (fc, gc) = problem.eval(&cand);
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                break Some((cand, fc, gc));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        let Some((cand, fc, gc)) = accepted else {
            log::debug!("probe line search stalled after {iterations} iterations");
            break;
        };
        let s: Vec<f64> = cand.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gc.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > 10 {
                history.pop_front();
            }
        }
        theta = cand;
        f = fc;
        g = gc;
        trace.push(f);
        iterations += 1;
        converged = norm(&g) < config.tolerance;
    }

    let (w, b) = theta.split_at(m * num_classes);
    let mut report = ProbeReport {
        weights: w.chunks(m).map(<[f64]>::to_vec).collect(),
        bias: b.to_vec(),
        accuracy: 0.0,
        macro_f1: 0.0,
        lambda: config.lambda,
        iterations,
        converged,
        grad_norm: norm(&g),
        objective_trace: trace,
    };
    let preds: Vec<usize> = features.iter().map(|x| report.predict(x)).collect();
    let metrics = classification_metrics(&preds, labels, num_classes)?;
    report.accuracy = metrics.accuracy;
    report.macro_f1 = metrics.macro_f1;
    Ok(report)
}
