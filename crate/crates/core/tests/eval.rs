mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reefclip_core::eval::{
    classification_metrics, classify_embedding, cross_modal_retrieval, linear_probe, partner_ranks,
    retrieval_from_scores, ProbeConfig,
};

use common::{randn_mat, Mat};

/// Rank of each query's partner by full sort (descending score, then index).
fn sort_ranks(scores: &Mat) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            idx.iter().position(|&j| j == i).unwrap()
        })
        .collect()
}

fn transpose(m: &Mat) -> Mat {
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

#[test]
fn random_embeddings_give_chance_recall() {
    let (n, trials) = (500, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut hits = 0.0;
    for _ in 0..trials {
        let a = randn_mat(&mut rng, n, 16, 1.0);
        let b = randn_mat(&mut rng, n, 16, 1.0);
        let r = cross_modal_retrieval(&a, &b, &[1]).unwrap();
        hits += r.image_to_text[0] * n as f64;
    }
    let p = 1.0 / n as f64;
    let mean = hits / (trials * n) as f64;
    let se = (p * (1.0 - p) / (trials * n) as f64).sqrt();
    assert!((mean - p).abs() < 3.0 * se, "R@1 {mean} vs chance {p} (se {se})");
}

#[test]
fn identical_embeddings_retrieve_perfectly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = randn_mat(&mut rng, 40, 8, 1.0);
    let r = cross_modal_retrieval(&a, &a, &[1, 5]).unwrap();
    assert_eq!(r.i2t_at(1), Some(1.0));
    assert_eq!(r.t2i_at(5), Some(1.0));
    assert_eq!(r.i2t_at(2), None);
}

#[test]
fn ties_rank_by_index() {
    let scores = vec![vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5]];
    let r = retrieval_from_scores(&scores, &[1, 2, 3]).unwrap();
    assert_eq!(r.image_to_text, [1.0 / 3.0, 2.0 / 3.0, 1.0]);
    assert!(retrieval_from_scores(&scores, &[0]).is_err());
    assert!(retrieval_from_scores(&[], &[1]).is_err());
}

#[test]
fn zero_shot_ties_go_to_first_class() {
    let classes = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    assert_eq!(classify_embedding(&[1.0, 1.0], &classes).unwrap().class, 0);
    assert_eq!(classify_embedding(&[-1.0, 0.0], &classes).unwrap().class, 1);
    assert!(classify_embedding(&[1.0, 0.0], &[]).is_err());
}

#[test]
fn metrics_by_hand() {
    let m = classification_metrics(&[0, 0, 1, 2], &[0, 1, 1, 2], 3).unwrap();
    assert_eq!(m.accuracy, 0.75);
    let f1 = [2.0 / 3.0, 2.0 / 3.0, 1.0];
    for (a, b) in m.per_class_f1.iter().zip(f1) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((m.macro_f1 - 7.0 / 9.0).abs() < 1e-15);
}

fn blobs(seed: u64, n: usize, m: usize, c: usize, sep: f64) -> (Mat, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = randn_mat(&mut rng, c, m, sep);
    let y: Vec<usize> = (0..n).map(|i| i % c).collect();
    let x = y
        .iter()
        .map(|&k| centers[k].iter().map(|v| v + rng.random_range(-1.0..1.0)).collect())
        .collect();
    (x, y)
}

#[test]
fn probe_separates_blobs() {
    let (x, y) = blobs(3, 200, 6, 4, 5.0);
    let cfg = ProbeConfig::for_dims(6, 4);
    assert_eq!(cfg.lambda, 100.0 / 24.0);
    let r = linear_probe(&x, &y, 4, &cfg).unwrap();
    assert!(r.accuracy >= 0.99, "accuracy {}", r.accuracy);
    assert_eq!(r.lambda, cfg.lambda);
    assert!(r.objective_trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(x.iter().zip(&y).all(|(xi, &yi)| r.predict(xi) == yi) || r.accuracy < 1.0);
}

#[test]
fn probe_stationary_point_carries_lambda() {
    let (x, y) = blobs(5, 60, 3, 3, 1.0);
    let cfg = ProbeConfig { tolerance: 1e-7, ..ProbeConfig::for_dims(3, 3) };
    let r = linear_probe(&x, &y, 3, &cfg).unwrap();
    assert!(r.converged);
    // At the optimum, λW equals minus the data gradient of the summed cross-entropy.
    let mut grad = vec![vec![0.0; 3]; 3];
    for (xi, &yi) in x.iter().zip(&y) {
        let z: Vec<f64> = (0..3).map(|k| r.bias[k] + (0..3).map(|j| r.weights[k][j] * xi[j]).sum::<f64>()).collect();
        let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = z.iter().map(|v| (v - mx).exp()).sum();
        for k in 0..3 {
            let resid = (z[k] - mx).exp() / s - if k == yi { 1.0 } else { 0.0 };
            for j in 0..3 {
                grad[k][j] += resid * xi[j];
            }
        }
    }
    for k in 0..3 {
        for j in 0..3 {
            assert!((grad[k][j] + r.lambda * r.weights[k][j]).abs() < 1e-6, "{k},{j}");
        }
    }
}

#[test]
fn probe_rejects_bad_input() {
    let cfg = ProbeConfig::for_dims(2, 2);
    assert!(linear_probe(&[vec![0.0, 1.0]], &[0], 2, &cfg).is_err());
    assert!(linear_probe(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[0, 0], 2, &cfg).is_err());
    assert!(linear_probe(&[vec![0.0, 1.0], vec![1.0]], &[0, 1], 2, &cfg).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranks_match_full_sort(seed in any::<u64>(), n in 1usize..40, levels in 1u32..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Mat = (0..n).map(|_| (0..n).map(|_| rng.random_range(0..levels) as f64).collect()).collect();
        let ks = [1, 3, 10];
        let r = retrieval_from_scores(&scores, &ks).unwrap();
        for (dir, ranks) in [(&r.image_to_text, sort_ranks(&scores)), (&r.text_to_image, sort_ranks(&transpose(&scores)))] {
            for (ki, &k) in ks.iter().enumerate() {
                let expected = ranks.iter().filter(|&&rk| rk < k).count() as f64 / n as f64;
                prop_assert_eq!(dir[ki], expected);
            }
        }
    }

    #[test]
    fn partner_ranks_are_scale_free(seed in any::<u64>(), n in 1usize..20, scale in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = randn_mat(&mut rng, n, 4, 1.0);
        let b = randn_mat(&mut rng, n, 4, 1.0);
        let scaled: Mat = b.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        prop_assert_eq!(partner_ranks(&a, &b), partner_ranks(&a, &scaled));
    }
}
