mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use reefclip_core::alignment::{contrastive_loss_values, ContrastiveBatch, Temperature, TAU_MAX, TAU_MIN};

use common::Mat;

fn unit_rows(seed: u64, n: usize, d: usize) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    common::randn_mat(&mut rng, n, d, 1.0)
        .into_iter()
        .map(|r| {
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / norm).collect()
        })
        .collect()
}

fn scores(images: &Mat, texts: &Mat) -> Mat {
    texts
        .iter()
        .map(|t| images.iter().map(|i| t.iter().zip(i).map(|(a, b)| a * b).sum()).collect())
        .collect()
}

#[test]
fn single_pair_has_zero_loss() {
    let b = ContrastiveBatch::new(&unit_rows(1, 1, 4), &unit_rows(2, 1, 4)).unwrap();
    let l = contrastive_loss_values(&b, Temperature::from_tau(14.3)).unwrap();
    assert_eq!((l.i2t, l.t2i, l.total), (0.0, 0.0, 0.0));
}

#[test]
fn orthonormal_pair_of_pairs() {
    let e = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let l = contrastive_loss_values(&ContrastiveBatch::new(&e, &e).unwrap(), Temperature::from_tau(1.0)).unwrap();
    let per_direction = (1.0 + (-1f64).exp()).ln();
    assert!((l.i2t - per_direction).abs() < 1e-12);
    assert!((l.t2i - per_direction).abs() < 1e-12);
    assert!((l.total - 2.0 * -(1f64.exp() / (1f64.exp() + 1.0)).ln()).abs() < 1e-9);
}

#[test]
fn temperature_is_clamped() {
    assert!((Temperature::from_tau(1e6).tau() - TAU_MAX).abs() < 1e-12);
    assert!((Temperature::from_tau(1e-9).tau() - TAU_MIN).abs() < 1e-15);
}

#[test]
fn rejects_malformed_batches() {
    assert!(ContrastiveBatch::new(&[], &[]).is_err());
    assert!(ContrastiveBatch::new(&unit_rows(1, 2, 3), &unit_rows(2, 3, 3)).is_err());
    assert!(ContrastiveBatch::new(&[vec![2.0, 0.0]], &[vec![1.0, 0.0]]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_loop_oracle(seed in any::<u64>(), w in 1usize..9, d in 2usize..7, tau in 0.5f64..30.0) {
        let (imgs, txts) = (unit_rows(seed, w, d), unit_rows(seed ^ 1, w, d));
        let l = contrastive_loss_values(&ContrastiveBatch::new(&imgs, &txts).unwrap(), Temperature::from_tau(tau)).unwrap();
        let (i2t, t2i) = common::contrastive_loss(&scores(&imgs, &txts), tau);
        prop_assert!((l.i2t - i2t).abs() < 1e-10 && (l.t2i - t2i).abs() < 1e-10);
        prop_assert!(l.total >= 0.0);
    }

    #[test]
    fn invariant_under_paired_permutation(seed in any::<u64>(), w in 2usize..9, perm in any::<u64>()) {
        use rand::seq::SliceRandom;
        let (imgs, txts) = (unit_rows(seed, w, 5), unit_rows(seed ^ 7, w, 5));
        let mut order: Vec<usize> = (0..w).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm));
        let pi: Mat = order.iter().map(|&i| imgs[i].clone()).collect();
        let pt: Mat = order.iter().map(|&i| txts[i].clone()).collect();
        let tau = Temperature::from_tau(10.0);
        let a = contrastive_loss_values(&ContrastiveBatch::new(&imgs, &txts).unwrap(), tau).unwrap();
        let b = contrastive_loss_values(&ContrastiveBatch::new(&pi, &pt).unwrap(), tau).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn swapping_modalities_swaps_directions(seed in any::<u64>(), w in 1usize..8) {
        let (imgs, txts) = (unit_rows(seed, w, 4), unit_rows(seed ^ 3, w, 4));
        let tau = Temperature::from_tau(5.0);
        let a = contrastive_loss_values(&ContrastiveBatch::new(&imgs, &txts).unwrap(), tau).unwrap();
        let b = contrastive_loss_values(&ContrastiveBatch::new(&txts, &imgs).unwrap(), tau).unwrap();
        prop_assert!((a.i2t - b.t2i).abs() < 1e-12 && (a.t2i - b.i2t).abs() < 1e-12);
    }
}
