mod common;

use proptest::prelude::*;

use reefclip_core::cleaning::{enrich, extract_keywords, rank_and_retain, retain_count, retain_top, DEFAULT_TOP_P};

fn scored(levels: &[u8]) -> Vec<(String, f64)> {
    levels.iter().enumerate().map(|(i, &l)| (format!("k{i}"), l as f64 * 0.25)).collect()
}

#[test]
fn ten_constructed_keywords() {
    let scores = [0.1, 0.9, -0.3, 0.9, 0.5, 0.0, 0.7, 0.5, -0.8, 0.2];
    let keywords: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
    let image = [0.6, 0.8];
    let embed = |k: &str| {
        let s = scores[k[1..].parse::<usize>().unwrap()];
        Ok(vec![0.6 * s, 0.8 * s])
    };
    let kept = rank_and_retain(&image, &keywords, 50.0, embed).unwrap();
    assert_eq!(kept.keywords(), ["w1", "w3", "w6", "w4", "w7"]);
    let oracle = common::top_p_oracle(
        &keywords.iter().cloned().zip(scores.iter().map(|s| s * 1.0)).collect::<Vec<_>>(),
        50.0,
    );
    assert_eq!(kept.keywords(), oracle);
    assert_eq!(DEFAULT_TOP_P, 20.0);
    assert_eq!(rank_and_retain(&image, &keywords, DEFAULT_TOP_P, embed).unwrap().keywords(), ["w1", "w3"]);
}

#[test]
fn retain_count_edges() {
    assert_eq!(retain_count(0, 20.0), 0);
    assert_eq!(retain_count(1, 0.1), 1);
    assert_eq!(retain_count(10, 20.0), 2);
    assert_eq!(retain_count(11, 20.0), 3);
    assert_eq!(retain_count(7, 100.0), 7);
}

#[test]
fn empty_keywords_keep_caption() {
    let kept = retain_top(Vec::new(), 20.0).unwrap();
    assert!(kept.empty_input && kept.kept.is_empty());
    assert_eq!(enrich("a coral", &kept).unwrap().0, "a coral");
    assert!(enrich("  ", &kept).is_err());
    assert!(retain_top(scored(&[1]), 0.0).is_err());
    assert!(retain_top(vec![("x".into(), f64::NAN)], 20.0).is_err());
}

#[test]
fn keywords_drop_stopwords_and_repeats() {
    let kw = extract_keywords("A red coral and a RED shark with the reef");
    assert_eq!(kw, ["red", "coral", "shark", "reef"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn equals_exhaustive_sort(levels in prop::collection::vec(0u8..5, 0..30), p in 0.01f64..=100.0) {
        let s = scored(&levels);
        let kept = retain_top(s.clone(), p).unwrap();
        prop_assert_eq!(kept.keywords(), common::top_p_oracle(&s, p));
        prop_assert!(kept.kept.windows(2).all(|w| w[0].1 >= w[1].1));
    }

    #[test]
    fn kept_set_grows_with_p(levels in prop::collection::vec(0u8..4, 1..30), a in 0.01f64..=100.0, b in 0.01f64..=100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let small = retain_top(scored(&levels), lo).unwrap().keywords();
        let large = retain_top(scored(&levels), hi).unwrap().keywords();
        prop_assert!(small.len() <= large.len());
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }
}
