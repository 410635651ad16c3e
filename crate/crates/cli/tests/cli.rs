use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reefclip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reefclip"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn records(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is JSON lines"))
        .collect()
}

fn last(out: &Output) -> Value {
    records(out).pop().expect("at least one record")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path) -> String {
    let out = reefclip(&["generate-data", "--out-dir", s(dir), "--num-pairs", "12", "--image-side", "16", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    last(&out)["manifest"].as_str().unwrap().to_string()
}

const SMALL: [&str; 10] = ["--image-side", "16", "--d-p", "16", "--n-r", "4", "--epochs", "2", "--batch-size", "6"];

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(&dir.path().join("data"));

    let out = reefclip(&["clean-captions", "--manifest", &manifest, "--image-side", "16"]);
    assert!(out.status.success());
    let cleaned = last(&out)["manifest"].as_str().unwrap().to_string();
    let text = std::fs::read_to_string(&cleaned).unwrap();
    assert!(text.lines().all(|l| l.contains("caption_enriched") && l.contains("keywords_kept")));

    let run = dir.path().join("run");
    let mut args = vec!["train", "--manifest", &cleaned, "--out-dir", s(&run)];
    args.extend(SMALL);
    let out = reefclip(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = records(&out);
    assert_eq!(recs.iter().filter(|r| r["record"] == "epoch").count(), 2);
    assert!(run.join("model.ckpt").exists() && run.join("best.ckpt").exists());

    let ckpt = run.join("model.ckpt");
    for cmd in ["eval-zeroshot", "eval-retrieval", "probe"] {
        let out = reefclip(&[cmd, "--checkpoint", s(&ckpt), "--manifest", &cleaned, "--ks", "1,3"]);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
        let r = last(&out);
        assert_eq!(r["record"], cmd);
        match cmd {
            "eval-retrieval" => assert_eq!(r["ks"], serde_json::json!([1, 3])),
            _ => assert!((0.0..=1.0).contains(&r["accuracy"].as_f64().unwrap())),
        }
    }
}

#[test]
fn same_seed_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path());
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let mut args = vec!["train", "--manifest", &manifest, "--seed", "7", "--out-dir", s(&out_dir)];
        args.extend(SMALL);
        let out = reefclip(&args);
        assert!(out.status.success());
        records(&out).into_iter().filter(|r| r["record"] == "epoch").collect::<Vec<_>>()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "num_pairs = 5\nimage_side = 16\nseed = 2\n").unwrap();
    let out_dir = dir.path().join("data");
    let out = reefclip(&["generate-data", "--config", s(&cfg), "--num-pairs", "6", "--out-dir", s(&out_dir)]);
    assert!(out.status.success());
    assert_eq!(last(&out)["pairs"], 6);
    assert_eq!(last(&out)["seed"], 2);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "d_p = 32\nlearning_rate = 0.1\n").unwrap();
    let out = reefclip(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let r = last(&out);
    assert_eq!(r["record"], "error");
    assert_eq!(r["kind"], "config");
    assert!(r["message"].as_str().unwrap().contains("learning_rate"));
}

#[test]
fn invalid_values_exit_two() {
    assert_eq!(reefclip(&["grad-check", "--top-p", "0"]).status.code(), Some(2));
    assert_eq!(reefclip(&["grad-check", "--variant", "half"]).status.code(), Some(2));
    assert_eq!(reefclip(&["train"]).status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate(dir.path());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, b"not a checkpoint").unwrap();
    let out = reefclip(&["probe", "--checkpoint", s(&bad), "--manifest", &manifest]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(last(&out)["kind"], "runtime");
}

#[test]
fn grad_check_reports_every_group() {
    let out = reefclip(&["grad-check", "--image-side", "16", "--d-p", "16", "--n-r", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let recs = records(&out);
    let groups: Vec<&Value> = recs.iter().filter(|r| r["record"] == "grad-check-group").collect();
    assert_eq!(groups.len(), 16);
    assert!(groups.iter().all(|g| g["max_rel_error"].as_f64().unwrap() < 1e-5));
    assert_eq!(recs.last().unwrap()["passed"], true);
}

#[test]
fn help_lists_keys_and_presets() {
    let out = reefclip(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("paper-scale"));
    assert!(text.contains("top_p") && text.contains("--n-r"));
}
