use std::path::{Path, PathBuf};

use serde_json::json;

use reefclip_core::checkpoint::{load_checkpoint, save_checkpoint};
use reefclip_core::cleaning::clean_manifest;
use reefclip_core::config::RunConfig;
use reefclip_core::data::synthetic::{write_corpus, SyntheticSpec};
use reefclip_core::data::{load_images, load_manifest, save_manifest, ManifestRecord};
use reefclip_core::encoders::ModelParams;
use reefclip_core::eval::{image_features, linear_probe, retrieval_from_scores, retrieval_scores, zeroshot_evaluate, ProbeConfig};
use reefclip_core::gradcheck::{grad_check, GradCheckConfig};
use reefclip_core::pipeline::{clean_with_fresh_model, label_indices, synthetic_batch, train_records};
use reefclip_core::tensor::Tensor;

use crate::{emit, CliError, CliResult, Command};

/// Tolerance a grad-check run must meet to succeed.
const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
const GRAD_CHECK_PAIRS: usize = 4;

pub(crate) fn run(command: &Command, cfg: &RunConfig) -> CliResult<()> {
    match command {
        Command::GenerateData => generate_data(cfg),
        Command::CleanCaptions => clean_captions(cfg),
        Command::Train => train(cfg),
        Command::EvalZeroshot => eval_zeroshot(cfg),
        Command::EvalRetrieval => eval_retrieval(cfg),
        Command::Probe => probe(cfg),
        Command::GradCheck => run_grad_check(cfg),
    }
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{key} is required for this command")))
}

fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn read_manifest(cfg: &RunConfig, side: usize) -> CliResult<(PathBuf, Vec<ManifestRecord>, Vec<Tensor>)> {
    let path = required(&cfg.manifest, "manifest")?.to_path_buf();
    let records = load_manifest(&path).map_err(reefclip_core::Error::from)?;
    let images = load_images(&records, manifest_dir(&path), Some(side))?;
    log::info!("{}: {} records", path.display(), records.len());
    Ok((path, records, images))
}

fn read_checkpoint(cfg: &RunConfig) -> CliResult<ModelParams> {
    let path = required(&cfg.checkpoint, "checkpoint")?;
    let ckpt = load_checkpoint(path)?;
    log::info!("loaded {} ({} scalars)", path.display(), ckpt.params.num_scalars());
    Ok(ckpt.params)
}

fn generate_data(cfg: &RunConfig) -> CliResult<()> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let mut spec = SyntheticSpec::new(cfg.num_classes, cfg.num_pairs, cfg.seed);
    spec.image_side = cfg.image_side;
    spec.patch_size = cfg.patch_size;
    if spec.classes.len() < cfg.num_classes {
        return Err(CliError::Config(format!(
            "num_classes {} exceeds the {} built-in classes",
            cfg.num_classes,
            spec.classes.len()
        )));
    }
    let samples = write_corpus(&spec, out)?;
    let manifest = out.join("manifest.jsonl");
    log::info!("wrote {} pairs to {}", samples.len(), manifest.display());
    emit(json!({
        "record": "generate-data",
        "manifest": manifest,
        "pairs": samples.len(),
        "classes": spec.classes.iter().map(|c| &c.name).collect::<Vec<_>>(),
        "seed": cfg.seed,
    }));
    Ok(())
}

fn cleaned_path(cfg: &RunConfig, manifest: &Path) -> PathBuf {
    let stem = manifest.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    let dir = cfg.out_dir.as_deref().unwrap_or(manifest_dir(manifest));
    dir.join(format!("{stem}.cleaned.jsonl"))
}

fn clean_captions(cfg: &RunConfig) -> CliResult<()> {
    let (path, records, images) = read_manifest(cfg, cfg.image_side)?;
    let cleaned = match &cfg.checkpoint {
        Some(ckpt) => {
            let params = read_checkpoint(cfg)?;
            clean_manifest(&params, &records, &images, cfg.top_p, &ckpt.display().to_string())?
        }
        None => clean_with_fresh_model(cfg, &records, &images)?,
    };
    let out = cleaned_path(cfg, &path);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(|e| reefclip_core::Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    save_manifest(&out, &cleaned).map_err(reefclip_core::Error::from)?;
    let kept: usize = cleaned.iter().map(|r| r.keywords_kept.as_ref().map_or(0, Vec::len)).sum();
    emit(json!({
        "record": "clean-captions",
        "manifest": out,
        "records": cleaned.len(),
        "top_p": cfg.top_p,
        "keywords_kept": kept,
    }));
    Ok(())
}

fn train(cfg: &RunConfig) -> CliResult<()> {
    let out = required(&cfg.out_dir, "out_dir")?;
    let (_, mut records, images) = read_manifest(cfg, cfg.image_side)?;
    if records.iter().any(|r| r.caption_enriched.is_none()) {
        log::info!("manifest has uncleaned records; cleaning with a fresh model first");
        records = clean_with_fresh_model(cfg, &records, &images)?;
    }
    let outcome = train_records(cfg, &records, &images, |m| {
        emit(json!({"record": "epoch", "epoch": m.epoch, "loss": m.loss, "loss_i2t": m.loss_i2t, "loss_t2i": m.loss_t2i, "tau": m.tau}));
        log::debug!("epoch {} loss {:.5}", m.epoch, m.loss);
    })?;
    std::fs::create_dir_all(out).map_err(|e| reefclip_core::Error::Io {
        path: out.display().to_string(),
        source: e,
    })?;
    let tc = cfg.train_config();
    let (last, best) = (out.join("model.ckpt"), out.join("best.ckpt"));
    save_checkpoint(&last, &outcome.params, Some(&tc))?;
    save_checkpoint(&best, &outcome.best, Some(&tc))?;
    log::info!("wrote {} and {}", last.display(), best.display());
    emit(json!({
        "record": "train",
        "epochs": outcome.metrics.len(),
        "final_loss": outcome.metrics.last().map(|m| m.loss),
        "best_epoch": outcome.best_epoch,
        "checkpoint": last,
        "best_checkpoint": best,
    }));
    Ok(())
}

fn eval_zeroshot(cfg: &RunConfig) -> CliResult<()> {
    let params = read_checkpoint(cfg)?;
    let (_, records, images) = read_manifest(cfg, params.config.image_side)?;
    let (names, labels) = label_indices(&records)?;
    let report = zeroshot_evaluate(&params, &images, &labels, &names, &cfg.prompt_templates()?)?;
    emit(json!({
        "record": "eval-zeroshot",
        "classes": names,
        "templates": cfg.templates,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "per_class_f1": report.per_class_f1,
        "num_images": report.num_images,
    }));
    Ok(())
}

fn eval_retrieval(cfg: &RunConfig) -> CliResult<()> {
    let params = read_checkpoint(cfg)?;
    let (_, records, images) = read_manifest(cfg, params.config.image_side)?;
    let texts: Vec<Vec<usize>> = records
        .iter()
        .map(|r| params.tokenize(r.caption_enriched.as_deref().unwrap_or(&r.caption_gt)))
        .collect();
    let scores = retrieval_scores(&params, &images, &texts)?;
    let r = retrieval_from_scores(&scores, &cfg.ks)?;
    emit(json!({
        "record": "eval-retrieval",
        "pairs": records.len(),
        "ks": r.ks,
        "image_to_text": r.image_to_text,
        "text_to_image": r.text_to_image,
    }));
    Ok(())
}

fn probe(cfg: &RunConfig) -> CliResult<()> {
    let params = read_checkpoint(cfg)?;
    let (_, records, images) = read_manifest(cfg, params.config.image_side)?;
    let (names, labels) = label_indices(&records)?;
    let features = image_features(&params, &images)?;
    let dim = features.first().map_or(0, Vec::len);
    let report = linear_probe(&features, &labels, names.len(), &ProbeConfig::for_dims(dim, names.len()))?;
    emit(json!({
        "record": "probe",
        "classes": names,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "lambda": report.lambda,
        "iterations": report.iterations,
        "converged": report.converged,
        "objective": report.objective_trace.last(),
    }));
    Ok(())
}

fn run_grad_check(cfg: &RunConfig) -> CliResult<()> {
    let started = std::time::Instant::now();
    let (params, batch) = synthetic_batch(cfg, GRAD_CHECK_PAIRS)?;
    let gc = GradCheckConfig {
        seed: cfg.seed,
        text_context: cfg.text_context,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&params, &batch, &gc)?;
    for g in &report.groups {
        emit(json!({
            "record": "grad-check-group",
            "group": g.group,
            "checked": g.checked,
            "max_rel_error": g.max_rel_error,
            "max_abs_error": g.max_abs_error,
            "max_abs_grad": g.max_abs_grad,
        }));
    }
    let passed = report.passes(GRAD_CHECK_TOLERANCE);
    emit(json!({
        "record": "grad-check",
        "passed": passed,
        "tolerance": GRAD_CHECK_TOLERANCE,
        "max_rel_error": report.max_rel_error,
        "loss": report.loss,
        "seconds": started.elapsed().as_secs_f64(),
    }));
    if passed {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}
