//! `reefclip`: data generation, caption cleaning, training and evaluation.
//!
//! Every command prints JSON records on stdout, one per line, and logs to
//! stderr. Exit status: 0 on success, 2 for configuration errors, 1 for
//! anything else.

mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use serde_json::json;

use reefclip_core::alignment::TextContext;
use reefclip_core::config::RunConfig;
use reefclip_core::encoders::Variant;

#[derive(Debug, Parser)]
#[command(name = "reefclip", version, about = "Prompt-guided contrastive image-text alignment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML file with run configuration keys. Flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus (images plus manifest) to --out-dir.
    GenerateData,
    /// Add keywords_kept and caption_enriched to every record of --manifest.
    CleanCaptions,
    /// Train on --manifest and write checkpoints to --out-dir.
    Train,
    /// Zero-shot classification of --manifest's labelled images.
    EvalZeroshot,
    /// Image-text recall at each of --ks over --manifest.
    EvalRetrieval,
    /// Linear probe on frozen image features of --manifest.
    Probe,
    /// Finite-difference check of every parameter group on a small synthetic batch.
    GradCheck,
}

/// One flag per configuration key.
#[derive(Debug, Default, clap::Args)]
struct Overrides {
    #[arg(long, global = true)]
    d_p: Option<usize>,
    #[arg(long, global = true)]
    n_r: Option<usize>,
    #[arg(long, global = true)]
    patch_size: Option<usize>,
    #[arg(long, global = true)]
    image_side: Option<usize>,
    #[arg(long, global = true)]
    latent_dim: Option<usize>,
    #[arg(long, global = true)]
    vocab_size: Option<usize>,
    #[arg(long, global = true)]
    max_tokens: Option<usize>,
    #[arg(long, global = true)]
    pgve_layers: Option<usize>,
    /// full, no-pgve or no-vgte.
    #[arg(long, global = true)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    init_std: Option<f64>,
    #[arg(long, global = true)]
    embed_init_std: Option<f64>,
    #[arg(long, global = true)]
    text_norm: Option<bool>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    weight_decay: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    tau_init: Option<f64>,
    #[arg(long, global = true)]
    augment_flips: Option<bool>,
    /// paired or pairwise.
    #[arg(long, global = true)]
    text_context: Option<TextContext>,
    #[arg(long, global = true)]
    top_p: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    num_pairs: Option<usize>,
    #[arg(long, global = true)]
    num_classes: Option<usize>,
    /// Zero-shot prompt template containing `{}`; repeat for an ensemble.
    #[arg(long, global = true)]
    templates: Vec<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    ks: Vec<usize>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

macro_rules! apply {
    ($cfg:ident, $o:ident, $($field:ident),*) => {
        $(if let Some(v) = $o.$field.clone() { $cfg.$field = v.into(); })*
    };
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        let o = self;
        apply!(
            cfg, o, d_p, n_r, patch_size, image_side, latent_dim, vocab_size, max_tokens, pgve_layers, variant,
            init_std, embed_init_std, text_norm, lr, weight_decay, epochs, batch_size, tau_init, augment_flips,
            text_context, top_p, seed, num_pairs, num_classes
        );
        if !o.templates.is_empty() {
            cfg.templates = o.templates.clone();
        }
        if !o.ks.is_empty() {
            cfg.ks = o.ks.clone();
        }
        if o.manifest.is_some() {
            cfg.manifest = o.manifest.clone();
        }
        if o.checkpoint.is_some() {
            cfg.checkpoint = o.checkpoint.clone();
        }
        if o.out_dir.is_some() {
            cfg.out_dir = o.out_dir.clone();
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Check(String),
    #[error(transparent)]
    Core(#[from] reefclip_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Core(reefclip_core::Error::Config(_)) => 2,
            Self::Check(_) | Self::Core(_) => 1,
        }
    }

    fn kind(&self) -> &'static str {
        if self.exit_code() == 2 {
            "config"
        } else {
            "runtime"
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn load_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.message())))?
        }
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Key table shown after `--help`.
fn presets_table() -> String {
    let to_map = |c: RunConfig| match serde_json::to_value(c) {
        Ok(serde_json::Value::Object(m)) => m,
        _ => Default::default(),
    };
    let (defaults, paper) = (to_map(RunConfig::default()), to_map(RunConfig::paper_scale()));
    let mut out = String::from("Configuration keys (default / paper-scale preset):\n");
    for (k, v) in &defaults {
        let show = |v: &serde_json::Value| if v.is_null() { "-".to_string() } else { v.to_string() };
        let p = paper.get(k).map(show).unwrap_or_default();
        out.push_str(&format!("  {:<16} {} / {}\n", k, show(v), p));
    }
    out.push_str("\nPrecedence: flags override --config, which overrides the defaults.");
    out
}

pub fn emit(record: serde_json::Value) {
    println!("{record}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let matches = Cli::command().after_help(presets_table()).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let threads = cli.overrides.threads;
    let result = load_config(cli.config.as_deref(), &cli.overrides)
        .and_then(|cfg| reefclip_core::par::with_threads(threads, || commands::run(&cli.command, &cfg)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            emit(json!({"record": "error", "kind": e.kind(), "message": e.to_string()}));
            ExitCode::from(e.exit_code())
        }
    }
}
