//! Contrastive vision-language alignment with prompt-guided image encoding,
//! vision-guided text encoding and similarity-based caption cleaning, built on
//! a small float64 reverse-mode autodiff engine.
//!
//! Module map:
//!
//! | module        | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | [`tensor`]    | dense tensors, tape, backward                              |
//! | [`encoders`]  | patch/text encoders, prompt cross-attention, refinement    |
//! | [`alignment`] | bidirectional contrastive loss, AdamW, training loop       |
//! | [`cleaning`]  | keyword extraction, similarity ranking, caption enrichment |
//! | [`eval`]      | zero-shot, retrieval R@K, linear probe, F1                 |
//! | [`data`]      | synthetic corpus, manifests, image decoding                |
//! | [`checkpoint`]| versioned binary checkpoints                               |

pub mod alignment;
pub mod checkpoint;
pub mod cleaning;
pub mod config;
pub mod data;
pub mod encoders;
pub mod eval;
pub mod gradcheck;
pub mod par;
pub mod pipeline;
pub mod tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] tensor::TensorError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value in {tensor}")]
    NonFinite { tensor: String },
    #[error(transparent)]
    Manifest(#[from] data::ManifestError),
    #[error(transparent)]
    Image(#[from] data::ImageError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
