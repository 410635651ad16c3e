//! Binary checkpoints.
//!
//! Layout: `b"AQCK"`, format version (u32 LE), header length (u64 LE), a JSON
//! header, the payload of little-endian f64 values, and a CRC32 (u32 LE) of the
//! payload. The header records the model and training configuration, the
//! vocabulary and a directory of `{name, shape, offset, length}` entries with
//! byte offsets relative to the start of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};


use crate::alignment::TrainConfig;
use crate::encoders::{ModelConfig, ModelParams, Vocab, PARAM_NAMES};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"AQCK";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX_LEN: usize = 4 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checkpoint truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checkpoint payload checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("tensor {name} has shape {found:?} in checkpoint but {expected:?} in config")]
    ShapeMismatch {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("checkpoint config does not match: {0}")]
    ConfigMismatch(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    length: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: ModelConfig,
    train: Option<TrainConfig>,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Parameters plus the training configuration they were produced with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub train: Option<TrainConfig>,
}

/// Serialize to the on-disk byte layout.
pub fn encode(params: &ModelParams, train: Option<&TrainConfig>) -> Result<Vec<u8>> {
    if let Some((name, _)) = params.named().find(|(_, t)| !t.is_finite()) {
        return Err(Error::NonFinite {
            tensor: name.to_string(),
        });
    }
    let mut entries = Vec::with_capacity(PARAM_NAMES.len());
    let mut payload = Vec::with_capacity(params.num_scalars() * 8);
    for (name, t) in params.named() {
        let offset = payload.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            length: payload.len() - offset,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        model: params.config.clone(),
        train: train.cloned(),
        vocab: params.vocab.tokens().to_vec(),
        tensors: entries,
    };
    let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

fn truncated(expected: usize, found: usize) -> CheckpointError {
    CheckpointError::Truncated { expected, found }
}

/// Parse a checkpoint. With `expected` set, every tensor shape is checked
/// against that configuration before anything is built.
pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < PREFIX_LEN {
        return Err(truncated(PREFIX_LEN, bytes.len()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|h| h.checked_add(PREFIX_LEN))
        .ok_or_else(|| CheckpointError::Header(format!("header length {header_len} overflows")))?;
    if bytes.len() < header_end {
        return Err(truncated(header_end, bytes.len()));
    }
    let header: Header = serde_json::from_slice(&bytes[PREFIX_LEN..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.format_version != version {
        return Err(CheckpointError::Header(format!(
            "header says version {} but prefix says {version}",
            header.format_version
        )));
    }

    let mut cursor = 0usize;
    for e in &header.tensors {
        let count: usize = e.shape.iter().product();
        if e.offset != cursor || e.length != count * 8 {
            return Err(CheckpointError::Header(format!(
                "tensor {} occupies [{}, +{}) but should start at {cursor} with {} bytes",
                e.name,
                e.offset,
                e.length,
                count * 8
            )));
        }
        cursor += e.length;
    }
    let payload_end = header_end + cursor;
    let total = payload_end + 4;
    if bytes.len() < total {
        return Err(truncated(total, bytes.len()));
    }
    if bytes.len() > total {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after checksum",
            bytes.len() - total
        )));
    }
    let payload = &bytes[header_end..payload_end];
    let stored = u32::from_le_bytes(bytes[payload_end..total].try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(CheckpointError::Checksum { stored, computed });
    }

    let mut seen = std::collections::HashSet::new();
    for e in &header.tensors {
        if !PARAM_NAMES.contains(&e.name.as_str()) {
            return Err(CheckpointError::Header(format!("unknown tensor {}", e.name)));
        }
        if !seen.insert(e.name.as_str()) {
            return Err(CheckpointError::Header(format!("tensor {} appears twice", e.name)));
        }
    }
    if let Some(missing) = PARAM_NAMES.iter().find(|n| !seen.contains(*n)) {
        return Err(CheckpointError::Header(format!("missing tensor {missing}")));
    }

    let shape_config = expected.unwrap_or(&header.model);
    let shapes = ModelParams::shapes_for(shape_config);
    for e in &header.tensors {
        let i = PARAM_NAMES.iter().position(|n| *n == e.name).unwrap();
        if e.shape != shapes[i] {
            return Err(CheckpointError::ShapeMismatch {
                name: e.name.clone(),
                found: e.shape.clone(),
                expected: shapes[i].clone(),
            });
        }
    }
    if let Some(cfg) = expected {
        if *cfg != header.model {
            return Err(CheckpointError::ConfigMismatch(format!(
                "checkpoint model config {:?} differs from {:?}",
                header.model, cfg
            )));
        }
    }

    let named = header
        .tensors
        .iter()
        .map(|e| {
            let data = payload[e.offset..e.offset + e.length]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape.clone(), data).map_err(|err| CheckpointError::Header(err.to_string()))?;
            Ok((e.name.clone(), t))
        })
        .collect::<Result<Vec<_>, CheckpointError>>()?;
    let vocab = Vocab::from_tokens(header.vocab).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let params = ModelParams::from_named(header.model, vocab, named)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    Ok(Checkpoint {
        params,
        train: header.train,
    })
}

/// Write atomically (temp file in the same directory, then rename).
pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, train: Option<&TrainConfig>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params, train)?;
    let io = |e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(io(e).into());
    }
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    load_checkpoint_as(path, None)
}

/// Load, requiring the stored shapes to match `expected` when given.
pub fn load_checkpoint_as(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(decode(&bytes, expected)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParams {
        let cfg = ModelConfig {
            d_p: 8,
            n_r: 3,
            patch_size: 4,
            image_side: 8,
            latent_dim: 4,
            vocab_size: 16,
            max_tokens: 6,
            ..ModelConfig::default()
        };
        let vocab = Vocab::build(["red coral reef"], 16);
        ModelParams::init(cfg, vocab, 1.0 / 0.07, 3).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = small();
        let train = TrainConfig::default();
        let bytes = encode(&p, Some(&train)).unwrap();
        let c = decode(&bytes, None).unwrap();
        assert_eq!(c.params, p);
        assert_eq!(c.train.as_ref(), Some(&train));
        assert_eq!(encode(&c.params, c.train.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let bytes = encode(&small(), None).unwrap();
        let mut bad = bytes.clone();
        let i = bad.len() - 20;
        bad[i] ^= 0x01;
        assert!(matches!(decode(&bad, None), Err(CheckpointError::Checksum { .. })));
    }

    #[test]
    fn distinct_errors() {
        let bytes = encode(&small(), None).unwrap();
        assert!(matches!(decode(b"PNG!", None), Err(CheckpointError::BadMagic)));
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(decode(&v, None), Err(CheckpointError::Version { found: 9, .. })));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 9], None),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut cfg = small().config;
        cfg.d_p = 4;
        assert!(matches!(
            decode(&bytes, Some(&cfg)),
            Err(CheckpointError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_params_refused() {
        let mut p = small();
        p.get_mut("pgve.W3").unwrap().data_mut()[0] = f64::NAN;
        assert!(encode(&p, None).is_err());
    }
}
