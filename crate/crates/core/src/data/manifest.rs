//! Line-delimited JSON manifests: one [`ManifestRecord`] per line.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has an empty caption_gt")]
    EmptyCaption { line: usize, id: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A synthetic image rendered on demand instead of read from disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineImage {
    pub class: usize,
    pub seed: u64,
    pub side: usize,
    /// Marker grid cell, when the image carries one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    Path(String),
    Inline { synthetic: InlineImage },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: ImageRef,
    pub caption_gt: String,
    #[serde(default)]
    pub captions_gen: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keywords_kept: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_enriched: Option<String>,
    /// Fields this version does not know about, kept for rewriting.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl ManifestRecord {
    /// Resolve a relative image path against the manifest's directory.
    pub fn image_path(&self, manifest_dir: &Path) -> Option<PathBuf> {
        match &self.image {
            ImageRef::Path(p) => {
                let p = Path::new(p);
                Some(if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    manifest_dir.join(p)
                })
            }
            ImageRef::Inline { .. } => None,
        }
    }
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestRecord>, ManifestError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(raw).map_err(|e| ManifestError::Malformed {
                line,
                message: e.to_string(),
            })?;
        if rec.caption_gt.trim().is_empty() {
            return Err(ManifestError::EmptyCaption { line, id: rec.id });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(ManifestError::DuplicateId { line, id: rec.id });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>, ManifestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_manifest(&text)
}

pub fn to_jsonl(records: &[ManifestRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

/// Write atomically through a sibling temp file.
pub fn save_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<(), ManifestError> {
    let path = path.as_ref();
    let io = |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(to_jsonl(records).as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"id":"a","image":"img/a.ppm","caption_gt":"divers near rocks","captions_gen":["a coral reef"],"label":"coral","camera":{"iso":200}}"#;

    #[test]
    fn empty_file_is_empty_manifest() {
        assert!(parse_manifest("").unwrap().is_empty());
        assert!(parse_manifest("\n\n").unwrap().is_empty());
    }

    #[test]
    fn unknown_fields_survive_rewrite() {
        let recs = parse_manifest(LINE).unwrap();
        assert_eq!(recs[0].extra["camera"]["iso"], 200);
        let again = parse_manifest(&to_jsonl(&recs)).unwrap();
        assert_eq!(recs, again);
        assert_eq!(to_jsonl(&again).trim_end(), LINE);
    }

    #[test]
    fn missing_caption_names_line() {
        let text = format!("{LINE}\n{}\n", r#"{"id":"b","image":"x.ppm"}"#);
        match parse_manifest(&text) {
            Err(ManifestError::Malformed { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("caption_gt"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_caption_and_duplicates_rejected() {
        let empty = r#"{"id":"b","image":"x.ppm","caption_gt":"  "}"#;
        assert!(matches!(
            parse_manifest(empty),
            Err(ManifestError::EmptyCaption { line: 1, .. })
        ));
        let dup = format!("{LINE}\n{LINE}");
        assert!(matches!(
            parse_manifest(&dup),
            Err(ManifestError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn inline_image_parses() {
        let text = r#"{"id":"s","image":{"synthetic":{"class":2,"seed":9,"side":16}},"caption_gt":"x"}"#;
        let r = &parse_manifest(text).unwrap()[0];
        assert_eq!(
            r.image,
            ImageRef::Inline {
                synthetic: InlineImage {
                    class: 2,
                    seed: 9,
                    side: 16,
                    cell: None
                }
            }
        );
        assert!(r.image_path(Path::new(".")).is_none());
    }
}
