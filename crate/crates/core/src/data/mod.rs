//! Corpus plumbing: synthetic generation, manifests and image decoding.

pub mod image;
pub mod manifest;
pub mod synthetic;

pub use image::{load_image, ImageError};
pub use manifest::{
    load_manifest, parse_manifest, save_manifest, ImageRef, InlineImage, ManifestError,
    ManifestRecord,
};
pub use synthetic::{generate, write_corpus, SyntheticSample, SyntheticSpec};

use std::path::Path;

use crate::tensor::Tensor;
use crate::Result;

/// Load (or render, for inline synthetic references) the image of a record.
///
/// Inline images are rendered with the built-in class table and marker.
pub fn record_image(record: &ManifestRecord, manifest_dir: &Path, side: Option<usize>) -> Result<Tensor> {
    match &record.image {
        ImageRef::Path(_) => {
            let path = record.image_path(manifest_dir).expect("path reference");
            Ok(load_image(path, side)?)
        }
        ImageRef::Inline { synthetic } => {
            let classes = synthetic::default_classes();
            if synthetic.class >= classes.len() {
                return Err(crate::Error::Input(format!(
                    "record {}: inline class {} out of range",
                    record.id, synthetic.class
                )));
            }
            let marker = match synthetic.cell {
                Some(c) if c >= synthetic::GRID * synthetic::GRID => {
                    return Err(crate::Error::Input(format!(
                        "record {}: inline marker cell {c} out of range",
                        record.id
                    )))
                }
                Some(c) => Some((synthetic::MarkerSpec::default(), c)),
                None => None,
            };
            let img = synthetic::render_image(
                &classes[synthetic.class],
                synthetic.class,
                marker.as_ref().map(|(m, c)| (m, *c)),
                synthetic.seed,
                &synthetic::Layout::with_side(synthetic.side),
            );
            match side {
                Some(s) if s != synthetic.side => Ok(image::resize_nearest(&img, s, s)?),
                _ => Ok(img),
            }
        }
    }
}

/// Load every record's image in manifest order.
pub fn load_images(records: &[ManifestRecord], manifest_dir: &Path, side: Option<usize>) -> Result<Vec<Tensor>> {
    crate::par::map(records, |r| record_image(r, manifest_dir, side))
        .into_iter()
        .collect()
}
