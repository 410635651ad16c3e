//! Image decoding: binary PPM (P6, 8-bit) and the raw float tensor format.
//!
//! Raw tensor layout: magic `AQT1`, dimension count (u64 LE), each dimension
//! (u64 LE), then the float64 LE payload in row-major order.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const RAW_MAGIC: &[u8; 4] = b"AQT1";

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("unsupported image format (magic bytes {0:02x?})")]
    UnsupportedMagic(Vec<u8>),
    #[error("truncated image: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed image header: {0}")]
    Malformed(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, ImageError>;

fn dims3(img: &Tensor) -> Result<(usize, usize, usize)> {
    match img.shape() {
        &[h, w, c] => Ok((h, w, c)),
        other => Err(ImageError::Malformed(format!("expected H×W×C, got {other:?}"))),
    }
}

/// Decode an image file, optionally center-cropping to a square and
/// nearest-neighbor resizing to `side`.
pub fn load_image(path: impl AsRef<Path>, side: Option<usize>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let img = decode(&bytes)?;
    match side {
        Some(s) => {
            let (h, w, _) = dims3(&img)?;
            let cropped = center_crop(&img, h.min(w))?;
            if h.min(w) == s {
                Ok(cropped)
            } else {
                resize_nearest(&cropped, s, s)
            }
        }
        None => Ok(img),
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    match bytes.get(..2) {
        Some(b"P6") => decode_ppm(bytes),
        _ if bytes.starts_with(RAW_MAGIC) => decode_raw(bytes),
        _ => Err(ImageError::UnsupportedMagic(bytes.iter().take(4).copied().collect())),
    }
}

fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::Malformed("header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| ImageError::Malformed(format!("bad header number at byte {start}")))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::Malformed(format!("maxval {maxval} is not 8-bit")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::Malformed("missing whitespace after maxval".into()));
    }
    let payload = &bytes[pos + 1..];
    let expected = w * h * 3;
    if payload.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let scale = maxval as f64;
    let data = payload[..expected].iter().map(|&v| v as f64 / scale).collect();
    Tensor::new(vec![h, w, 3], data).map_err(|e| ImageError::Malformed(e.to_string()))
}

fn decode_raw(bytes: &[u8]) -> Result<Tensor> {
    let read_u64 = |at: usize| -> Result<u64> {
        let chunk = bytes.get(at..at + 8).ok_or(ImageError::Truncated {
            expected: at + 8,
            found: bytes.len(),
        })?;
        Ok(u64::from_le_bytes(chunk.try_into().expect("8 bytes")))
    };
    let ndims = read_u64(4)? as usize;
    if ndims > 8 {
        return Err(ImageError::Malformed(format!("{ndims} dimensions")));
    }
    let dims = (0..ndims)
        .map(|i| read_u64(12 + 8 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 12 + 8 * ndims;
    let count: usize = dims.iter().product();
    let expected = header + count * 8;
    if bytes.len() < expected {
        return Err(ImageError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[header..expected]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(dims, data).map_err(|e| ImageError::Malformed(e.to_string()))
}

pub fn encode_raw(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.shape().len() + 8 * t.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// 8-bit P6 encoding of an `H×W×3` image with values in `[0, 1]`.
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w, c) = dims3(img)?;
    if c != 3 {
        return Err(ImageError::Malformed(format!("P6 needs 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

/// Round to the 8-bit grid a P6 round trip would produce.
pub fn quantize(img: &Tensor) -> Tensor {
    let data = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
        .collect();
    Tensor::new(img.shape().to_vec(), data).expect("shape preserved")
}

pub fn center_crop(img: &Tensor, side: usize) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    if side > h || side > w {
        return Err(ImageError::Malformed(format!("cannot crop {h}×{w} to {side}")));
    }
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    let mut data = Vec::with_capacity(side * side * c);
    for y in top..top + side {
        let start = (y * w + left) * c;
        data.extend_from_slice(&img.data()[start..start + side * c]);
    }
    Tensor::new(vec![side, side, c], data).map_err(|e| ImageError::Malformed(e.to_string()))
}

/// Nearest-neighbor resampling; output pixel `(y, x)` reads source
/// `(⌊y·h/out_h⌋, ⌊x·w/out_w⌋)`.
pub fn resize_nearest(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let sy = y * h / out_h;
        for x in 0..out_w {
            let sx = x * w / out_w;
            let start = (sy * w + sx) * c;
            data.extend_from_slice(&img.data()[start..start + c]);
        }
    }
    Tensor::new(vec![out_h, out_w, c], data).map_err(|e| ImageError::Malformed(e.to_string()))
}

pub fn flip_horizontal(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    let mut data = Vec::with_capacity(img.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let start = (y * w + x) * c;
            data.extend_from_slice(&img.data()[start..start + c]);
        }
    }
    Ok(Tensor::new(vec![h, w, c], data).expect("shape preserved"))
}

pub fn flip_vertical(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims3(img)?;
    let mut data = Vec::with_capacity(img.len());
    for y in (0..h).rev() {
        data.extend_from_slice(&img.data()[y * w * c..(y + 1) * w * c]);
    }
    Ok(Tensor::new(vec![h, w, c], data).expect("shape preserved"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_ppm_decodes_exactly() {
        let mut bytes = b"P6\n# comment\n2 2\n255\n".to_vec();
        let px: [u8; 12] = [0, 51, 255, 1, 2, 3, 128, 64, 32, 200, 100, 50];
        bytes.extend_from_slice(&px);
        let img = decode(&bytes).unwrap();
        assert_eq!(img.shape(), &[2, 2, 3]);
        for (v, b) in img.data().iter().zip(px) {
            assert_eq!(*v, b as f64 / 255.0);
        }
    }

    #[test]
    fn truncated_ppm_is_reported() {
        let bytes = b"P6 2 2 255\n\x00\x01".to_vec();
        assert!(matches!(decode(&bytes), Err(ImageError::Truncated { expected: 12, found: 2 })));
    }

    #[test]
    fn unknown_magic_is_rejected() {
        assert!(matches!(decode(b"GIF89a"), Err(ImageError::UnsupportedMagic(_))));
        assert!(matches!(decode(b""), Err(ImageError::UnsupportedMagic(_))));
    }

    #[test]
    fn raw_round_trip_is_bit_exact() {
        let t = Tensor::new(vec![2, 3, 1], vec![0.1, -2.5, 1e-300, f64::MAX, 0.0, -0.0]).unwrap();
        let back = decode(&encode_raw(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_raw_is_reported() {
        let t = Tensor::zeros(&[2, 2, 1]);
        let bytes = encode_raw(&t);
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(ImageError::Truncated { .. })
        ));
    }

    #[test]
    fn nearest_resize_takes_top_left_of_blocks() {
        let img = Tensor::new(vec![4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let small = resize_nearest(&img, 2, 2).unwrap();
        assert_eq!(small.data(), &[0.0, 2.0, 8.0, 10.0]);
    }

    #[test]
    fn center_crop_keeps_middle() {
        let img = Tensor::new(vec![2, 4, 1], (0..8).map(f64::from).collect()).unwrap();
        let c = center_crop(&img, 2).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn flips_are_involutions() {
        let img = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let h = flip_horizontal(&img).unwrap();
        assert_eq!(&h.data()[..2], &[4.0, 5.0]);
        assert_eq!(flip_horizontal(&h).unwrap(), img);
        let v = flip_vertical(&img).unwrap();
        assert_eq!(&v.data()[..2], &[6.0, 7.0]);
        assert_eq!(flip_vertical(&v).unwrap(), img);
    }
}
