//! IDX image/label files (the MNIST family encoding).
//!
//! Images: big-endian `0x00000803`, count, rows, cols, then `count·rows·cols`
//! unsigned bytes. Labels: `0x00000801`, count, then `count` bytes.

use std::fs;
use std::path::Path;

use super::{DataError, LabeledPoint, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an image file and its label file. Pixels are scaled to `[0, 1]`;
/// each image is flattened row-major.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Vec<LabeledPoint>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = read(images_path)?;
    let labels = read(labels_path)?;

    let header = Header::parse(images_path, &images, IMAGES_MAGIC, 4)?;
    let (count, rows, cols) = (header.dims[0], header.dims[1], header.dims[2]);
    let pixels = rows * cols;
    let body = header.body(images_path, &images, count * pixels)?;

    let label_header = Header::parse(labels_path, &labels, LABELS_MAGIC, 2)?;
    let label_count = label_header.dims[0];
    if label_count != count {
        return Err(DataError::CountMismatch {
            images: images_path.to_path_buf(),
            image_count: count,
            labels: labels_path.to_path_buf(),
            label_count,
        });
    }
    let label_body = label_header.body(labels_path, &labels, count)?;

    Ok(body
        .chunks_exact(pixels.max(1))
        .take(count)
        .zip(label_body)
        .map(|(img, &label)| LabeledPoint::new(img.iter().map(|&b| f64::from(b) / 255.0).collect(), f64::from(label)))
        .collect())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })
}

struct Header {
    /// Item count followed by any per-item dimensions.
    dims: Vec<usize>,
    len: usize,
}

impl Header {
    fn parse(path: &Path, bytes: &[u8], magic: u32, words: usize) -> Result<Self> {
        let len = 4 * words;
        if bytes.len() < len {
            return Err(DataError::TruncatedFile { path: path.to_path_buf(), expected: len, found: bytes.len() });
        }
        let word = |k: usize| u32::from_be_bytes(bytes[4 * k..4 * k + 4].try_into().expect("4-byte slice"));
        let found = word(0);
        if found != magic {
            return Err(DataError::BadMagic { path: path.to_path_buf(), found, expected: magic });
        }
        Ok(Header { dims: (1..words).map(|k| word(k) as usize).collect(), len })
    }

    fn body<'a>(&self, path: &Path, bytes: &'a [u8], expected: usize) -> Result<&'a [u8]> {
        let body = &bytes[self.len..];
        if body.len() < expected {
            return Err(DataError::TruncatedFile {
                path: path.to_path_buf(),
                expected: self.len + expected,
                found: bytes.len(),
            });
        }
        Ok(&body[..expected])
    }
}
