//! Reader for the IDX format MNIST ships in (optionally gzip-compressed).

use std::fs::File;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::fedsim::Dataset;
use crate::nn::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{file}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { file: String, found: u32, expected: u32 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("{file}: truncated, needed {needed} bytes but found {found}")]
    Truncated { file: String, needed: usize, found: usize },

    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

fn read_all(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io {
        file: path.display().to_string(),
        source,
    };
    let mut raw = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut raw)).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

/// Header check shared by both file kinds; returns the dims and payload.
fn parse<'a>(file: &str, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &'a [u8]), IdxError> {
    let header = 4 + 4 * ndims;
    let truncated = |needed| IdxError::Truncated {
        file: file.to_string(),
        needed,
        found: bytes.len(),
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(IdxError::BadMagic {
            file: file.to_string(),
            found,
            expected: magic,
        });
    }
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    let body = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| IdxError::DimMismatch(format!("{file}: dimensions overflow")))?;
    let needed = header.saturating_add(body);
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    Ok((dims, &bytes[header..needed]))
}

/// Parses an image/label pair already in memory. Pixels are scaled to [0, 1].
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, IdxError> {
    let (idims, pixels) = parse("images", images, IMAGES_MAGIC, 3)?;
    let (ldims, raw_labels) = parse("labels", labels, LABELS_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(IdxError::DimMismatch(format!(
            "{} images but {} labels",
            idims[0], ldims[0]
        )));
    }
    let width = idims[1] * idims[2];
    let x = Matrix::from_vec(idims[0], width, pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .map_err(|e| IdxError::DimMismatch(e.to_string()))?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(10);
    Dataset::new(x, labels, num_classes).map_err(|e| IdxError::DimMismatch(e.to_string()))
}

/// Loads an IDX image/label file pair; gzip is detected from the content.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, IdxError> {
    let images = read_all(images_path)?;
    let labels = read_all(labels_path)?;
    parse_idx(&images, &labels).map_err(|e| match e {
        IdxError::BadMagic { found, expected, .. } => IdxError::BadMagic {
            file: if expected == IMAGES_MAGIC { images_path } else { labels_path }
                .display()
                .to_string(),
            found,
            expected,
        },
        IdxError::Truncated { file, needed, found } => IdxError::Truncated {
            file: if file == "images" { images_path } else { labels_path }.display().to_string(),
            needed,
            found,
        },
        other => other,
    })
}
