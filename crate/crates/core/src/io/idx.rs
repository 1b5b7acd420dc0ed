//! Reader for the IDX format used by MNIST-style image sets.

use std::path::Path;

use crate::error::{Error, Result};
use crate::ot::EmpiricalMeasure;
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{what}: truncated header")))
}

/// Parses an image file into `(count, rows * cols)` pixels rescaled to `[-1, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!("images: magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let d = rows * cols;
    let payload = &bytes[16..];
    if payload.len() != n * d {
        return Err(Error::Format(format!("images: header declares {} bytes, found {}", n * d, payload.len())));
    }
    Tensor::matrix(n, d, payload.iter().map(|&p| p as f64 / 127.5 - 1.0).collect())
}

/// Parses a label file into class indices.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!("labels: magic {magic:#010x}, expected {LABEL_MAGIC:#010x}")));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format(format!("labels: header declares {n} bytes, found {}", payload.len())));
    }
    Ok(payload.to_vec())
}

pub(crate) fn load_idx_parts(images_path: &Path, labels_path: Option<&Path>) -> Result<(EmpiricalMeasure, Option<Tensor>)> {
    let images = parse_idx_images(&std::fs::read(images_path)?)?;
    if images.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let labels = match labels_path {
        None => None,
        Some(p) => {
            let classes = parse_idx_labels(&std::fs::read(p)?)?;
            if classes.len() != images.rows() {
                return Err(Error::Format(format!("{} labels for {} images", classes.len(), images.rows())));
            }
            let k = classes.iter().copied().max().unwrap_or(0) as usize + 1;
            let mut data = vec![0.0; classes.len() * k];
            for (i, &c) in classes.iter().enumerate() {
                data[i * k + c as usize] = 1.0;
            }
            Some(Tensor::matrix(classes.len(), k, data)?)
        }
    };
    Ok((EmpiricalMeasure::uniform(images)?, labels))
}

/// Loads an IDX image file as equal-weight atoms in `[-1, 1]^(rows*cols)`.
/// With a label file, one-hot labels (width = largest label + 1) are
/// appended to every atom.
pub fn load_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<EmpiricalMeasure> {
    let (features, labels) = load_idx_parts(images_path, labels_path)?;
    match labels {
        None => Ok(features),
        Some(l) => EmpiricalMeasure::uniform(features.atoms().concat_cols(&l)?),
    }
}
