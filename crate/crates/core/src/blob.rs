//! Raw tensor blobs and the JSON manifest entries that describe them.
//!
//! A blob is a headerless little-endian array, row-major, either `f32` or
//! `i32`. Its manifest entry carries the relative file name, dtype and shape;
//! 1-D label vectors use a single-element shape.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub file: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl BlobRef {
    pub fn matrix(file: impl Into<String>, rows: usize, cols: usize) -> Self {
        BlobRef {
            file: file.into(),
            dtype: DType::F32,
            shape: vec![rows, cols],
        }
    }

    pub fn vector(file: impl Into<String>, dtype: DType, len: usize) -> Self {
        BlobRef {
            file: file.into(),
            dtype,
            shape: vec![len],
        }
    }

    fn element_count(&self) -> usize {
        self.shape.iter().product()
    }
}

fn read_bytes(dir: &Path, blob: &BlobRef, field: &str) -> Result<Vec<u8>> {
    let path = dir.join(&blob.file);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = blob.element_count() * 4;
    if bytes.len() != expected {
        return Err(Error::shape(format!(
            "{field}: manifest shape {:?} needs {expected} bytes but {} holds {}",
            blob.shape,
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

/// Reads an `f32` blob as a 2-D matrix, rejecting non-finite entries.
pub fn read_matrix(dir: &Path, blob: &BlobRef, field: &str) -> Result<Array2<f64>> {
    if blob.dtype != DType::F32 {
        return Err(Error::shape(format!("{field}: expected dtype f32")));
    }
    let (rows, cols) = match blob.shape.as_slice() {
        [r, c] => (*r, *c),
        other => {
            return Err(Error::shape(format!(
                "{field}: expected a 2-D shape, got {other:?}"
            )))
        }
    };
    let bytes = read_bytes(dir, blob, field)?;
    let mut data = Vec::with_capacity(rows * cols);
    for chunk in bytes.chunks_exact(4) {
        let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !x.is_finite() {
            return Err(Error::NonFinite(field.to_string()));
        }
        data.push(x as f64);
    }
    Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::shape(format!("{field}: {e}")))
}

/// Reads a 1-D `f32` blob.
pub fn read_f32_vector(dir: &Path, blob: &BlobRef, field: &str) -> Result<Vec<f64>> {
    if blob.dtype != DType::F32 || blob.shape.len() != 1 {
        return Err(Error::shape(format!("{field}: expected a 1-D f32 blob")));
    }
    let bytes = read_bytes(dir, blob, field)?;
    let mut out = Vec::with_capacity(blob.shape[0]);
    for chunk in bytes.chunks_exact(4) {
        let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !x.is_finite() {
            return Err(Error::NonFinite(field.to_string()));
        }
        out.push(x as f64);
    }
    Ok(out)
}

/// Reads a 1-D `i32` label blob. Range checks are the caller's business.
pub fn read_labels(dir: &Path, blob: &BlobRef, field: &str) -> Result<Vec<i64>> {
    if blob.dtype != DType::I32 || blob.shape.len() != 1 {
        return Err(Error::shape(format!("{field}: expected a 1-D i32 blob")));
    }
    let bytes = read_bytes(dir, blob, field)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]) as i64)
        .collect())
}

pub fn write_matrix(dir: &Path, file: &str, m: &Array2<f64>) -> Result<BlobRef> {
    let mut bytes = Vec::with_capacity(m.len() * 4);
    for &x in m.iter() {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write(dir, file, &bytes)?;
    Ok(BlobRef::matrix(file, m.nrows(), m.ncols()))
}

pub fn write_f32_vector(dir: &Path, file: &str, v: &[f64]) -> Result<BlobRef> {
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for &x in v {
        bytes.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write(dir, file, &bytes)?;
    Ok(BlobRef::vector(file, DType::F32, v.len()))
}

pub fn write_labels(dir: &Path, file: &str, labels: &[usize]) -> Result<BlobRef> {
    let mut bytes = Vec::with_capacity(labels.len() * 4);
    for &y in labels {
        bytes.extend_from_slice(&(y as i32).to_le_bytes());
    }
    write(dir, file, &bytes)?;
    Ok(BlobRef::vector(file, DType::I32, labels.len()))
}

fn write(dir: &Path, file: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(file);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("manifest types always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
