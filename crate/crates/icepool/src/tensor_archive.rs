//! A small binary container for named f64 tensors.
//!
//! Layout: the magic bytes `ICET`, a little-endian u32 format version, a
//! little-endian u64 manifest length, a JSON manifest listing each
//! tensor's name, shape, and offset into the data blob, then the blob of
//! little-endian f64 values in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ICET";
const VERSION: u32 = 1;

/// A named tensor: shape and row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line: 0,
        message: message.into(),
    }
}

/// Writes tensors to `path`. Names must be unique and each tensor's
/// shape must multiply out to its data length.
pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut manifest = Vec::with_capacity(tensors.len());
    let mut offset = 0usize;
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::InvalidArgument(format!(
                "tensor {:?} has shape {:?} ({expected} values) but {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        if manifest.iter().any(|e: &ManifestEntry| e.name == t.name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate tensor name {:?}",
                t.name
            )));
        }
        manifest.push(ManifestEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            len: t.data.len(),
        });
        offset += t.data.len();
    }
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::InvalidArgument(format!("manifest serialization failed: {e}")))?;

    let mut bytes =
        Vec::with_capacity(4 + 4 + 8 + manifest_bytes.len() + offset * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&manifest_bytes);
    for t in tensors {
        for &value in &t.data {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads all tensors from `path`, in the order they were written.
pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    if !path.is_file() {
        return Err(Error::MissingFile {
            path: path.to_path_buf(),
        });
    }
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[0..4] != MAGIC {
        return Err(corrupt(path, "not a tensor archive (bad magic bytes)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(
            path,
            format!("unsupported archive version {version}, expected {VERSION}"),
        ));
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let blob_start = 16 + manifest_len;
    if bytes.len() < blob_start {
        return Err(corrupt(path, "manifest is truncated"));
    }
    let manifest: Vec<ManifestEntry> = serde_json::from_slice(&bytes[16..blob_start])
        .map_err(|e| corrupt(path, format!("manifest is not valid JSON: {e}")))?;
    let blob = &bytes[blob_start..];
    if blob.len() % 8 != 0 {
        return Err(corrupt(path, "data blob is not a whole number of f64s"));
    }
    let total = blob.len() / 8;

    let mut tensors = Vec::with_capacity(manifest.len());
    for entry in manifest {
        let expected: usize = entry.shape.iter().product();
        if expected != entry.len {
            return Err(corrupt(
                path,
                format!(
                    "tensor {:?} declares shape {:?} but length {}",
                    entry.name, entry.shape, entry.len
                ),
            ));
        }
        let end = entry.offset.checked_add(entry.len).filter(|&e| e <= total);
        let Some(end) = end else {
            return Err(corrupt(
                path,
                format!("tensor {:?} extends past the data blob", entry.name),
            ));
        };
        let data: Vec<f64> = (entry.offset..end)
            .map(|i| f64::from_le_bytes(blob[i * 8..i * 8 + 8].try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(entry.name, entry.shape, data));
    }
    Ok(tensors)
}
