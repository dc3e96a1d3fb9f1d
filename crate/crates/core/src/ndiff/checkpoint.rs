//! Tensor container: an 8-byte little-endian manifest length, a JSON
//! manifest, then the raw little-endian `f32` payload (row-major).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

use super::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

pub fn write_tensors<'a>(
    path: &Path,
    tensors: impl IntoIterator<Item = (String, &'a Tensor<f32>)>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&TensorManifest {
        dtype: "f32le".into(),
        tensors: entries,
    })?;
    let mut out = Vec::with_capacity(8 + manifest.len() + payload.len());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    fs::write(path, out).at(path)
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path).at(path)?;
    let corrupt = |what: &str| Error::InvalidArgument(format!("{}: {what}", path.display()));
    if bytes.len() < 8 {
        return Err(corrupt("truncated header"));
    }
    let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    let body = 8usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("manifest overruns file"))?;
    let manifest: TensorManifest = serde_json::from_slice(&bytes[8..body])?;
    if manifest.dtype != "f32le" {
        return Err(corrupt("unsupported dtype"));
    }
    let payload = &bytes[body..];
    manifest
        .tensors
        .into_iter()
        .map(|e| {
            let n: usize = e.shape.iter().product();
            let raw = payload
                .get(e.offset..e.offset + 4 * n)
                .ok_or_else(|| corrupt("tensor overruns payload"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Ok((e.name, Tensor::new(e.shape, data)?))
        })
        .collect()
}
