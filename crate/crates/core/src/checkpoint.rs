//! Model checkpoint files.
//!
//! Layout: `GITLCKPT`, a little-endian u64 header length, a JSON header, then
//! every tensor as row-major little-endian f32 in header order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"GITLCKPT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub kind: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub feature_dim: usize,
    pub keys: Vec<String>,
    /// Filled in by `write`.
    pub tensors: Vec<TensorMeta>,
}

pub struct Tensor<'a> {
    pub name: &'a str,
    pub data: &'a Array2<f64>,
}

impl<'a> Tensor<'a> {
    pub fn new(name: &'a str, data: &'a Array2<f64>) -> Self {
        Tensor { name, data }
    }
}

pub fn write(path: &Path, mut header: Header, tensors: &[Tensor]) -> Result<()> {
    header.tensors = tensors
        .iter()
        .map(|t| TensorMeta {
            name: t.name.to_owned(),
            shape: [t.data.nrows(), t.data.ncols()],
        })
        .collect();
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in tensors {
        for x in t.data.iter() {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(Header, Vec<(String, Array2<f64>)>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::data(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    let mut pos = 16 + hlen;
    let mut out = Vec::new();
    for meta in &header.tensors {
        let n = meta.shape[0] * meta.shape[1];
        let raw = bytes.get(pos..pos + 4 * n).ok_or_else(|| bad("truncated tensor data"))?;
        let vals: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        out.push((meta.name.clone(), Array2::from_shape_vec((meta.shape[0], meta.shape[1]), vals).unwrap()));
        pos += 4 * n;
    }
    if pos != bytes.len() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok((header, out))
}

pub fn take(tensors: &mut Vec<(String, Array2<f64>)>, name: &str) -> Result<Array2<f64>> {
    let i = tensors
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::data(format!("checkpoint is missing tensor {name}")))?;
    Ok(tensors.swap_remove(i).1)
}
