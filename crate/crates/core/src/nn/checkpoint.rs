//! Binary checkpoint container.
//!
//! Layout: the magic `PSEQCKPT`, a little-endian `u32` format version, a
//! `u64` byte length followed by a JSON header (model config plus the name
//! and shape of every tensor), then each tensor as raw little-endian `f64`
//! in header order. Values are stored bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Params;
use super::model::{Model, ModelConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PSEQCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let params = model.param_list();
    let header = Header {
        config: model.config.clone(),
        tensors: params.iter().map(|p| TensorInfo { name: p.name.clone(), shape: p.shape.clone() }).collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &params {
        for v in p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
    let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let mut model = Model::new(header.config, 0)?;
    let mut data = &body[hlen..];
    let params = model.param_list_mut();
    if params.len() != header.tensors.len() {
        return Err(bad("tensor count does not match the model layout"));
    }
    for (p, info) in params.into_iter().zip(&header.tensors) {
        if p.name != info.name || p.shape != info.shape {
            return Err(Error::Checkpoint(format!("tensor '{}' does not match the model layout", info.name)));
        }
        let need = 8 * p.data.len();
        if data.len() < need {
            return Err(bad("truncated tensor data"));
        }
        for (dst, chunk) in p.data.iter_mut().zip(data[..need].chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        data = &data[need..];
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    Ok(model)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
