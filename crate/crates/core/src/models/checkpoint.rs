//! Binary checkpoint: magic, version, JSON header, raw little-endian `f64`s.
//!
//! ```text
//! b"IMPSUPCK" | u32 version | u64 header_len | header JSON | f64 LE × Σ numel
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, ModelGraph, Param, Role};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IMPSUPCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub role: Role,
    pub arch: ArchitectureConfig,
    pub seed: u64,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(model: &ModelGraph, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        role: model.role(),
        arch: *model.arch(),
        seed: model.seed(),
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + 8 * model.param_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params() {
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |what: &str| Error::Contract(format!("{}: {what}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(&format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes
        .get(20..)
        .filter(|b| b.len() >= header_len)
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(&body[..header_len])?;
    let mut data = body[header_len..].chunks_exact(8);
    let mut params = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let numel: usize = entry.shape.iter().product();
        let values: Vec<f64> = data
            .by_ref()
            .take(numel)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if values.len() != numel {
            return Err(corrupt(&format!("truncated data for {}", entry.name)));
        }
        params.push(Param {
            name: entry.name.clone(),
            value: Tensor::new(&entry.shape, values)?,
        });
    }
    if data.next().is_some() || !data.remainder().is_empty() {
        return Err(corrupt("trailing bytes after tensor data"));
    }
    ModelGraph::from_parts(header.arch, header.role, header.seed, params)
}
