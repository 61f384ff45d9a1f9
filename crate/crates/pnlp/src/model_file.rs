//! Self-describing model container.
//!
//! Little-endian: magic `PNLPMODL`, version `u32`, metadata length `u32`,
//! metadata as UTF-8 JSON, tensor count `u32`, then per tensor: name length
//! `u32`, name, rank `u32`, dims `u64` each, type tag `u8` (0 = f32, 1 = int8
//! with one f32 scale) and the data.

use std::fs;
use std::path::{Path, PathBuf};

use pnlp_core::quant::{QuantTensor, StoredTensor, TensorList};
use pnlp_core::{ModelConfig, ProjectionConfig};
use serde::{Deserialize, Serialize};

use crate::binary::{put_u32, put_u64, Reader};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"PNLPMODL";
pub const VERSION: u32 = 1;
const TAG_F32: u8 = 0;
const TAG_INT8: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub model: ModelConfig,
    pub projection: ProjectionConfig,
    /// Output label strings in index order.
    pub labels: Vec<String>,
    pub vocab: PathBuf,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    pub hash_width: u32,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub best_metric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub meta: ModelMeta,
    pub tensors: TensorList,
}

impl ModelFile {
    pub fn is_quantized(&self) -> bool {
        self.tensors.iter().any(|(_, t)| matches!(t, StoredTensor::Int8(_)))
    }
}

pub fn encode(model: &ModelFile) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&model.meta).map_err(|e| CliError::Data(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    put_u32(&mut out, model.tensors.len() as u32);
    for (name, tensor) in &model.tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, tensor.shape().len() as u32);
        for &d in tensor.shape() {
            put_u64(&mut out, d as u64);
        }
        match tensor {
            StoredTensor::Float { data, .. } => {
                out.push(TAG_F32);
                data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            StoredTensor::Int8(q) => {
                out.push(TAG_INT8);
                out.extend_from_slice(&q.scale.to_le_bytes());
                out.extend(q.values.iter().map(|&v| v as u8));
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<ModelFile, String> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err("not a model file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported model version {version}"));
    }
    let meta_len = r.len_u32()?;
    let meta: ModelMeta = serde_json::from_slice(r.take(meta_len)?).map_err(|e| format!("metadata: {e}"))?;
    let count = r.len_u32()?;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = r.len_u32()?;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| "tensor name is not UTF-8".to_string())?.to_string();
        let rank = r.len_u32()?;
        if rank > 8 {
            return Err(format!("tensor `{name}` has implausible rank {rank}"));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or("tensor size overflows")?;
        let tensor = match r.u8()? {
            TAG_F32 => {
                let raw = r.take(len.checked_mul(4).ok_or("tensor size overflows")?)?;
                let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
                StoredTensor::Float { shape, data }
            }
            TAG_INT8 => {
                let scale = r.f32()?;
                let values = r.take(len)?.iter().map(|&b| b as i8).collect();
                StoredTensor::Int8(QuantTensor { values, scale, shape })
            }
            tag => return Err(format!("tensor `{name}` has unknown type tag {tag}")),
        };
        tensors.push((name, tensor));
    }
    r.finish()?;
    Ok(ModelFile { meta, tensors })
}

pub fn write(path: &Path, model: &ModelFile) -> Result<()> {
    fs::write(path, encode(model)?).map_err(CliError::io(path))
}

pub fn read(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(|e| CliError::file(path, e))
}
