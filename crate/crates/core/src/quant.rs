//! Symmetric per-tensor int8 weight quantization.
//!
//! Weight matrices (rank-2 tensors) are stored as int8 plus one scale;
//! vectors (biases, norm parameters, the pooling query) stay float32.
//! Evaluation dequantizes back to float ("fake quant").

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{data_err, Error, Result};
use crate::mixer::{ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub values: Vec<i8>,
    pub scale: f32,
    pub shape: Vec<usize>,
}

/// `scale = max|w| / 127`, values rounded half away from zero. An all-zero
/// tensor gets scale 1.
pub fn quantize_tensor(w: &[f32], shape: Vec<usize>) -> Result<QuantTensor> {
    if let Some(bad) = w.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(alloc::format!("value {bad}")));
    }
    let max = w.iter().fold(0.0f32, |m, &v| m.max(v.abs()));
    if max == 0.0 {
        return Ok(QuantTensor { values: alloc::vec![0; w.len()], scale: 1.0, shape });
    }
    let ratio = 127.0 / f64::from(max);
    let values = w.iter().map(|&v| libm::round(f64::from(v) * ratio).clamp(-127.0, 127.0) as i8).collect();
    Ok(QuantTensor { values, scale: max / 127.0, shape })
}

pub fn dequantize(q: &QuantTensor) -> Vec<f32> {
    q.values.iter().map(|&v| f32::from(v) * q.scale).collect()
}

/// One tensor of a (possibly) quantized model.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Float { shape: Vec<usize>, data: Vec<f32> },
    Int8(QuantTensor),
}

impl StoredTensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Self::Float { shape, .. } => shape,
            Self::Int8(q) => &q.shape,
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match self {
            Self::Float { data, .. } => data.clone(),
            Self::Int8(q) => dequantize(q),
        }
    }
}

/// Named tensors in canonical order.
pub type TensorList = Vec<(String, StoredTensor)>;

/// Every tensor as float32.
pub fn float_tensors(params: &ModelParams<f32>) -> TensorList {
    let mut out = Vec::new();
    params.for_each_tensor(|t| out.push((t.name, StoredTensor::Float { shape: t.shape, data: t.data.to_vec() })));
    out
}

/// Weight matrices to int8; vectors kept as float32.
pub fn quantize_params(params: &ModelParams<f32>) -> Result<TensorList> {
    let mut out = Vec::new();
    let mut err = None;
    params.for_each_tensor(|t| {
        let stored = if t.shape.len() == 2 {
            match quantize_tensor(t.data, t.shape.clone()) {
                Ok(q) => StoredTensor::Int8(q),
                Err(_) => {
                    err.get_or_insert(Error::NonFinite(t.name.clone()));
                    return;
                }
            }
        } else {
            StoredTensor::Float { shape: t.shape, data: t.data.to_vec() }
        };
        out.push((t.name, stored));
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Rebuilds float parameters for `cfg` from named tensors, dequantizing int8
/// entries. Every tensor the config needs must be present with its shape.
pub fn params_from_tensors(cfg: &ModelConfig, tensors: &[(String, StoredTensor)]) -> Result<ModelParams<f32>> {
    let mut params = ModelParams::<f32>::zeros(cfg);
    let mut err = None;
    params.for_each_tensor_mut(|t| {
        if err.is_some() {
            return;
        }
        match tensors.iter().find(|(name, _)| *name == t.name) {
            None => err = Some(data_err!("model file is missing tensor `{}`", t.name)),
            Some((_, stored)) if stored.shape() != t.shape.as_slice() => {
                err = Some(data_err!("tensor `{}` has shape {:?}, expected {:?}", t.name, stored.shape(), t.shape))
            }
            Some((_, stored)) => t.data.copy_from_slice(&stored.to_f32()),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(params),
    }
}

pub fn describe(t: &StoredTensor) -> String {
    match t {
        StoredTensor::Float { .. } => "f32".to_string(),
        StoredTensor::Int8(q) => alloc::format!("int8 scale={}", q.scale),
    }
}
