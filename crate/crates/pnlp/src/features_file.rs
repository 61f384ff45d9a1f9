//! Projected features dumped for reuse by several models.
//!
//! Little-endian: magic `PNLPFEAT`, version `u32`, example count `u64`,
//! token width `u32`, window `u32`, columns `u32`, then per example the
//! number of tokens `u32` and per token its non-zero count `u32` followed by
//! `(row u32, value f32)` pairs.

use std::fs;
use std::path::Path;

use pnlp_core::FeatureMatrix;

use crate::binary::{put_u32, put_u64, Reader};
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"PNLPFEAT";
pub const VERSION: u32 = 1;

pub fn encode(features: &[FeatureMatrix]) -> Result<Vec<u8>> {
    let (width, window, cols) = match features.first() {
        Some(f) => (f.token_width(), f.window(), f.cols()),
        None => (0, 0, 0),
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u64(&mut out, features.len() as u64);
    put_u32(&mut out, width as u32);
    put_u32(&mut out, window as u32);
    put_u32(&mut out, cols as u32);
    for f in features {
        if (f.token_width(), f.window(), f.cols()) != (width, window, cols) {
            return Err(CliError::Usage("feature matrices in one file must share their shape".into()));
        }
        put_u32(&mut out, f.valid_len() as u32);
        for token in f.token_features() {
            put_u32(&mut out, token.len() as u32);
            for &(row, value) in token {
                put_u32(&mut out, row);
                out.extend_from_slice(&value.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<FeatureMatrix>, String> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err("not a features file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported features version {version}"));
    }
    let count = r.u64()?;
    let width = r.len_u32()?;
    let window = r.len_u32()?;
    let cols = r.len_u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let tokens = r.len_u32()?;
        if tokens > cols {
            return Err(format!("{tokens} tokens exceed {cols} columns"));
        }
        let mut feats = Vec::with_capacity(tokens);
        for _ in 0..tokens {
            let nnz = r.len_u32()?;
            if nnz > width {
                return Err(format!("{nnz} non-zeros exceed token width {width}"));
            }
            let mut entries = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                entries.push((r.u32()?, r.f32()?));
            }
            feats.push(entries);
        }
        out.push(FeatureMatrix::from_token_features(width, window, cols, feats).map_err(|e| e.to_string())?);
    }
    r.finish()?;
    Ok(out)
}

pub fn write(path: &Path, features: &[FeatureMatrix]) -> Result<()> {
    fs::write(path, encode(features)?).map_err(CliError::io(path))
}

pub fn read(path: &Path) -> Result<Vec<FeatureMatrix>> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    decode(&bytes).map_err(|e| CliError::file(path, e))
}
