//! On-disk fingerprint cache.
//!
//! Little-endian: magic `PNLPCACH`, version `u32`, vocabulary size `u64`,
//! hash count `u32`, width `u8` (32 or 64), then the row-major table.

use std::fs;
use std::path::Path;

use pnlp_core::projection::HashWidth;
use pnlp_core::FingerprintCache;

use crate::binary::Reader;
use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 8] = b"PNLPCACH";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8 + 4 + 1;

pub fn encode(cache: &FingerprintCache) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + cache.table_bytes());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(cache.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(cache.n_hashes() as u32).to_le_bytes());
    out.push(cache.width().bits());
    if let Some(t) = cache.raw_u64() {
        t.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    } else if let Some(t) = cache.raw_u32() {
        t.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<FingerprintCache, String> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err("not a fingerprint cache (bad magic)".into());
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported cache version {version}"));
    }
    let rows = usize::try_from(r.u64()?).map_err(|_| "vocabulary size overflows".to_string())?;
    let n = r.u32()? as usize;
    let width = HashWidth::from_bits(u32::from(r.u8()?)).map_err(|e| e.to_string())?;
    let count = rows.checked_mul(n).ok_or("table size overflows")?;
    let cache = match width {
        HashWidth::W64 => {
            let raw = r.take(count.checked_mul(8).ok_or("table size overflows")?)?;
            let values = raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect();
            FingerprintCache::from_raw_u64(rows, n, values)
        }
        HashWidth::W32 => {
            let raw = r.take(count.checked_mul(4).ok_or("table size overflows")?)?;
            let values = raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect();
            FingerprintCache::from_raw_u32(rows, n, values)
        }
    }
    .map_err(|e| e.to_string())?;
    r.finish()?;
    Ok(cache)
}

pub fn write(path: &Path, cache: &FingerprintCache) -> Result<()> {
    fs::write(path, encode(cache)).map_err(CliError::io(path))
}

/// Loads a cache and checks it against the vocabulary it will serve.
pub fn read(path: &Path, vocab_len: usize) -> Result<FingerprintCache> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let cache = decode(&bytes).map_err(|e| CliError::file(path, e))?;
    if cache.rows() != vocab_len {
        return Err(CliError::file(path, format!("cache covers {} units but the vocabulary has {vocab_len}", cache.rows())));
    }
    Ok(cache)
}
