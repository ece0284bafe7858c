//! Flat binary container for encoded per-fragment arrays.
//!
//! Layout, little-endian: `b"FRGC"`, version `u32`, `M u32`, `D u32`,
//! mode `u32`, then `M * D` `f32` values row-major.

use std::io::{Read, Write};
use std::path::Path;

use crate::codec::ContourMode;
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"FRGC";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedCache {
    pub mode: ContourMode,
    /// `M x D` payload.
    pub values: Tensor,
}

pub fn write_cache(path: &Path, cache: &EncodedCache) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + 4 * cache.values.numel());
    write_cache_to(&mut buf, cache).map_err(|e| Error::io(path, e))?;
    crate::fsio::atomic_write(path, &buf)
}

pub fn read_cache(path: &Path) -> Result<EncodedCache> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|msg| Error::format(path, msg))
}

fn decode(bytes: &[u8]) -> std::result::Result<EncodedCache, String> {
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err("missing FRGC header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (version, m, d, mode) = (word(0), word(1) as usize, word(2) as usize, word(3));
    if version != CACHE_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let mode = ContourMode::from_code(mode).ok_or_else(|| format!("unknown mode {mode}"))?;
    let body = &bytes[20..];
    if body.len() != 4 * m * d {
        return Err(format!("expected {} payload bytes, found {}", 4 * m * d, body.len()));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let values = Tensor::from_vec(&[m, d], data).map_err(|e| e.to_string())?;
    Ok(EncodedCache { mode, values })
}

/// Writes the cache to any sink; used for in-memory round trips.
pub fn write_cache_to(mut w: impl Write, cache: &EncodedCache) -> std::io::Result<()> {
    let (m, d) = (cache.values.rows(), cache.values.cols());
    w.write_all(MAGIC)?;
    for v in [CACHE_VERSION, m as u32, d as u32, cache.mode.code()] {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in cache.values.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}
