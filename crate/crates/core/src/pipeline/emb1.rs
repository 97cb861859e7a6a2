//! EMB1 binary embedding dumps.
//!
//! Layout, all integers little-endian:
//!
//! | bytes        | field                                  |
//! |--------------|----------------------------------------|
//! | 4            | magic `EMB1`                           |
//! | 4            | version, `u32` = 1                     |
//! | 4 + 4 + 4    | `n`, `q`, `p` as `u32`                 |
//! | 2            | branch label length `L`, `u16`         |
//! | L            | branch label, UTF-8                    |
//! | 4·n·q·p      | `f32` payload, class, sample, dim order |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scatter::EmbeddingBatch;

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u32 = 1;

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
}

/// Parses an EMB1 image held in memory.
pub fn decode_emb1(bytes: &[u8]) -> Result<EmbeddingBatch> {
    let truncated_header = || Error::TruncatedPayload {
        expected: 22,
        found: bytes.len() as u64,
    };
    let magic: [u8; 4] = bytes.get(0..4).ok_or_else(truncated_header)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = read_u32(bytes, 4).ok_or_else(truncated_header)?;
    if version != VERSION {
        return Err(Error::BadVersion(version));
    }
    let n = read_u32(bytes, 8).ok_or_else(truncated_header)? as usize;
    let q = read_u32(bytes, 12).ok_or_else(truncated_header)? as usize;
    let p = read_u32(bytes, 16).ok_or_else(truncated_header)? as usize;
    let label_len = bytes
        .get(20..22)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .ok_or_else(truncated_header)?;
    if n < 2 || q < 2 || p < 1 {
        return Err(Error::InvariantViolation(format!(
            "header n={n} q={q} p={p} needs n >= 2, q >= 2, p >= 1"
        )));
    }
    let label_end = 22 + label_len;
    let label_bytes = bytes.get(22..label_end).ok_or(Error::TruncatedPayload {
        expected: label_end as u64,
        found: bytes.len() as u64,
    })?;
    let label = std::str::from_utf8(label_bytes)
        .map_err(|e| Error::InvariantViolation(format!("branch label is not UTF-8: {e}")))?
        .to_owned();

    let payload = &bytes[label_end..];
    let expected = 4u64 * n as u64 * q as u64 * p as u64;
    if (payload.len() as u64) < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }
    if payload.len() as u64 > expected {
        return Err(Error::InvariantViolation(format!(
            "{} trailing bytes after payload",
            payload.len() as u64 - expected
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation("payload contains non-finite values".into()));
    }
    EmbeddingBatch::new(n, q, p, data, Some(label))
}

/// Serializes `batch`; values are narrowed to `f32`.
pub fn encode_emb1(batch: &EmbeddingBatch) -> Result<Vec<u8>> {
    let label = batch.branch_label().unwrap_or("");
    let label_len = u16::try_from(label.len())
        .map_err(|_| Error::InvalidArgument(format!("branch label is {} bytes, max 65535", label.len())))?;
    let dims = [batch.n(), batch.q(), batch.p()]
        .map(|d| u32::try_from(d).map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32"))));
    let mut out = Vec::with_capacity(22 + label.len() + 4 * batch.data().len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in dims {
        out.extend_from_slice(&d?.to_le_bytes());
    }
    out.extend_from_slice(&label_len.to_le_bytes());
    out.extend_from_slice(label.as_bytes());
    for v in batch.data() {
        let narrowed = *v as f32;
        if !narrowed.is_finite() {
            return Err(Error::InvariantViolation(format!("{v} does not fit in f32")));
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

pub fn read_emb1(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_emb1(&bytes)
}

pub fn write_emb1(batch: &EmbeddingBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_emb1(batch)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}
