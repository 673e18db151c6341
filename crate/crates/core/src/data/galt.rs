//! GALT binary tensor container.
//!
//! ```text
//! offset  size     field
//! 0       4        magic "GALT"
//! 4       4        version, u32 LE, = 1
//! 8       4        rank, u32 LE, 1..=4
//! 12      4·rank   dims, u32 LE each, all >= 1
//! ...     4·numel  payload, f32 LE, row-major
//! ```
//!
//! Nothing follows the payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

const MAGIC: &[u8; 4] = b"GALT";
const VERSION: u32 = 1;

pub fn encode_galt(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| {
        Error::format(offset as u64, format!("file ends inside the {what} field ({} bytes total)", bytes.len()))
    })?;
    Ok(u32::from_le_bytes(chunk.try_into().unwrap()))
}

pub fn decode_galt(bytes: &[u8]) -> Result<Tensor<f32>> {
    match bytes.get(..4) {
        Some(m) if m == MAGIC => {}
        Some(m) => return Err(Error::format(0, format!("bad magic {m:?}, expected \"GALT\""))),
        None => return Err(Error::format(0, format!("file too short for magic ({} bytes)", bytes.len()))),
    }
    let version = read_u32(bytes, 4, "version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let rank = read_u32(bytes, 8, "rank")? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::format(8, format!("rank {rank} outside 1..={MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 12 + 4 * i;
        let d = read_u32(bytes, off, "dimension")? as usize;
        if d == 0 {
            return Err(Error::format(off as u64, format!("dimension {i} is zero")));
        }
        shape.push(d);
    }
    let start = 12 + 4 * rank;
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let expected = numel.and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(start));
    let Some(expected) = expected else {
        return Err(Error::format(12, format!("dimensions {shape:?} overflow")));
    };
    if bytes.len() != expected {
        let at = bytes.len().min(expected) as u64;
        return Err(Error::format(
            at,
            format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len()),
        ));
    }
    let data = bytes[start..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn save_galt(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_galt(t)).map_err(|e| Error::io(path, e))
}

pub fn load_galt(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_galt(&bytes)
}
