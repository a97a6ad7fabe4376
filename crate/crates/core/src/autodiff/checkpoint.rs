//! Binary parameter checkpoints.
//!
//! Layout: the magic `HFNERF1\n`, then one record per parameter until end of
//! file. A record is the name length (u32), the UTF-8 name, the rank (u32),
//! each dimension (u32) and the values as f64. All integers and floats are
//! little-endian.

use std::fs;
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HFNERF1\n";

pub fn encode_checkpoint(params: &[(String, Tensor)]) -> Vec<u8> {
    let payload: usize = params
        .iter()
        .map(|(n, t)| 8 + n.len() + 4 * t.rank() + 8 * t.len())
        .sum();
    let mut buf = Vec::with_capacity(CHECKPOINT_MAGIC.len() + payload);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for (name, t) in params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bad = |msg: &str| Error::format(path, format!("checkpoint: {msg}"));
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    let mut reader = Reader { bytes, pos: 8 };
    let mut out = Vec::new();
    while reader.pos < bytes.len() {
        let name_len = reader.u32().ok_or_else(|| bad("truncated name length"))? as usize;
        let name = reader
            .take(name_len)
            .ok_or_else(|| bad("truncated name"))?;
        let name = String::from_utf8(name.to_vec()).map_err(|_| bad("name is not UTF-8"))?;
        let rank = reader.u32().ok_or_else(|| bad("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(reader.u32().ok_or_else(|| bad("truncated dims"))? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = reader
            .take(n.checked_mul(8).ok_or_else(|| bad("size overflow"))?)
            .ok_or_else(|| bad(&format!("truncated values for {name}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_checkpoint(path: &Path, params: &[(String, Tensor)]) -> Result<()> {
    fs::write(path, encode_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
}
