//! Per-joint heatmap stacks and their binary file format.
//!
//! File layout: magic `HFHEAT1\n`, then K, width, height as little-endian
//! u32, then K×H×W little-endian f32 values (channel-major, row-major).

use std::fs;
use std::path::Path;

use crate::autodiff::Reader;
use crate::error::{Error, Result};

pub const HEATMAP_MAGIC: &[u8; 8] = b"HFHEAT1\n";

/// `K` single-channel maps over an image, stored `[k][v][u]`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    pub joints: usize,
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(joints: usize, width: usize, height: usize) -> Self {
        HeatmapStack {
            joints,
            width,
            height,
            values: vec![0.0; joints * width * height],
        }
    }

    pub fn new(joints: usize, width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != joints * width * height {
            return Err(Error::InvalidArgument(format!(
                "heatmap stack {joints}x{width}x{height} needs {} values, got {}",
                joints * width * height,
                values.len()
            )));
        }
        Ok(HeatmapStack {
            joints,
            width,
            height,
            values,
        })
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, u: usize, v: usize) -> f64 {
        self.values[(k * self.height + v) * self.width + u]
    }

    pub fn set(&mut self, k: usize, u: usize, v: usize, x: f64) {
        self.values[(k * self.height + v) * self.width + u] = x;
    }

    /// All `K` values at one pixel.
    pub fn pixel(&self, u: usize, v: usize) -> Vec<f64> {
        (0..self.joints).map(|k| self.get(k, u, v)).collect()
    }

    pub fn in_unit_range(&self) -> bool {
        self.values.iter().all(|x| (0.0..=1.0).contains(x))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + 4 * self.values.len());
        buf.extend_from_slice(HEATMAP_MAGIC);
        for n in [self.joints, self.width, self.height] {
            buf.extend_from_slice(&(n as u32).to_le_bytes());
        }
        for &v in &self.values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(path, format!("heatmap stack: {msg}"));
        if bytes.len() < 8 || &bytes[..8] != HEATMAP_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut r = Reader { bytes, pos: 8 };
        let mut dims = [0usize; 3];
        for d in &mut dims {
            *d = r.u32().ok_or_else(|| bad("truncated header"))? as usize;
        }
        let [k, w, h] = dims;
        let n = k
            .checked_mul(w)
            .and_then(|x| x.checked_mul(h))
            .ok_or_else(|| bad("size overflow"))?;
        let raw = r.take(n * 4).ok_or_else(|| bad("truncated values"))?;
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        HeatmapStack::new(k, w, h, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        HeatmapStack::from_bytes(&bytes, path)
    }
}
