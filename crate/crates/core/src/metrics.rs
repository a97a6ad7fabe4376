//! Image and heatmap quality metrics.

use serde::ser::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::image::RgbImage;

pub const SSIM_WINDOW: usize = 8;

/// Mean squared difference over all elements.
pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

fn same_size(a: &RgbImage, b: &RgbImage, op: &'static str) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.height, a.width],
            rhs: vec![b.height, b.width],
        });
    }
    Ok(())
}

pub fn image_mse(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_size(a, b, "image_mse")?;
    mse(&a.data, &b.data)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    let m = image_mse(a, b)?;
    Ok(psnr_from_mse(m, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

/// Mean SSIM over non-overlapping 8×8 windows of the luma channel.
/// Partial windows at the right and bottom edges are skipped.
pub fn ssim(a: &RgbImage, b: &RgbImage, peak: f64) -> Result<f64> {
    same_size(a, b, "ssim")?;
    ssim_gray(&a.luma(), &b.luma(), a.width, a.height, peak)
}

pub fn ssim_gray(a: &[f64], b: &[f64], width: usize, height: usize, peak: f64) -> Result<f64> {
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {width}x{height}"
        )));
    }
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::InvalidArgument("ssim buffer size does not match dimensions".into()));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in (0..=height - SSIM_WINDOW).step_by(SSIM_WINDOW) {
        for wx in (0..=width - SSIM_WINDOW).step_by(SSIM_WINDOW) {
            let idx = |dy: usize, dx: usize| (wy + dy) * width + wx + dx;
            let (mut ma, mut mb) = (0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    ma += a[idx(dy, dx)];
                    mb += b[idx(dy, dx)];
                }
            }
            ma /= n;
            mb /= n;
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let da = a[idx(dy, dx)] - ma;
                    let db = b[idx(dy, dx)] - mb;
                    va += da * da;
                    vb += db * db;
                    cov += da * db;
                }
            }
            va /= n;
            vb /= n;
            cov /= n;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// A metric value that serializes `+inf` as the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Score(pub f64);

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else if self.0 > 0.0 {
            s.serialize_str("inf")
        } else if self.0 < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: Score,
    pub ssim: f64,
    pub mse_color: f64,
    pub mse_heat: f64,
    pub pck: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct MeanMetrics {
    pub psnr: Score,
    pub ssim: f64,
    pub mse_color: f64,
    pub mse_heat: f64,
    pub pck: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean: MeanMetrics,
    pub pck_alpha: f64,
    pub sigma_g: f64,
    pub tau: f64,
    pub eval_samples: usize,
}

impl MeanMetrics {
    /// Averages per-view values. PSNR is averaged in dB.
    pub fn of(views: &[ViewMetrics]) -> MeanMetrics {
        let n = views.len().max(1) as f64;
        let avg = |f: &dyn Fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            psnr: Score(avg(&|v| v.psnr.0)),
            ssim: avg(&|v| v.ssim),
            mse_color: avg(&|v| v.mse_color),
            mse_heat: avg(&|v| v.mse_heat),
            pck: avg(&|v| v.pck),
        }
    }
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}
