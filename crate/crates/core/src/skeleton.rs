//! Joint extraction from heatmaps and skeleton scoring.
//!
//! Each channel is blurred to build a binary mask (`blurred >= tau`); the
//! joint is the peak of the unblurred channel inside that mask. Ties go to
//! the smallest `(v, u)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Vec3};
use crate::dataset::joint_pixel;
use crate::error::{Error, Result};
use crate::heatmap::HeatmapStack;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonParams {
    /// Blur spread in pixels.
    pub sigma_g: f64,
    /// Mask threshold on the blurred channel.
    pub tau: f64,
}

impl Default for SkeletonParams {
    fn default() -> Self {
        SkeletonParams { sigma_g: 1.5, tau: 0.3 }
    }
}

impl SkeletonParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_g > 0.0 && self.sigma_g.is_finite()) {
            return Err(Error::Config(format!("sigma_g must be positive, got {}", self.sigma_g)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must be in (0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint2D {
    pub u: f64,
    pub v: f64,
    pub confidence: f64,
    pub present: bool,
}

impl Joint2D {
    pub const ABSENT: Joint2D = Joint2D {
        u: 0.0,
        v: 0.0,
        confidence: 0.0,
        present: false,
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton2D {
    pub joints: Vec<Joint2D>,
    pub bones: Vec<(usize, usize)>,
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

fn blur_pass(src: &[f64], dst: &mut [f64], len: usize, stride: usize, count: usize, line_stride: usize, kernel: &[f64]) {
    let r = (kernel.len() / 2) as isize;
    for line in 0..count {
        let base = line * line_stride;
        for i in 0..len as isize {
            let (mut acc, mut wsum) = (0.0, 0.0);
            let lo = (i - r).max(0);
            let hi = (i + r).min(len as isize - 1);
            for j in lo..=hi {
                let w = kernel[(j - i + r) as usize];
                acc += w * src[base + j as usize * stride];
                wsum += w;
            }
            dst[base + i as usize * stride] = acc / wsum;
        }
    }
}

/// Separable Gaussian blur of a row-major `width × height` map. Taps that
/// fall outside the map are dropped and the rest renormalized.
pub fn gaussian_blur(map: &[f64], width: usize, height: usize, sigma_g: f64) -> Vec<f64> {
    assert_eq!(map.len(), width * height, "map size");
    assert!(sigma_g > 0.0, "sigma_g must be positive");
    let kernel = gaussian_kernel(sigma_g);
    let mut rows = vec![0.0; map.len()];
    blur_pass(map, &mut rows, width, 1, height, width, &kernel);
    let mut out = vec![0.0; map.len()];
    blur_pass(&rows, &mut out, height, width, width, 1, &kernel);
    out
}

/// Peak of `channel` within the mask `blur(channel) >= tau`, or `None` when
/// the mask is empty.
pub fn extract_joint(channel: &[f64], width: usize, height: usize, params: &SkeletonParams) -> Option<Joint2D> {
    let blurred = gaussian_blur(channel, width, height, params.sigma_g);
    let mut best: Option<usize> = None;
    for i in 0..channel.len() {
        if blurred[i] >= params.tau && best.is_none_or(|b| channel[i] > channel[b]) {
            best = Some(i);
        }
    }
    best.map(|i| Joint2D {
        u: (i % width) as f64,
        v: (i / width) as f64,
        confidence: channel[i].clamp(0.0, 1.0),
        present: true,
    })
}

pub fn extract_skeleton(stack: &HeatmapStack, bones: &[(usize, usize)], params: &SkeletonParams) -> Result<Skeleton2D> {
    if let Some(&(a, b)) = bones.iter().find(|&&(a, b)| a >= stack.joints || b >= stack.joints) {
        return Err(Error::InvalidArgument(format!(
            "bone ({a}, {b}) out of range for {} joints",
            stack.joints
        )));
    }
    let joints = (0..stack.joints)
        .map(|k| extract_joint(stack.channel(k), stack.width, stack.height, params).unwrap_or(Joint2D::ABSENT))
        .collect();
    Ok(Skeleton2D {
        joints,
        bones: bones.to_vec(),
    })
}

/// Ground-truth 2D skeleton: projected joints, present when the rounded
/// projection is on the image.
pub fn project_skeleton(joints3d: &[Vec3], bones: &[(usize, usize)], cam: &Camera) -> Skeleton2D {
    let joints = joints3d
        .iter()
        .map(|&j| match (joint_pixel(cam, j), cam.project(j)) {
            (Some(_), Some(p)) => Joint2D {
                u: p.u,
                v: p.v,
                confidence: 1.0,
                present: true,
            },
            _ => Joint2D::ABSENT,
        })
        .collect();
    Skeleton2D {
        joints,
        bones: bones.to_vec(),
    }
}

/// Diagonal of the bounding box of the present joints, 0 if none.
pub fn bbox_diagonal(skel: &Skeleton2D) -> f64 {
    let present: Vec<&Joint2D> = skel.joints.iter().filter(|j| j.present).collect();
    if present.is_empty() {
        return 0.0;
    }
    let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for j in present {
        u0 = u0.min(j.u);
        u1 = u1.max(j.u);
        v0 = v0.min(j.v);
        v1 = v1.max(j.v);
    }
    (u1 - u0).hypot(v1 - v0)
}

/// Fraction of ground-truth joints that are predicted within
/// `alpha · ref_scale` pixels. With no present ground-truth joints the
/// score is 1.
pub fn pck(pred: &Skeleton2D, gt: &Skeleton2D, alpha: f64, ref_scale: f64) -> Result<f64> {
    if pred.joints.len() != gt.joints.len() {
        return Err(Error::InvalidArgument(format!(
            "pck needs equal joint counts, got {} and {}",
            pred.joints.len(),
            gt.joints.len()
        )));
    }
    if !(ref_scale > 0.0) || !(alpha > 0.0) {
        return Err(Error::InvalidArgument("pck needs positive alpha and ref_scale".into()));
    }
    let radius = alpha * ref_scale;
    let mut total = 0usize;
    let mut hits = 0usize;
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        if !g.present {
            continue;
        }
        total += 1;
        if p.present && (p.u - g.u).hypot(p.v - g.v) <= radius {
            hits += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}

#[derive(Serialize, Deserialize)]
struct JointRecord {
    k: usize,
    u: f64,
    v: f64,
    confidence: f64,
    present: bool,
}

#[derive(Serialize, Deserialize)]
struct SkeletonFile {
    sigma_g: f64,
    tau: f64,
    joints: Vec<JointRecord>,
    bones: Vec<[usize; 2]>,
}

impl Skeleton2D {
    pub fn to_json(&self, params: &SkeletonParams) -> String {
        let file = SkeletonFile {
            sigma_g: params.sigma_g,
            tau: params.tau,
            joints: self
                .joints
                .iter()
                .enumerate()
                .map(|(k, j)| JointRecord {
                    k,
                    u: j.u,
                    v: j.v,
                    confidence: j.confidence,
                    present: j.present,
                })
                .collect(),
            bones: self.bones.iter().map(|&(a, b)| [a, b]).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("skeleton serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<(Skeleton2D, SkeletonParams)> {
        let file: SkeletonFile =
            serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("skeleton JSON: {e}")))?;
        let mut joints = vec![Joint2D::ABSENT; file.joints.len()];
        for r in file.joints {
            let slot = joints
                .get_mut(r.k)
                .ok_or_else(|| Error::InvalidArgument(format!("joint index {} out of range", r.k)))?;
            *slot = Joint2D {
                u: r.u,
                v: r.v,
                confidence: r.confidence,
                present: r.present,
            };
        }
        let skel = Skeleton2D {
            joints,
            bones: file.bones.iter().map(|b| (b[0], b[1])).collect(),
        };
        Ok((skel, SkeletonParams { sigma_g: file.sigma_g, tau: file.tau }))
    }

    pub fn save_json(&self, params: &SkeletonParams, path: &Path) -> Result<()> {
        fs::write(path, self.to_json(params)).map_err(|e| Error::io(path, e))
    }

    /// SVG drawing of the bones between present joints, optionally over a
    /// background image referenced by `image_href`.
    pub fn to_svg(&self, width: usize, height: usize, image_href: Option<&str>) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
            w = width,
            h = height
        );
        if let Some(href) = image_href {
            let _ = writeln!(
                s,
                r#"  <image href="{href}" x="0" y="0" width="{width}" height="{height}" style="image-rendering:pixelated"/>"#
            );
        }
        // pixel (u, v) covers [u, u+1) so its center sits at u + 0.5
        for &(a, b) in &self.bones {
            let (ja, jb) = (self.joints[a], self.joints[b]);
            if ja.present && jb.present {
                let _ = writeln!(
                    s,
                    r#"  <line x1="{}" y1="{}" x2="{}" y2="{}" stroke="lime" stroke-width="0.6"/>"#,
                    ja.u + 0.5,
                    ja.v + 0.5,
                    jb.u + 0.5,
                    jb.v + 0.5
                );
            }
        }
        for j in self.joints.iter().filter(|j| j.present) {
            let _ = writeln!(
                s,
                r#"  <circle cx="{}" cy="{}" r="0.8" fill="red"/>"#,
                j.u + 0.5,
                j.v + 0.5
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
