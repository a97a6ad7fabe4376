//! Procedural multi-view human-figure scenes.
//!
//! A scene is a 16-joint stick figure dressed in capsules. Ground-truth
//! images are ray-traced analytically over a white backdrop, and the teacher
//! heatmaps are isotropic Gaussians centered on each projected joint.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{add, dot, norm, normalize, scale, sub, Camera, Ray, Vec3};
use crate::encoding::{builtin_pyramid_encoder, FeatureMap, SourceView};
use crate::error::{Error, Result};
pub use crate::heatmap::HeatmapStack;
use crate::image::RgbImage;

pub const JOINT_COUNT: usize = 16;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "pelvis",
    "spine_mid",
    "neck",
    "head",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
];

/// Parent → child pairs; a tree rooted at the pelvis. Parents always come
/// before their children.
pub const BONES: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (2, 4),
    (4, 5),
    (5, 6),
    (2, 7),
    (7, 8),
    (8, 9),
    (0, 10),
    (10, 11),
    (11, 12),
    (0, 13),
    (13, 14),
    (14, 15),
];

/// Canonical bone lengths, indexed like [`BONES`].
pub const CANONICAL_LENGTHS: [f64; 15] = [
    0.26, 0.26, 0.22, 0.17, 0.27, 0.24, 0.17, 0.27, 0.24, 0.10, 0.40, 0.38, 0.10, 0.40, 0.38,
];

const RADII: [f64; 15] = [
    0.11, 0.11, 0.09, 0.06, 0.065, 0.055, 0.06, 0.065, 0.055, 0.08, 0.08, 0.065, 0.08, 0.08, 0.065,
];

/// Rest direction of each bone, y up, x toward the figure's left.
const REST: [Vec3; 15] = [
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [-1.0, -0.2, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
    [1.0, -0.2, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, -1.0, 0.0],
];

/// Maximum swing (radians) about the x and z axes for each bone.
const SWING: [(f64, f64); 15] = [
    (0.20, 0.15),
    (0.25, 0.20),
    (0.30, 0.25),
    (0.10, 0.15),
    (0.90, 0.80),
    (1.20, 0.60),
    (0.10, 0.15),
    (0.90, 0.80),
    (1.20, 0.60),
    (0.05, 0.05),
    (0.60, 0.30),
    (0.70, 0.10),
    (0.05, 0.05),
    (0.60, 0.30),
    (0.70, 0.10),
];

const PALETTE: [[f64; 3]; 15] = [
    [0.80, 0.30, 0.28],
    [0.80, 0.30, 0.28],
    [0.92, 0.76, 0.62],
    [0.28, 0.45, 0.85],
    [0.28, 0.45, 0.85],
    [0.20, 0.32, 0.70],
    [0.88, 0.72, 0.20],
    [0.88, 0.72, 0.20],
    [0.75, 0.55, 0.12],
    [0.25, 0.62, 0.32],
    [0.25, 0.62, 0.32],
    [0.15, 0.45, 0.22],
    [0.62, 0.32, 0.74],
    [0.62, 0.32, 0.74],
    [0.46, 0.20, 0.58],
];

/// Largest joint coordinate magnitude after fitting.
pub const FIT_EXTENT: f64 = 0.9;

pub const RIG_RADIUS: f64 = 3.0;
const TRAIN_ELEVATIONS_DEG: [f64; 2] = [10.0, 30.0];
const TEST_ELEVATION_DEG: f64 = 20.0;
const FOV_Y_DEG: f64 = 45.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub joints3d: Vec<Vec3>,
    pub bones: Vec<(usize, usize)>,
    pub radii: Vec<f64>,
    pub albedo: Vec<[f64; 3]>,
    /// Uniform factor applied to canonical units to fit the cube.
    pub scale: f64,
}

fn rotate_x(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [v[0], c * v[1] - s * v[2], s * v[1] + c * v[2]]
}

fn rotate_y(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] + s * v[2], v[1], -s * v[0] + c * v[2]]
}

fn rotate_z(v: Vec3, a: f64) -> Vec3 {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// Seeded articulated figure: limb lengths jittered ±10%, bounded swings per
/// bone, a random heading, then centered and shrunk if needed to keep every
/// joint within [`FIT_EXTENT`].
pub fn generate_scene(seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4_E000);
    let yaw = rng.gen_range(-PI..PI);
    let mut joints = vec![[0.0; 3]; JOINT_COUNT];
    let mut albedo = Vec::with_capacity(BONES.len());
    for (i, &(parent, child)) in BONES.iter().enumerate() {
        let len = CANONICAL_LENGTHS[i] * rng.gen_range(0.9..=1.1);
        let (sx, sz) = SWING[i];
        let dir = normalize(REST[i]);
        let dir = rotate_z(rotate_x(dir, rng.gen_range(-sx..=sx)), rng.gen_range(-sz..=sz));
        joints[child] = add(joints[parent], scale(rotate_y(dir, yaw), len));
        let jitter: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-0.04..0.04));
        albedo.push(std::array::from_fn(|c| (PALETTE[i][c] + jitter[c]).clamp(0.0, 1.0)));
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for j in &joints {
        for c in 0..3 {
            lo[c] = lo[c].min(j[c]);
            hi[c] = hi[c].max(j[c]);
        }
    }
    let center: Vec3 = std::array::from_fn(|c| 0.5 * (lo[c] + hi[c]));
    let half = (0..3).map(|c| 0.5 * (hi[c] - lo[c])).fold(0.0, f64::max);
    let fit = if half > FIT_EXTENT { FIT_EXTENT / half } else { 1.0 };
    let joints3d = joints
        .iter()
        .map(|j| scale(sub(*j, center), fit).map(|x| x.clamp(-FIT_EXTENT, FIT_EXTENT)))
        .collect();
    Scene {
        seed,
        joints3d,
        bones: BONES.to_vec(),
        radii: RADII.iter().map(|r| r * fit).collect(),
        albedo,
        scale: fit,
    }
}

/// Nearest entry of a ray into a capsule, as `(t, outward normal)`.
pub fn ray_capsule(origin: Vec3, dir: Vec3, a: Vec3, b: Vec3, radius: f64) -> Option<(f64, Vec3)> {
    let mut best: Option<(f64, Vec3)> = None;
    let mut consider = |t: f64, n: Vec3| {
        if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };
    let ba = sub(b, a);
    let oa = sub(origin, a);
    let baba = dot(ba, ba);
    let bard = dot(ba, dir);
    let baoa = dot(ba, oa);
    let qa = baba - bard * bard;
    if qa > 1e-12 * baba {
        let qb = baba * dot(dir, oa) - baoa * bard;
        let qc = baba * dot(oa, oa) - baoa * baoa - radius * radius * baba;
        let disc = qb * qb - qa * qc;
        if disc >= 0.0 {
            let t = (-qb - disc.sqrt()) / qa;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba {
                let p = add(origin, scale(dir, t));
                let axis = add(a, scale(ba, y / baba));
                consider(t, scale(sub(p, axis), 1.0 / radius));
            }
        }
    }
    for center in [a, b] {
        let oc = sub(origin, center);
        let hb = dot(dir, oc);
        let c = dot(oc, oc) - radius * radius;
        let disc = hb * hb - c;
        if disc >= 0.0 {
            let t = -hb - disc.sqrt();
            let p = add(origin, scale(dir, t));
            consider(t, scale(sub(p, center), 1.0 / radius));
        }
    }
    best
}

/// Nearest capsule hit along a ray: `(t, normal, bone index)`.
pub fn trace(scene: &Scene, origin: Vec3, dir: Vec3) -> Option<(f64, Vec3, usize)> {
    let mut best: Option<(f64, Vec3, usize)> = None;
    for (i, &(p, c)) in scene.bones.iter().enumerate() {
        if let Some((t, n)) = ray_capsule(origin, dir, scene.joints3d[p], scene.joints3d[c], scene.radii[i]) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, n, i));
            }
        }
    }
    best
}

/// Direction toward the fixed light.
pub fn light_dir() -> Vec3 {
    normalize([1.0, 1.0, 1.0])
}

pub fn shade(scene: &Scene, ray: &Ray) -> [f64; 3] {
    match trace(scene, ray.origin, ray.direction) {
        Some((_, n, bone)) => {
            let k = 0.3 + 0.7 * dot(n, light_dir()).max(0.0);
            scene.albedo[bone].map(|a| a * k)
        }
        None => [1.0; 3],
    }
}

/// Ray-traced image of the scene, white where no capsule is hit.
pub fn render_ground_truth(scene: &Scene, cam: &Camera) -> RgbImage {
    RgbImage::from_fn(cam.width, cam.height, |u, v| {
        let ray = cam.ray_for_pixel(u as f64, v as f64).expect("pixel in range");
        shade(scene, &ray)
    })
}

/// Rounded pixel of a joint's projection when it lands on the image.
pub fn joint_pixel(cam: &Camera, joint: Vec3) -> Option<(usize, usize)> {
    let p = cam.project(joint)?;
    let (u, v) = (p.u.round(), p.v.round());
    (u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64).then_some((u as usize, v as usize))
}

/// Whether something other than the joint's own limbs hides it: the first
/// hit along the camera ray lies more than `tolerance` in front of it.
pub fn joint_occluded(scene: &Scene, cam: &Camera, k: usize, tolerance: f64) -> bool {
    let o = cam.center();
    let to = sub(scene.joints3d[k], o);
    let dist = norm(to);
    match trace(scene, o, scale(to, 1.0 / dist)) {
        Some((t, _, _)) => t < dist - tolerance,
        None => false,
    }
}

/// Analytic stand-in for a 2D pose detector: one Gaussian of spread
/// `sigma_h` pixels per joint, centered on its projection. Joints behind the
/// camera or off the image give all-zero channels.
pub fn teacher_heatmaps(scene: &Scene, cam: &Camera, sigma_h: f64, occlusion_cull: bool) -> HeatmapStack {
    assert!(sigma_h > 0.0, "sigma_h must be positive");
    let k_count = scene.joints3d.len();
    let mut stack = HeatmapStack::zeros(k_count, cam.width, cam.height);
    let inv = 1.0 / (2.0 * sigma_h * sigma_h);
    for (k, &joint) in scene.joints3d.iter().enumerate() {
        if joint_pixel(cam, joint).is_none() {
            continue;
        }
        if occlusion_cull && joint_occluded(scene, cam, k, 2.5 * max_radius(scene)) {
            continue;
        }
        let p = cam.project(joint).expect("checked by joint_pixel");
        for v in 0..cam.height {
            for u in 0..cam.width {
                let d2 = (u as f64 - p.u).powi(2) + (v as f64 - p.v).powi(2);
                stack.set(k, u, v, (-d2 * inv).exp().clamp(0.0, 1.0));
            }
        }
    }
    stack
}

fn max_radius(scene: &Scene) -> f64 {
    scene.radii.iter().copied().fold(0.0, f64::max)
}

/// Training ring at alternating elevations, then held-out views offset by
/// half a training step in azimuth. All cameras look at the origin.
pub fn camera_rig(n_train: usize, n_test: usize, size: usize) -> Result<Vec<Camera>> {
    let mut cams = Vec::with_capacity(n_train + n_test);
    let place = |azimuth: f64, elevation_deg: f64| -> Result<Camera> {
        let e = elevation_deg.to_radians();
        let eye = [
            RIG_RADIUS * e.cos() * azimuth.sin(),
            RIG_RADIUS * e.sin(),
            RIG_RADIUS * e.cos() * azimuth.cos(),
        ];
        Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], FOV_Y_DEG.to_radians(), size, size)
    };
    for i in 0..n_train {
        let az = 2.0 * PI * i as f64 / n_train as f64;
        cams.push(place(az, TRAIN_ELEVATIONS_DEG[i % 2])?);
    }
    let offset = if n_train > 0 { PI / n_train as f64 } else { 0.0 };
    for j in 0..n_test {
        let az = 2.0 * PI * j as f64 / n_test as f64 + offset;
        cams.push(place(az, TEST_ELEVATION_DEG)?);
    }
    Ok(cams)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub index: usize,
    pub split: Split,
    pub camera: Camera,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heatmaps: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub scene_id: u64,
    pub joints: usize,
    pub width: usize,
    pub height: usize,
    pub sigma_h: f64,
    /// View whose feature map conditions the field.
    pub source_view: usize,
    pub joints3d: Vec<Vec3>,
    pub bones: Vec<(usize, usize)>,
    pub views: Vec<ViewEntry>,
}

impl DatasetManifest {
    pub fn train_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.split_indices(Split::Test)
    }

    fn split_indices(&self, split: Split) -> Vec<usize> {
        self.views.iter().filter(|v| v.split == split).map(|v| v.index).collect()
    }
}

#[derive(Clone, Debug)]
pub struct GenOptions {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub size: usize,
    /// Teacher spread in pixels; defaults to 2 px at 64×64, scaled with size.
    pub sigma_h: Option<f64>,
    pub occlusion_cull: bool,
    /// Image file extension, `png` or `ppm`.
    pub image_ext: String,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions {
            seed: 7,
            n_train: 8,
            n_test: 2,
            size: 64,
            sigma_h: None,
            occlusion_cull: false,
            image_ext: "png".into(),
        }
    }
}

impl GenOptions {
    pub fn resolved_sigma_h(&self) -> f64 {
        self.sigma_h.unwrap_or(2.0 * self.size as f64 / 64.0)
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes the scene's images, teacher heatmaps and built-in feature maps
/// under `out`, plus `manifest.json`.
pub fn generate_dataset(opts: &GenOptions, out: &Path) -> Result<DatasetManifest> {
    if opts.n_train == 0 {
        return Err(Error::InvalidArgument("need at least one training view".into()));
    }
    if opts.size == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    if opts.image_ext != "png" && opts.image_ext != "ppm" {
        return Err(Error::InvalidArgument(format!("unknown image format {}", opts.image_ext)));
    }
    create_dir(&out.join("views"))?;
    let scene = generate_scene(opts.seed);
    let sigma_h = opts.resolved_sigma_h();
    let cams = camera_rig(opts.n_train, opts.n_test, opts.size)?;
    let mut views = Vec::with_capacity(cams.len());
    for (i, cam) in cams.into_iter().enumerate() {
        let split = if i < opts.n_train { Split::Train } else { Split::Test };
        let image = render_ground_truth(&scene, &cam).quantized();
        let image_rel = format!("views/view_{i:02}.{}", opts.image_ext);
        image.save(&out.join(&image_rel))?;
        let feat_rel = format!("views/feat_{i:02}.hffeat");
        builtin_pyramid_encoder(&image).save(&out.join(&feat_rel))?;
        let heat_rel = format!("views/heat_{i:02}.hfheat");
        teacher_heatmaps(&scene, &cam, sigma_h, opts.occlusion_cull).save(&out.join(&heat_rel))?;
        views.push(ViewEntry {
            index: i,
            split,
            camera: cam,
            image: image_rel,
            features: Some(feat_rel),
            heatmaps: Some(heat_rel),
        });
    }
    let manifest = DatasetManifest {
        scene_id: opts.seed,
        joints: JOINT_COUNT,
        width: opts.size,
        height: opts.size,
        sigma_h,
        source_view: 0,
        joints3d: scene.joints3d.clone(),
        bones: scene.bones.clone(),
        views,
    };
    write_manifest(&manifest, &out.join(MANIFEST_NAME))?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One loaded view.
#[derive(Clone, Debug)]
pub struct View {
    pub index: usize,
    pub split: Split,
    pub camera: Camera,
    pub image: RgbImage,
    pub features: Option<FeatureMap>,
    pub teacher: Option<HeatmapStack>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
    pub views: Vec<View>,
}

/// Accepts either the manifest file or the directory containing it.
pub fn resolve_manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads and validates every file the manifest references.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest_path = resolve_manifest_path(path);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let bad = |msg: String| Error::Dataset(msg);

    if manifest.joints3d.len() != manifest.joints {
        return Err(bad(format!(
            "manifest declares {} joints but lists {} joint positions",
            manifest.joints,
            manifest.joints3d.len()
        )));
    }
    if manifest.bones.iter().any(|&(a, b)| a >= manifest.joints || b >= manifest.joints) {
        return Err(bad("bone index out of range".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    let mut views = Vec::with_capacity(manifest.views.len());
    for entry in &manifest.views {
        if !seen.insert(entry.index) {
            return Err(bad(format!("view index {} listed twice", entry.index)));
        }
        entry
            .camera
            .validate()
            .map_err(|e| bad(format!("view {}: {e}", entry.index)))?;
        if (entry.camera.width, entry.camera.height) != (manifest.width, manifest.height) {
            return Err(bad(format!("view {}: camera size differs from manifest", entry.index)));
        }
        let image_path = root.join(&entry.image);
        let image = RgbImage::load(&image_path)?;
        if (image.width, image.height) != (manifest.width, manifest.height) {
            return Err(Error::format(
                &image_path,
                format!(
                    "image is {}x{}, manifest says {}x{}",
                    image.width, image.height, manifest.width, manifest.height
                ),
            ));
        }
        let features = match &entry.features {
            Some(rel) => {
                let p = root.join(rel);
                let fm = FeatureMap::load(&p)?;
                if (fm.width, fm.height) != (manifest.width, manifest.height) {
                    return Err(Error::format(&p, "feature map size differs from image size"));
                }
                Some(fm.with_source_view(entry.index))
            }
            None => None,
        };
        let teacher = match &entry.heatmaps {
            Some(rel) => {
                let p = root.join(rel);
                let hs = HeatmapStack::load(&p)?;
                if hs.joints != manifest.joints {
                    return Err(Error::format(
                        &p,
                        format!("heatmap stack has {} channels, manifest says {}", hs.joints, manifest.joints),
                    ));
                }
                if (hs.width, hs.height) != (manifest.width, manifest.height) {
                    return Err(Error::format(&p, "heatmap size differs from image size"));
                }
                if !hs.in_unit_range() {
                    return Err(Error::format(&p, "heatmap values outside [0, 1]"));
                }
                Some(hs)
            }
            None => None,
        };
        views.push(View {
            index: entry.index,
            split: entry.split,
            camera: entry.camera.clone(),
            image,
            features,
            teacher,
        });
    }
    let dataset = Dataset {
        manifest,
        root,
        views,
    };
    dataset.view(dataset.manifest.source_view)?;
    Ok(dataset)
}

impl Dataset {
    pub fn view(&self, index: usize) -> Result<&View> {
        self.views
            .iter()
            .find(|v| v.index == index)
            .ok_or_else(|| Error::Dataset(format!("no view with index {index}")))
    }

    pub fn split(&self, split: Split) -> Vec<&View> {
        self.views.iter().filter(|v| v.split == split).collect()
    }

    /// Camera and feature map that condition the field.
    pub fn source(&self) -> Result<SourceView> {
        let v = self.view(self.manifest.source_view)?;
        let features = v.features.clone().ok_or_else(|| {
            Error::Dataset(format!("source view {} has no feature map", v.index))
        })?;
        Ok(SourceView {
            camera: v.camera.clone(),
            features,
        })
    }

    /// Replaces every view's feature map with the built-in encoder's output
    /// for its image.
    pub fn rebuild_features(&mut self) {
        for v in &mut self.views {
            v.features = Some(builtin_pyramid_encoder(&v.image).with_source_view(v.index));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_fit() {
        assert_eq!(generate_scene(3), generate_scene(3));
        assert_ne!(generate_scene(3), generate_scene(4));
        for seed in 0..50 {
            let s = generate_scene(seed);
            assert_eq!(s.joints3d.len(), JOINT_COUNT);
            assert!(s.joints3d.iter().flatten().all(|x| x.abs() <= FIT_EXTENT));
        }
    }

    #[test]
    fn bone_lengths_stay_within_jitter() {
        for seed in 0..100 {
            let s = generate_scene(seed);
            for (i, &(p, c)) in s.bones.iter().enumerate() {
                let len = norm(sub(s.joints3d[c], s.joints3d[p])) / s.scale;
                let ratio = len / CANONICAL_LENGTHS[i];
                assert!((0.9 - 1e-9..=1.1 + 1e-9).contains(&ratio), "seed {seed} bone {i}: {ratio}");
            }
        }
    }

    #[test]
    fn bones_form_a_tree_rooted_at_pelvis() {
        let mut parent = [usize::MAX; JOINT_COUNT];
        for &(p, c) in &BONES {
            assert_eq!(parent[c], usize::MAX, "joint {c} has two parents");
            assert!(p == 0 || parent[p] != usize::MAX, "parent {p} defined after child");
            parent[c] = p;
        }
        assert_eq!(parent[0], usize::MAX);
        assert!(parent[1..].iter().all(|&p| p != usize::MAX));
    }

    #[test]
    fn miss_gives_white_background() {
        let scene = generate_scene(1);
        let ray = Ray { origin: [0.0, 5.0, 3.0], direction: [0.0, 0.0, -1.0], near: 0.1, far: 10.0 };
        assert_eq!(shade(&scene, &ray), [1.0; 3]);
    }

    #[test]
    fn head_on_capsule_hit_matches_sphere_cap() {
        let a = [0.1, -0.2, 0.3];
        let b = [0.1, 0.4, 0.3];
        let r = 0.07;
        // looking down the axis from above b
        let origin = [0.1, 2.0, 0.3];
        let (t, n) = ray_capsule(origin, [0.0, -1.0, 0.0], a, b, r).unwrap();
        // |o - b| = 1.6; entry of the cap sphere via the quadratic root
        let oc = sub(origin, b);
        let hb = dot([0.0, -1.0, 0.0], oc);
        let root = -hb - (hb * hb - dot(oc, oc) + r * r).sqrt();
        assert!((t - root).abs() < 1e-12);
        assert!((t - (1.6 - r)).abs() < 1e-12);
        assert!((n[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn side_hit_on_cylinder_body() {
        let (t, n) = ray_capsule([2.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0], 0.25).unwrap();
        assert!((t - 1.75).abs() < 1e-12);
        assert!((n[0] - 1.0).abs() < 1e-12);
        assert!(ray_capsule([2.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 1.0, 0.0], 0.25).is_none());
    }

    #[test]
    fn ground_truth_is_deterministic_and_has_background() {
        let scene = generate_scene(2);
        let cam = &camera_rig(4, 0, 24).unwrap()[1];
        let a = render_ground_truth(&scene, cam);
        assert_eq!(a, render_ground_truth(&scene, cam));
        let white = a.data.chunks(3).filter(|p| p == &[1.0, 1.0, 1.0]).count();
        assert!(white > 0 && white < 24 * 24);
    }

    fn integer_camera_for(joint: Vec3) -> Camera {
        // identity pose; shift the principal point so the joint projects
        // exactly onto pixel (10, 12)
        let depth = -joint[2];
        let cx = 10.5 - 40.0 * joint[0] / depth;
        let cy = 12.5 + 40.0 * joint[1] / depth;
        let mut cam = Camera::identity(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        cam.cx = cx;
        cam.cy = cy;
        cam.cam_to_world[2][3] = 0.0;
        cam
    }

    #[test]
    fn teacher_peak_and_spread() {
        let mut scene = generate_scene(5);
        for j in &mut scene.joints3d {
            j[2] -= 3.0;
        }
        let cam = integer_camera_for(scene.joints3d[3]);
        let p = cam.project(scene.joints3d[3]).unwrap();
        assert!((p.u - 10.0).abs() < 1e-12 && (p.v - 12.0).abs() < 1e-12);
        let stack = teacher_heatmaps(&scene, &cam, 2.0, false);
        assert!((stack.get(3, 10, 12) - 1.0).abs() < 1e-12);
        assert!((stack.get(3, 12, 12) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((stack.get(3, 10, 10) - 0.6065306597126334).abs() < 1e-12);
        assert!(stack.in_unit_range());
    }

    #[test]
    fn offscreen_joint_gives_zero_channel() {
        let mut scene = generate_scene(6);
        scene.joints3d[5] = [50.0, 0.0, -3.0];
        scene.joints3d[6] = [0.0, 0.0, 3.0];
        let cam = Camera::identity(30.0, 30.0, 16.0, 16.0, 32, 32).unwrap();
        let stack = teacher_heatmaps(&scene, &cam, 2.0, false);
        assert!(stack.channel(5).iter().all(|&x| x == 0.0));
        assert!(stack.channel(6).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn teacher_peak_is_rounded_projection() {
        let scene = generate_scene(7);
        for cam in camera_rig(8, 2, 64).unwrap() {
            let stack = teacher_heatmaps(&scene, &cam, 2.0, false);
            for (k, &j) in scene.joints3d.iter().enumerate() {
                let Some((u, v)) = joint_pixel(&cam, j) else { continue };
                let ch = stack.channel(k);
                let best = (0..ch.len()).fold(0, |b, i| if ch[i] > ch[b] { i } else { b });
                assert_eq!((best % 64, best / 64), (u, v));
            }
        }
    }

    #[test]
    fn rig_axes_pass_through_origin() {
        for cam in camera_rig(8, 2, 32).unwrap() {
            let o = cam.center();
            let f = cam.forward();
            let along = -dot(o, f);
            assert!(norm(add(o, scale(f, along))) < 1e-9);
            assert!((norm(o) - RIG_RADIUS).abs() < 1e-12);
        }
    }

    #[test]
    fn occlusion_cull_only_removes_channels() {
        let scene = generate_scene(7);
        for cam in camera_rig(8, 0, 32).unwrap() {
            let all = teacher_heatmaps(&scene, &cam, 1.0, false);
            let culled = teacher_heatmaps(&scene, &cam, 1.0, true);
            for k in 0..JOINT_COUNT {
                let c = culled.channel(k);
                assert!(c.iter().all(|&x| x == 0.0) || c == all.channel(k));
            }
        }
    }
}
