//! Pinhole cameras, rays, and stratified depth sampling.
//!
//! Cameras look down their local −z axis with +y up; pixel `(u, v)` has its
//! center at `(u + 0.5, v + 0.5)` and `v` grows downward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Rigid camera-to-world transform, row-major.
    pub cam_to_world: [[f64; 4]; 4],
    /// Default depth range for generated rays.
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
}

fn default_near() -> f64 {
    0.05
}

fn default_far() -> f64 {
    100.0
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub near: f64,
    pub far: f64,
}

/// Image-plane position of a point in front of the camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// One sample along a ray: depth `t` and the interval `delta` it covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthSample {
    pub t: f64,
    pub delta: f64,
}

const IDENTITY: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

impl Camera {
    /// Builds a camera and checks intrinsics and that the rotation block is
    /// orthonormal with determinant +1.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        cam_to_world: [[f64; 4]; 4],
    ) -> Result<Self> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_to_world,
            near: default_near(),
            far: default_far(),
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at the world origin looking down −z.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        Camera::new(fx, fy, cx, cy, width, height, IDENTITY)
    }

    /// Camera at `eye` looking at `target`, with a vertical field of view in
    /// radians and the principal point at the image center.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let back = normalize(sub(eye, target));
        let right = normalize(cross(up, back));
        let true_up = cross(back, right);
        let mut m = IDENTITY;
        for row in 0..3 {
            m[row][0] = right[row];
            m[row][1] = true_up[row];
            m[row][2] = back[row];
            m[row][3] = eye[row];
        }
        let f = 0.5 * height as f64 / (0.5 * fov_y).tan();
        Camera::new(f, f, 0.5 * width as f64, 0.5 * height as f64, width, height, m)
    }

    pub fn with_depth_range(mut self, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && near < far) {
            return Err(Error::InvalidArgument(format!(
                "camera depth range needs 0 < near < far, got {near}..{far}"
            )));
        }
        self.near = near;
        self.far = far;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths must be positive: {} {}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return bad(format!("principal point ({}, {}) outside image", self.cx, self.cy));
        }
        let m = &self.cam_to_world;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (d - expect).abs() > 1e-9 {
                    return bad("camera rotation is not orthonormal".into());
                }
            }
        }
        let cols = [
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ];
        if dot(cross(cols[0], cols[1]), cols[2]) < 0.0 {
            return bad("camera rotation has negative determinant".into());
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return bad(format!("depth range {}..{} invalid", self.near, self.far));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        let m = &self.cam_to_world;
        [m[0][3], m[1][3], m[2][3]]
    }

    fn to_world_dir(&self, d: Vec3) -> Vec3 {
        let m = &self.cam_to_world;
        [
            m[0][0] * d[0] + m[0][1] * d[1] + m[0][2] * d[2],
            m[1][0] * d[0] + m[1][1] * d[1] + m[1][2] * d[2],
            m[2][0] * d[0] + m[2][1] * d[1] + m[2][2] * d[2],
        ]
    }

    fn to_camera_dir(&self, d: Vec3) -> Vec3 {
        let m = &self.cam_to_world;
        [
            m[0][0] * d[0] + m[1][0] * d[1] + m[2][0] * d[2],
            m[0][1] * d[0] + m[1][1] * d[1] + m[2][1] * d[2],
            m[0][2] * d[0] + m[1][2] * d[1] + m[2][2] * d[2],
        ]
    }

    /// World-space viewing direction of the optical axis.
    pub fn forward(&self) -> Vec3 {
        self.to_world_dir([0.0, 0.0, -1.0])
    }

    /// Ray through the center of pixel `(u, v)`; fractional positions are
    /// allowed.
    pub fn ray_for_pixel(&self, u: f64, v: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&u) || !(0.0..self.height as f64).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let local = [
            (u + 0.5 - self.cx) / self.fx,
            -(v + 0.5 - self.cy) / self.fy,
            -1.0,
        ];
        Ok(Ray {
            origin: self.center(),
            direction: normalize(self.to_world_dir(local)),
            near: self.near,
            far: self.far,
        })
    }

    /// Pixel coordinates and depth of `p`, or `None` when `p` is at or
    /// behind the camera plane. Points outside the image are still returned.
    pub fn project(&self, p: Vec3) -> Option<Projection> {
        let local = self.to_camera_dir(sub(p, self.center()));
        let depth = -local[2];
        if !(depth > 1e-9) {
            return None;
        }
        Some(Projection {
            u: self.fx * local[0] / depth + self.cx - 0.5,
            v: -self.fy * local[1] / depth + self.cy - 0.5,
            depth,
        })
    }

    /// Whether a projected position lies on a pixel of the image.
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        (0.0..self.width as f64).contains(&u) && (0.0..self.height as f64).contains(&v)
    }
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.direction, t))
    }

    /// Restricts the depth range to the part inside the axis-aligned cube
    /// `[lo, hi]³`, or `None` if the ray misses it.
    pub fn clip_to_box(&self, lo: f64, hi: f64) -> Option<Ray> {
        let (mut t0, mut t1) = (self.near, self.far);
        for axis in 0..3 {
            let o = self.origin[axis];
            let d = self.direction[axis];
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
                continue;
            }
            let (a, b) = ((lo - o) / d, (hi - o) / d);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 < t1).then_some(Ray {
            near: t0,
            far: t1,
            ..*self
        })
    }
}

/// Stratified depths over `[near, far]`: bin midpoints, or one uniform draw
/// per bin when `jitter` is set.
pub fn stratified_samples(ray: &Ray, n: usize, jitter: bool, rng_seed: u64) -> Vec<DepthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    stratified_samples_with(ray, n, jitter, &mut rng)
}

pub fn stratified_samples_with<R: Rng>(ray: &Ray, n: usize, jitter: bool, rng: &mut R) -> Vec<DepthSample> {
    assert!(n >= 1, "stratified_samples needs n >= 1");
    let span = ray.far - ray.near;
    let bin = span / n as f64;
    let ts: Vec<f64> = (0..n)
        .map(|i| {
            let offset = if jitter { rng.gen::<f64>() } else { 0.5 };
            ray.near + (i as f64 + offset) * bin
        })
        .collect();
    ts.iter()
        .enumerate()
        .map(|(i, &t)| {
            let next = ts.get(i + 1).copied().unwrap_or(ray.far);
            DepthSample { t, delta: next - t }
        })
        .collect()
}
