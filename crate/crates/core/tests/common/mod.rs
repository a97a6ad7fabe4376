//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hfnerf::autodiff::{Tape, Tensor};
use hfnerf::camera::{Camera, Ray};
use hfnerf::config::RunConfig;
use hfnerf::dataset::{generate_dataset, load_dataset, Dataset, GenOptions};
use hfnerf::encoding::{FeatureMap, SourceView};
use hfnerf::field::{FieldConfig, FieldParams};
use hfnerf::rendering::render_rays;
use hfnerf::skeleton::SkeletonParams;
use hfnerf::training::loss_vars;

/// Running-transmittance compositing loop: `(out, Σw, w, T)`.
pub fn composite_oracle(sig: &[f64], del: &[f64], vals: &[Vec<f64>]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
    let m = vals.first().map_or(0, Vec::len);
    let mut out = vec![0.0; m];
    let mut trans = 1.0;
    let (mut ws, mut ts) = (Vec::new(), Vec::new());
    for i in 0..sig.len() {
        ts.push(trans);
        let alpha = 1.0 - (-sig[i] * del[i]).exp();
        let w = trans * alpha;
        for c in 0..m {
            out[c] += w * vals[i][c];
        }
        ws.push(w);
        trans *= 1.0 - alpha;
    }
    (out, ws.iter().sum(), ws, ts)
}

/// Dense 2-D Gaussian blur; taps outside the map are dropped and the
/// remaining weights renormalized.
pub fn blur_oracle(map: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let g = |d: i64| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp();
    let mut out = vec![0.0; w * h];
    for v in 0..h as i64 {
        for u in 0..w as i64 {
            let (mut acc, mut ws) = (0.0, 0.0);
            for dv in -r..=r {
                for du in -r..=r {
                    let (x, y) = (u + du, v + dv);
                    if x >= 0 && y >= 0 && x < w as i64 && y < h as i64 {
                        let wt = g(du) * g(dv);
                        acc += wt * map[(y * w as i64 + x) as usize];
                        ws += wt;
                    }
                }
            }
            out[(v * w as i64 + u) as usize] = acc / ws;
        }
    }
    out
}

/// Masked argmax by exhaustive search; ties go to the smallest `(v, u)`.
/// Returns `(u, v, peak)`.
pub fn extract_oracle(ch: &[f64], w: usize, h: usize, p: &SkeletonParams) -> Option<(usize, usize, f64)> {
    let blurred = blur_oracle(ch, w, h, p.sigma_g);
    let mut cands: Vec<(usize, usize, f64)> = (0..w * h)
        .filter(|&i| blurred[i] >= p.tau)
        .map(|i| (i / w, i % w, ch[i]))
        .collect();
    let max = cands.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    cands.retain(|c| c.2 == max);
    cands.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    cands.first().map(|&(v, u, x)| (u, v, x))
}

/// Largest deviations seen by [`fd_check`].
#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub failures: usize,
    pub worst_abs: f64,
    /// Over entries whose gradient magnitude is at least `abs_tol`.
    pub worst_rel: f64,
    pub significant: usize,
    pub first_failure: Option<String>,
}

/// Central differences on every scalar of `params` against `analytic`.
/// An entry passes when its relative error is below `rel_tol` or its
/// absolute error below `abs_tol`.
pub fn fd_check(
    params: &mut FieldParams,
    analytic: &[Tensor],
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
    mut loss: impl FnMut(&FieldParams) -> f64,
) -> FdReport {
    let mut report = FdReport::default();
    let names: Vec<String> = params.params.names().map(str::to_string).collect();
    for (p, name) in names.iter().enumerate() {
        for i in 0..analytic[p].len() {
            let x0 = params.params.at(p).value.data()[i];
            params.params.get_mut(name).unwrap().value.data_mut()[i] = x0 + h;
            let up = loss(params);
            params.params.get_mut(name).unwrap().value.data_mut()[i] = x0 - h;
            let down = loss(params);
            params.params.get_mut(name).unwrap().value.data_mut()[i] = x0;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[p].data()[i];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            report.worst_abs = report.worst_abs.max(abs);
            if a.abs().max(numeric.abs()) >= abs_tol {
                report.worst_rel = report.worst_rel.max(rel);
                report.significant += 1;
            }
            if !(rel < rel_tol || abs < abs_tol) {
                report.failures += 1;
                report.first_failure.get_or_insert_with(|| format!("{name}[{i}]: analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    report
}

pub fn tiny_field(width: usize) -> FieldConfig {
    FieldConfig {
        trunk_width: width,
        head_width: width,
        ..FieldConfig::default()
    }
}

/// Random features attached to a camera on the +z axis.
pub fn random_source(seed: u64, dim: usize, size: usize) -> SourceView {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..size * size * dim).map(|_| rng.gen::<f64>()).collect();
    SourceView {
        camera: Camera::look_at([0.3, 0.4, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.8, size, size).unwrap(),
        features: FeatureMap::new(size, size, dim, values).unwrap(),
    }
}

/// Rays from random points on a sphere of radius 3 aimed near the origin,
/// clipped to the scene cube.
pub fn random_cube_rays(rng: &mut ChaCha8Rng, n: usize) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(n);
    while rays.len() < n {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s = (1.0 - z * z).sqrt();
        let origin = [3.0 * s * phi.cos(), 3.0 * s * phi.sin(), 3.0 * z];
        let target = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let d = [target[0] - origin[0], target[1] - origin[1], target[2] - origin[2]];
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let ray = Ray { origin, direction: [d[0] / len, d[1] / len, d[2] / len], near: 0.05, far: 100.0 };
        if let Some(r) = ray.clip_to_box(-1.0, 1.0) {
            rays.push(r);
        }
    }
    rays
}

/// Targets for the composite loss over `rays`.
pub struct LossCase {
    pub rays: Vec<Ray>,
    pub source: SourceView,
    pub color: Tensor,
    pub heat: Tensor,
    pub n_samples: usize,
    pub jitter_seed: u64,
    pub lambda_h: f64,
}

impl LossCase {
    pub fn random(seed: u64, field: &FieldConfig, rays: usize, n_samples: usize) -> LossCase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rays_v = random_cube_rays(&mut rng, rays);
        let color = (0..rays * 3).map(|_| rng.gen::<f64>()).collect();
        let heat = (0..rays * field.joints).map(|_| rng.gen::<f64>()).collect();
        LossCase {
            rays: rays_v,
            source: random_source(seed + 1, field.feature_dim, 16),
            color: Tensor::new(vec![rays, 3], color).unwrap(),
            heat: Tensor::new(vec![rays, field.joints], heat).unwrap(),
            n_samples,
            jitter_seed: seed + 2,
            lambda_h: 0.5,
        }
    }

    /// Total loss and, when asked, its gradient for every parameter.
    pub fn eval(&self, params: &FieldParams, want_grads: bool) -> (f64, Vec<Tensor>) {
        let tape = Tape::new();
        let bound = if want_grads { params.bind(&tape) } else { params.bind_frozen(&tape) };
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        let out = render_rays(&bound, &self.rays, Some(&self.source), self.n_samples, true, &mut rng).unwrap();
        let (total, terms) = loss_vars(&out, self.color.clone(), self.heat.clone(), self.lambda_h).unwrap();
        if !want_grads {
            return (terms.total, Vec::new());
        }
        let grads = tape.backward(&total).unwrap();
        (terms.total, bound.vars.iter().map(|v| grads.get_or_zeros(v)).collect())
    }
}

/// Gives every bias a random value so no parameter sits at its init.
pub fn perturb_biases(params: &mut FieldParams, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, p) in params.params.iter_mut() {
        if name.ends_with(".b") {
            for x in p.value.data_mut() {
                *x = rng.gen_range(-scale..scale);
            }
        }
    }
}

pub fn make_dataset(dir: &Path, opts: &GenOptions) -> Dataset {
    generate_dataset(opts, dir).unwrap();
    load_dataset(dir).unwrap()
}

pub fn run_config(pairs: &[(&str, &str)]) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in pairs {
        cfg.set(k, v).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

/// Byte-for-byte comparison of two directory trees.
pub fn same_tree(a: &Path, b: &Path) -> Result<usize, String> {
    let mut files = 0;
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut other: Vec<_> = std::fs::read_dir(b).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    other.sort();
    if names != other {
        return Err(format!("{} and {} list different entries", a.display(), b.display()));
    }
    for n in names {
        let (pa, pb) = (a.join(&n), b.join(&n));
        if pa.is_dir() {
            files += same_tree(&pa, &pb)?;
        } else {
            if std::fs::read(&pa).unwrap() != std::fs::read(&pb).unwrap() {
                return Err(format!("{} differs", pa.display()));
            }
            files += 1;
        }
    }
    Ok(files)
}
