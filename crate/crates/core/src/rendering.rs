//! Differentiable volume rendering of color and heatmap channels.
//!
//! Weights are `w_i = T_i·α_i` with `α_i = 1 − exp(−σ_i δ_i)` and
//! `T_i = exp(−Σ_{j<i} σ_j δ_j)`. The exclusive prefix sum is a matmul with a
//! strictly upper-triangular ones matrix, so the whole composite stays on the
//! tape. Heat logits are passed through a sigmoid per sample and share the
//! color weights; color is composited over white, heat over zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor, Var};
use crate::camera::{stratified_samples_with, Camera, Ray};
use crate::encoding::{point_feature_into, SourceView};
use crate::error::{Error, Result};
use crate::field::{FieldParams, RadianceField, SampleBatch};
use crate::heatmap::HeatmapStack;
use crate::image::RgbImage;

/// Half-extent of the cube that bounds every scene.
pub const SCENE_BOUND: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPixel {
    pub color: [f64; 3],
    pub heat: Vec<f64>,
    pub opacity: f64,
}

/// Result of [`composite`] for one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub out: Vec<f64>,
    pub opacity: f64,
    pub weights: Vec<f64>,
    /// Light reaching each sample, `T_i`.
    pub transmittance: Vec<f64>,
}

/// Composite on a tape for `rays` rays of `samples` samples each.
pub struct CompositeVars<'t> {
    /// `[rays, M]`
    pub out: Var<'t>,
    /// `[rays, 1]`
    pub opacity: Var<'t>,
    /// `[rays, samples]`
    pub weights: Var<'t>,
    /// `[rays, samples]`
    pub transmittance: Var<'t>,
}

/// Batched render on a tape.
pub struct RenderedRays<'t> {
    /// `[rays, 3]`, background included.
    pub color: Var<'t>,
    /// `[rays, K]`
    pub heat: Var<'t>,
    /// `[rays, 1]`
    pub opacity: Var<'t>,
}

pub struct RenderOutput {
    pub image: RgbImage,
    pub heatmaps: HeatmapStack,
    /// Row-major accumulated opacity.
    pub opacity: Vec<f64>,
}

/// Alpha-composites `sigma` (`[rays·samples, 1]` or `[rays, samples]`) with
/// per-sample `values` (`[rays·samples, M]`) using interval lengths
/// `deltas` (`[rays, samples]`).
pub fn composite_vars<'t>(sigma: &Var<'t>, deltas: &Tensor, values: &Var<'t>) -> Result<CompositeVars<'t>> {
    let tape = sigma.tape();
    let (rays, samples) = deltas.dims2().ok_or_else(|| Error::ShapeMismatch {
        op: "composite",
        lhs: deltas.shape().to_vec(),
        rhs: vec![],
    })?;
    let channels = values.shape().get(1).copied().unwrap_or(0);
    if sigma.value().len() != rays * samples || values.shape() != [rays * samples, channels] {
        return Err(Error::ShapeMismatch {
            op: "composite",
            lhs: sigma.shape().to_vec(),
            rhs: values.shape().to_vec(),
        });
    }
    let optical = sigma.reshape(&[rays, samples])?.mul(&tape.constant(deltas.clone()))?;
    let mut upper = Tensor::zeros(&[samples, samples]);
    for j in 0..samples {
        for i in j + 1..samples {
            upper.data_mut()[j * samples + i] = 1.0;
        }
    }
    let transmittance = optical.matmul(&tape.constant(upper))?.neg().exp();
    let alpha = tape
        .constant(Tensor::ones(&[rays, samples]))
        .add(&optical.neg().exp().neg())?;
    let weights = transmittance.mul(&alpha)?;
    let ones = tape.constant(Tensor::ones(&[samples, 1]));
    let opacity = weights.matmul(&ones)?;
    let mut columns = Vec::with_capacity(channels);
    for m in 0..channels {
        let v = values.slice_cols(m, 1)?.reshape(&[rays, samples])?;
        columns.push(weights.mul(&v)?.matmul(&ones)?);
    }
    let out = if columns.is_empty() {
        tape.constant(Tensor::zeros(&[rays, 0]))
    } else {
        Var::concat(&columns.iter().collect::<Vec<_>>())?
    };
    Ok(CompositeVars {
        out,
        opacity,
        weights,
        transmittance,
    })
}

/// Composites one ray: `values` has one row of `M` channels per sample.
pub fn composite(sigmas: &[f64], deltas: &[f64], values: &[Vec<f64>]) -> Result<Composite> {
    let n = sigmas.len();
    if deltas.len() != n || values.len() != n {
        return Err(Error::InvalidArgument(format!(
            "composite: {} sigmas, {} deltas, {} value rows",
            n,
            deltas.len(),
            values.len()
        )));
    }
    if sigmas.iter().chain(deltas).any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("composite: non-finite input".into()));
    }
    if sigmas.iter().any(|&s| s < 0.0) {
        return Err(Error::InvalidArgument("composite: negative density".into()));
    }
    if deltas.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidArgument("composite: negative interval".into()));
    }
    let m = values.first().map_or(0, Vec::len);
    if values.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidArgument("composite: ragged values".into()));
    }
    if n == 0 {
        return Ok(Composite {
            out: vec![0.0; m],
            opacity: 0.0,
            weights: vec![],
            transmittance: vec![],
        });
    }
    let tape = Tape::new();
    let sigma = tape.constant(Tensor::new(vec![n, 1], sigmas.to_vec())?);
    let vals = tape.constant(Tensor::new(vec![n, m], values.concat())?);
    let c = composite_vars(&sigma, &Tensor::new(vec![1, n], deltas.to_vec())?, &vals)?;
    Ok(Composite {
        out: c.out.value().data().to_vec(),
        opacity: c.opacity.value().item(),
        weights: c.weights.value().data().to_vec(),
        transmittance: c.transmittance.value().data().to_vec(),
    })
}

/// Renders a batch of rays. Every ray gets `n_samples` stratified samples
/// over its own `[near, far]`; jitter draws come from `rng` in ray order.
pub fn render_rays<'t, F: RadianceField<'t>, R: Rng>(
    field: &F,
    rays: &[Ray],
    source: Option<&SourceView>,
    n_samples: usize,
    jitter: bool,
    rng: &mut R,
) -> Result<RenderedRays<'t>> {
    let tape = field.tape();
    let fdim = field.feature_dim();
    if fdim > 0 {
        match source {
            Some(s) if s.features.dim == fdim => {}
            Some(s) => {
                return Err(Error::InvalidArgument(format!(
                    "field expects {fdim}-dim features, source view has {}",
                    s.features.dim
                )))
            }
            None => return Err(Error::InvalidArgument("field needs a source view".into())),
        }
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let total = rays.len() * n_samples;
    let mut positions = Vec::with_capacity(total);
    let mut directions = Vec::with_capacity(total);
    let mut deltas = Vec::with_capacity(total);
    for ray in rays {
        for s in stratified_samples_with(ray, n_samples, jitter, rng) {
            positions.push(ray.at(s.t));
            directions.push(ray.direction);
            deltas.push(s.delta);
        }
    }
    let mut features = vec![0.0; total * fdim];
    if let (Some(src), true) = (source, fdim > 0) {
        for (p, out) in positions.iter().zip(features.chunks_exact_mut(fdim)) {
            point_feature_into(*p, src, out);
        }
    }
    let batch = SampleBatch {
        positions,
        directions,
        features: Tensor::new(vec![total, fdim], features)?,
    };
    let out = field.query(&batch)?;
    let values = Var::concat(&[&out.color, &out.heat_logits.sigmoid()])?;
    let deltas = Tensor::new(vec![rays.len(), n_samples], deltas)?;
    let comp = composite_vars(&out.sigma, &deltas, &values)?;
    let k = field.joints();
    let background = tape
        .constant(Tensor::ones(&[rays.len(), 1]))
        .add(&comp.opacity.neg())?;
    let channels: Vec<Var<'t>> = (0..3)
        .map(|c| comp.out.slice_cols(c, 1)?.add(&background))
        .collect::<Result<_>>()?;
    let color = Var::concat(&channels.iter().collect::<Vec<_>>())?;
    let heat = comp.out.slice_cols(3, k)?;
    Ok(RenderedRays {
        color,
        heat,
        opacity: comp.opacity,
    })
}

/// Renders a single ray with stratified samples seeded by `seed`.
pub fn render_ray<'t, F: RadianceField<'t>>(
    field: &F,
    ray: &Ray,
    source: Option<&SourceView>,
    n_samples: usize,
    jitter: bool,
    seed: u64,
) -> Result<RenderedPixel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = render_rays(field, std::slice::from_ref(ray), source, n_samples, jitter, &mut rng)?;
    let c = r.color.value().data();
    Ok(RenderedPixel {
        color: [c[0], c[1], c[2]],
        heat: r.heat.value().data().to_vec(),
        opacity: r.opacity.value().item(),
    })
}

/// Ray through pixel `(u, v)` clipped to the scene cube, or `None` when it
/// misses the cube and the pixel is pure background.
pub fn pixel_ray(cam: &Camera, u: usize, v: usize) -> Result<Option<Ray>> {
    Ok(cam
        .ray_for_pixel(u as f64, v as f64)?
        .clip_to_box(-SCENE_BOUND, SCENE_BOUND))
}

/// Renders every pixel in row-major order without jitter, `chunk` rays per
/// field query.
pub fn render_image_with<'t, F: RadianceField<'t>>(
    field: &F,
    cam: &Camera,
    source: Option<&SourceView>,
    n_samples: usize,
    chunk: usize,
) -> Result<RenderOutput> {
    let (w, h, k) = (cam.width, cam.height, field.joints());
    let mut image = RgbImage::filled(w, h, [1.0; 3]);
    let mut heatmaps = HeatmapStack::zeros(k, w, h);
    let mut opacity = vec![0.0; w * h];
    let mut pending: Vec<(usize, Ray)> = Vec::new();
    for v in 0..h {
        for u in 0..w {
            if let Some(ray) = pixel_ray(cam, u, v)? {
                pending.push((v * w + u, ray));
            }
        }
    }
    // Jitter is off, so the generator is never drawn from.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for block in pending.chunks(chunk.max(1)) {
        let rays: Vec<Ray> = block.iter().map(|(_, r)| *r).collect();
        let out = render_rays(field, &rays, source, n_samples, false, &mut rng)?;
        for (row, (pix, _)) in block.iter().enumerate() {
            let (u, v) = (pix % w, pix / w);
            let c = out.color.value().row(row);
            image.set(u, v, [c[0], c[1], c[2]]);
            for (j, &x) in out.heat.value().row(row).iter().enumerate() {
                heatmaps.set(j, u, v, x);
            }
            opacity[*pix] = out.opacity.value().data()[row];
        }
    }
    Ok(RenderOutput {
        image,
        heatmaps,
        opacity,
    })
}

/// Evaluation render of a trained field.
pub fn render_image(
    params: &FieldParams,
    cam: &Camera,
    source: Option<&SourceView>,
    n_samples: usize,
) -> Result<RenderOutput> {
    let tape = Tape::new();
    let field = params.bind_frozen(&tape);
    render_image_with(&field, cam, source, n_samples, 512)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Independent running-transmittance loop.
    fn composite_oracle(sig: &[f64], del: &[f64], vals: &[Vec<f64>]) -> (Vec<f64>, f64, Vec<f64>, Vec<f64>) {
        let m = vals[0].len();
        let mut out = vec![0.0; m];
        let mut trans = 1.0;
        let mut ts = Vec::new();
        let mut ws = Vec::new();
        for i in 0..sig.len() {
            ts.push(trans);
            let a = 1.0 - (-sig[i] * del[i]).exp();
            let w = trans * a;
            for c in 0..m {
                out[c] += w * vals[i][c];
            }
            ws.push(w);
            trans *= 1.0 - a;
        }
        (out, ws.iter().sum(), ws, ts)
    }

    #[test]
    fn empty_medium() {
        let c = composite(&[0.0; 4], &[0.3; 4], &vec![vec![0.7, 0.2]; 4]).unwrap();
        assert_eq!(c.out, vec![0.0, 0.0]);
        assert_eq!(c.opacity, 0.0);
        assert!(c.weights.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn half_opaque_single_sample() {
        let c = composite(&[std::f64::consts::LN_2], &[1.0], &[vec![0.8, -0.4]]).unwrap();
        assert!((c.opacity - 0.5).abs() < 1e-15);
        assert!((c.out[0] - 0.4).abs() < 1e-15 && (c.out[1] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn negative_inputs_rejected() {
        assert!(composite(&[-0.1], &[1.0], &[vec![0.0]]).is_err());
        assert!(composite(&[0.1], &[-1.0], &[vec![0.0]]).is_err());
        assert!(composite(&[0.1, 0.2], &[1.0], &[vec![0.0]]).is_err());
    }

    #[test]
    fn matches_running_transmittance_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sig: Vec<f64> = (0..16).map(|_| rng.gen_range(0.0..5.0)).collect();
        let del: Vec<f64> = (0..16).map(|_| rng.gen_range(0.01..0.3)).collect();
        let vals: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.gen(), rng.gen(), rng.gen()]).collect();
        let c = composite(&sig, &del, &vals).unwrap();
        let (out, opacity, ws, ts) = composite_oracle(&sig, &del, &vals);
        for (a, b) in c.out.iter().zip(&out) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c.opacity - opacity).abs() < 1e-12);
        for (a, b) in c.weights.iter().zip(&ws) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ts.windows(2).all(|t| t[1] <= t[0]));
    }

    /// Analytic field used to exercise the renderer without a network.
    pub(crate) struct StubField<'t> {
        pub tape: &'t Tape,
        pub joints: usize,
        pub f: fn([f64; 3], [f64; 3]) -> (f64, [f64; 3], Vec<f64>),
    }

    impl<'t> RadianceField<'t> for StubField<'t> {
        fn tape(&self) -> &'t Tape {
            self.tape
        }
        fn joints(&self) -> usize {
            self.joints
        }
        fn feature_dim(&self) -> usize {
            0
        }
        fn query(&self, batch: &SampleBatch) -> Result<crate::field::FieldVars<'t>> {
            let n = batch.positions.len();
            let (mut s, mut c, mut h) = (Vec::new(), Vec::new(), Vec::new());
            for (p, d) in batch.positions.iter().zip(&batch.directions) {
                let (sigma, color, logits) = (self.f)(*p, *d);
                s.push(sigma);
                c.extend_from_slice(&color);
                h.extend(logits);
            }
            Ok(crate::field::FieldVars {
                sigma: self.tape.constant(Tensor::new(vec![n, 1], s)?),
                color: self.tape.constant(Tensor::new(vec![n, 3], c)?),
                heat_logits: self.tape.constant(Tensor::new(vec![n, self.joints], h)?),
            })
        }
    }

    fn test_ray() -> Ray {
        Ray { origin: [0.0, 0.0, 3.0], direction: [0.0, 0.0, -1.0], near: 2.0, far: 4.0 }
    }

    #[test]
    fn empty_field_shows_background() {
        let tape = Tape::new();
        let stub = StubField { tape: &tape, joints: 2, f: |_, _| (0.0, [0.2, 0.3, 0.4], vec![3.0, -1.0]) };
        let px = render_ray(&stub, &test_ray(), None, 8, true, 4).unwrap();
        assert_eq!(px.color, [1.0; 3]);
        assert_eq!(px.heat, vec![0.0, 0.0]);
        assert_eq!(px.opacity, 0.0);
    }

    #[test]
    fn opaque_first_sample_dominates() {
        let tape = Tape::new();
        // 8 samples over [2, 4]: delta 0.25, so sigma 80 gives sigma*delta = 20
        let stub = StubField {
            tape: &tape,
            joints: 2,
            f: |p, _| {
                if p[2] > 0.6 {
                    (80.0, [0.2, 0.3, 0.4], vec![1.5, -2.0])
                } else {
                    (3.0, [0.9, 0.9, 0.1], vec![-5.0, 5.0])
                }
            },
        };
        let px = render_ray(&stub, &test_ray(), None, 8, false, 0).unwrap();
        for (a, b) in px.color.iter().zip([0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-8);
        }
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((px.heat[0] - sig(1.5)).abs() < 1e-8);
        assert!((px.heat[1] - sig(-2.0)).abs() < 1e-8);
    }

    fn wavy(p: [f64; 3], d: [f64; 3]) -> (f64, [f64; 3], Vec<f64>) {
        let s = (3.0 * p[2]).sin().abs() * 4.0 + p[0] * p[0];
        (s, [0.5 + 0.4 * p[2].sin(), 0.3 + 0.2 * d[0], 0.1], vec![p[2] * 2.0, p[0] - p[1], -1.0])
    }

    #[test]
    fn render_matches_manual_pipeline() {
        let tape = Tape::new();
        let stub = StubField { tape: &tape, joints: 3, f: wavy };
        let ray = Ray { origin: [0.1, -0.2, 3.0], direction: crate::camera::normalize([0.05, 0.02, -1.0]), near: 1.5, far: 4.2 };
        let px = render_ray(&stub, &ray, None, 12, true, 99).unwrap();

        let samples = crate::camera::stratified_samples(&ray, 12, true, 99);
        let (mut sig, mut del, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        for s in &samples {
            let (sg, c, h) = wavy(ray.at(s.t), ray.direction);
            sig.push(sg);
            del.push(s.delta);
            let mut row = c.to_vec();
            row.extend(h.iter().map(|x| 1.0 / (1.0 + (-x).exp())));
            vals.push(row);
        }
        let (out, opacity, _, _) = composite_oracle(&sig, &del, &vals);
        for c in 0..3 {
            assert!((px.color[c] - (out[c] + 1.0 - opacity)).abs() < 1e-12);
        }
        for k in 0..3 {
            assert!((px.heat[k] - out[3 + k]).abs() < 1e-12);
        }
        assert!((px.opacity - opacity).abs() < 1e-12);
    }

    #[test]
    fn tiny_image_with_empty_field_is_white() {
        let tape = Tape::new();
        let stub = StubField { tape: &tape, joints: 1, f: |_, _| (0.0, [0.0; 3], vec![0.0]) };
        let cam = Camera::look_at([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.6, 2, 2).unwrap();
        let out = render_image_with(&stub, &cam, None, 4, 3).unwrap();
        assert!(out.image.data.iter().all(|&x| x == 1.0));
        assert!(out.heatmaps.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn image_pixels_equal_single_ray_renders() {
        let tape = Tape::new();
        let stub = StubField { tape: &tape, joints: 3, f: wavy };
        let cam = Camera::look_at([0.3, 0.5, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.7, 6, 5).unwrap();
        let out = render_image_with(&stub, &cam, None, 10, 7).unwrap();
        for v in 0..5 {
            for u in 0..6 {
                let ray = pixel_ray(&cam, u, v).unwrap().unwrap();
                let px = render_ray(&stub, &ray, None, 10, false, 0).unwrap();
                let got = out.image.get(u, v);
                for c in 0..3 {
                    assert!((got[c] - px.color[c]).abs() < 1e-12);
                }
                for k in 0..3 {
                    assert!((out.heatmaps.get(k, u, v) - px.heat[k]).abs() < 1e-12);
                }
                assert!(px.heat.iter().all(|&h| h <= px.opacity + 1e-9));
            }
        }
    }
}
