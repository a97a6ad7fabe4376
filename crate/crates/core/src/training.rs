//! Distillation training: color plus weighted heatmap loss, optimized with
//! Adam over random ray batches drawn from the training views.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{save_checkpoint, ParamSet, Tape, Tensor, Var};
use crate::camera::Ray;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::field::{field_init, FieldConfig, FieldParams};
use crate::rendering::{pixel_ray, render_rays, RenderedPixel, RenderedRays};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda_h: f64,
    pub adam: AdamHyper,
    pub iters: usize,
    pub rays_per_batch: usize,
    pub n_samples: usize,
    /// Seeds ray selection and sample jitter.
    pub seed: u64,
    /// Seeds parameter initialization.
    pub field_seed: u64,
    pub jitter: bool,
    /// Fraction of each batch drawn from pixels where some teacher channel
    /// is at least [`FOCUS_LEVEL`]; the rest are uniform over the pool.
    pub joint_focus: f64,
    pub log_every: usize,
    pub ckpt_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_h: 0.5,
            adam: AdamHyper::default(),
            iters: 2000,
            rays_per_batch: 512,
            n_samples: 64,
            seed: 0,
            field_seed: 0,
            jitter: true,
            joint_focus: 0.0,
            log_every: 100,
            ckpt_every: 1000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let checks = [
            (self.lambda_h >= 0.0 && self.lambda_h.is_finite(), "lambda_h must be >= 0"),
            (a.lr > 0.0 && a.lr.is_finite(), "lr must be > 0"),
            ((0.0..1.0).contains(&a.beta1), "beta1 must be in [0, 1)"),
            ((0.0..1.0).contains(&a.beta2), "beta2 must be in [0, 1)"),
            (a.eps > 0.0, "eps must be > 0"),
            (self.iters >= 1, "iters must be >= 1"),
            (self.rays_per_batch >= 1, "rays_per_batch must be >= 1"),
            (self.n_samples >= 1, "n_samples must be >= 1"),
            ((0.0..=1.0).contains(&self.joint_focus), "joint_focus must be in [0, 1]"),
            (self.log_every >= 1, "log_every must be >= 1"),
            (self.ckpt_every >= 1, "ckpt_every must be >= 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Config((*msg).into())),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    pub l_c: f64,
    pub l_h: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(l_c: f64, l_h: f64, lambda_h: f64) -> LossTerms {
        LossTerms {
            l_c,
            l_h,
            total: l_c + lambda_h * l_h,
        }
    }
}

fn mean_sq(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.zip(b) {
        sum += (x - y) * (x - y);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Loss over already-rendered pixels: `l_c` is the MSE over every color
/// component and `l_h` the MSE over every heat channel.
pub fn loss(pred: &[RenderedPixel], gt_color: &[[f64; 3]], teacher_heat: &[Vec<f64>], lambda_h: f64) -> Result<LossTerms> {
    if pred.len() != gt_color.len() || pred.len() != teacher_heat.len() {
        return Err(Error::InvalidArgument(format!(
            "loss batch sizes differ: {} predictions, {} colors, {} heatmaps",
            pred.len(),
            gt_color.len(),
            teacher_heat.len()
        )));
    }
    if pred.iter().zip(teacher_heat).any(|(p, t)| p.heat.len() != t.len()) {
        return Err(Error::InvalidArgument("heat channel counts differ".into()));
    }
    let l_c = mean_sq(
        pred.iter().flat_map(|p| p.color),
        gt_color.iter().flatten().copied(),
    );
    let l_h = mean_sq(
        pred.iter().flat_map(|p| p.heat.iter().copied()),
        teacher_heat.iter().flatten().copied(),
    );
    Ok(LossTerms::combine(l_c, l_h, lambda_h))
}

/// Differentiable loss on a rendered batch. `gt_color` is `[R,3]` and
/// `teacher` is `[R,K]`.
pub fn loss_vars<'t>(
    pred: &RenderedRays<'t>,
    gt_color: Tensor,
    teacher: Tensor,
    lambda_h: f64,
) -> Result<(Var<'t>, LossTerms)> {
    let tape = pred.color.tape();
    let l_c = pred.color.squared_error(&tape.constant(gt_color))?;
    let l_h = pred.heat.squared_error(&tape.constant(teacher))?;
    let total = l_c.add(&l_h.mul(&tape.constant(Tensor::scalar(lambda_h)))?)?;
    let terms = LossTerms {
        l_c: l_c.value().item(),
        l_h: l_h.value().item(),
        total: total.value().item(),
    };
    Ok((total, terms))
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Number of completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `x` in place; `t` counts from 1.
pub fn adam_update(x: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], t: u64, h: &AdamHyper) {
    let bc1 = 1.0 - h.beta1.powi(t as i32);
    let bc2 = 1.0 - h.beta2.powi(t as i32);
    for i in 0..x.len() {
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g[i];
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        x[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

/// Applies the stored gradient of every trainable parameter. Parameters
/// without a gradient are left alone.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, hyper: &AdamHyper) {
    state.t += 1;
    let t = state.t;
    for (i, (_, p)) in params.iter_mut().enumerate() {
        if !p.requires_grad {
            continue;
        }
        let Some(g) = p.grad.take() else { continue };
        adam_update(p.value.data_mut(), g.data(), &mut state.m[i], &mut state.v[i], t, hyper);
        p.grad = Some(g);
    }
}

/// One logged training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub terms: LossTerms,
}

pub const METRICS_HEADER: &str = "iter,l_c,l_h,total";

pub fn metrics_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.iter, r.terms.l_c, r.terms.l_h, r.terms.total);
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::InvalidArgument("metrics log must start with iter,l_c,l_h,total".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::InvalidArgument(format!("bad metrics row {line:?}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(LogRow {
                iter: f[0].parse().map_err(|_| bad())?,
                terms: LossTerms {
                    l_c: num(f[1])?,
                    l_h: num(f[2])?,
                    total: num(f[3])?,
                },
            })
        })
        .collect()
}

/// Where a run writes its artifacts.
pub struct RunFiles {
    pub dir: PathBuf,
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const METRICS_LOG: &str = "metrics.csv";

impl RunFiles {
    pub fn checkpoint(&self, iter: usize) -> PathBuf {
        self.dir.join(format!("iter_{iter:06}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.dir.join(FINAL_CHECKPOINT)
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join(METRICS_LOG)
    }
}

/// Teacher value above which a pixel counts as near a joint.
pub const FOCUS_LEVEL: f64 = 0.05;

/// Per-view pixels whose rays reach the scene cube.
struct RayPool {
    views: Vec<PoolView>,
    /// `(view, pixel)` positions in `views` near some joint.
    focus: Vec<(usize, usize)>,
}

struct PoolView {
    dataset_pos: usize,
    pixels: Vec<(usize, usize, Ray)>,
}

impl RayPool {
    fn build(dataset: &Dataset) -> Result<RayPool> {
        let mut views = Vec::new();
        let mut focus = Vec::new();
        for (pos, view) in dataset.views.iter().enumerate() {
            if view.split != Split::Train {
                continue;
            }
            let cam = &view.camera;
            let mut pixels = Vec::new();
            for v in 0..cam.height {
                for u in 0..cam.width {
                    if let Some(ray) = pixel_ray(cam, u, v)? {
                        pixels.push((u, v, ray));
                    }
                }
            }
            if let Some(t) = &view.teacher {
                for (i, &(u, v, _)) in pixels.iter().enumerate() {
                    if (0..t.joints).any(|k| t.get(k, u, v) >= FOCUS_LEVEL) {
                        focus.push((views.len(), i));
                    }
                }
            }
            if !pixels.is_empty() {
                views.push(PoolView {
                    dataset_pos: pos,
                    pixels,
                });
            }
        }
        if views.is_empty() {
            return Err(Error::Dataset("no training pixel sees the scene volume".into()));
        }
        Ok(RayPool { views, focus })
    }
}

/// Batch targets for one step.
struct Batch {
    rays: Vec<Ray>,
    color: Tensor,
    heat: Tensor,
}

fn draw_batch(pool: &RayPool, dataset: &Dataset, cfg: &TrainConfig, k: usize, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let n = cfg.rays_per_batch;
    let n_focus = if pool.focus.is_empty() { 0 } else { (cfg.joint_focus * n as f64).round() as usize };
    let mut rays = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(3 * n);
    let mut heat = Vec::with_capacity(k * n);
    for i in 0..n {
        let (pv, (u, v, ray)) = if i < n_focus {
            let (view, pixel) = pool.focus[rng.gen_range(0..pool.focus.len())];
            let pv = &pool.views[view];
            (pv, pv.pixels[pixel])
        } else {
            let pv = &pool.views[rng.gen_range(0..pool.views.len())];
            (pv, pv.pixels[rng.gen_range(0..pv.pixels.len())])
        };
        let view = &dataset.views[pv.dataset_pos];
        rays.push(ray);
        color.extend_from_slice(&view.image.get(u, v));
        let teacher = view.teacher.as_ref().expect("checked at startup");
        heat.extend((0..k).map(|j| teacher.get(j, u, v)));
    }
    Ok(Batch {
        rays,
        color: Tensor::new(vec![n, 3], color)?,
        heat: Tensor::new(vec![n, k], heat)?,
    })
}

fn check_startup(dataset: &Dataset, field: &FieldConfig) -> Result<()> {
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::Dataset("dataset has no training views".into()));
    }
    for v in &train {
        let teacher = v
            .teacher
            .as_ref()
            .ok_or_else(|| Error::Dataset(format!("training view {} has no teacher heatmaps", v.index)))?;
        if teacher.joints != field.joints {
            return Err(Error::Dataset(format!(
                "view {} has {} heatmap channels, field expects {}",
                v.index, teacher.joints, field.joints
            )));
        }
    }
    if field.feature_dim > 0 {
        let src = dataset.source()?;
        if src.features.dim != field.feature_dim {
            return Err(Error::Dataset(format!(
                "source features have {} channels, field expects {}",
                src.features.dim, field.feature_dim
            )));
        }
    }
    Ok(())
}

/// A finished (or in-progress) training run.
pub struct Trainer<'d> {
    dataset: &'d Dataset,
    cfg: TrainConfig,
    pub params: FieldParams,
    pub state: AdamState,
    pub log: Vec<LogRow>,
    pool: RayPool,
    ray_rng: ChaCha8Rng,
    jitter_rng: ChaCha8Rng,
    source: Option<crate::encoding::SourceView>,
}

impl<'d> Trainer<'d> {
    /// Validates the dataset and initializes the field. Fails before any
    /// step if a training view lacks teacher heatmaps.
    pub fn new(dataset: &'d Dataset, field: &FieldConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        field.validate()?;
        check_startup(dataset, field)?;
        let params = field_init(field, cfg.field_seed)?;
        let state = AdamState::new(&params.params);
        let source = if field.feature_dim > 0 { Some(dataset.source()?) } else { None };
        Ok(Trainer {
            dataset,
            cfg: cfg.clone(),
            params,
            state,
            log: Vec::new(),
            pool: RayPool::build(dataset)?,
            ray_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            jitter_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6A09_E667_F3BC_C908),
            source,
        })
    }

    pub fn iteration(&self) -> usize {
        self.state.t as usize
    }

    /// Runs one optimization step and returns its loss.
    pub fn step(&mut self) -> Result<LossTerms> {
        let iter = self.iteration() + 1;
        let k = self.params.config.joints;
        let batch = draw_batch(&self.pool, self.dataset, &self.cfg, k, &mut self.ray_rng)?;
        let tape = Tape::new();
        let (terms, grad_list) = {
            let bound = self.params.bind(&tape);
            let out = render_rays(
                &bound,
                &batch.rays,
                self.source.as_ref(),
                self.cfg.n_samples,
                self.cfg.jitter,
                &mut self.jitter_rng,
            )?;
            let (total, terms) = loss_vars(&out, batch.color, batch.heat, self.cfg.lambda_h)?;
            if !(terms.l_c.is_finite() && terms.l_h.is_finite() && terms.total.is_finite()) {
                return Err(Error::NonFiniteLoss { iter });
            }
            let grads = tape.backward(&total)?;
            let list: Vec<Tensor> = bound.vars.iter().map(|v| grads.get_or_zeros(v)).collect();
            (terms, list)
        };
        for ((_, p), g) in self.params.params.iter_mut().zip(grad_list) {
            if p.requires_grad {
                p.grad = Some(g);
            }
        }
        adam_step(&mut self.params.params, &mut self.state, &self.cfg.adam);
        if iter % self.cfg.log_every == 0 || iter == self.cfg.iters {
            self.log.push(LogRow { iter, terms });
        }
        Ok(terms)
    }
}

/// Outcome of [`train`].
pub struct TrainResult {
    pub params: FieldParams,
    pub log: Vec<LogRow>,
}

/// Runs `cfg.iters` steps. With `out` set, writes `metrics.csv`, periodic
/// checkpoints and `final.ckpt` there. `on_log` sees every logged row.
pub fn train(
    dataset: &Dataset,
    field: &FieldConfig,
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_log: impl FnMut(&LogRow),
) -> Result<TrainResult> {
    let mut trainer = Trainer::new(dataset, field, cfg)?;
    let files = out.map(|dir| RunFiles { dir: dir.to_path_buf() });
    if let Some(f) = &files {
        fs::create_dir_all(&f.dir).map_err(|e| Error::io(&f.dir, e))?;
    }
    for _ in 0..cfg.iters {
        trainer.step()?;
        let iter = trainer.iteration();
        if let Some(row) = trainer.log.last().filter(|r| r.iter == iter) {
            on_log(row);
            if let Some(f) = &files {
                let path = f.metrics();
                fs::write(&path, metrics_csv(&trainer.log)).map_err(|e| Error::io(&path, e))?;
            }
        }
        if let Some(f) = &files {
            if iter % cfg.ckpt_every == 0 {
                save_checkpoint(&f.checkpoint(iter), &trainer.params.params.to_named_tensors())?;
            }
        }
    }
    if let Some(f) = &files {
        save_checkpoint(&f.final_checkpoint(), &trainer.params.params.to_named_tensors())?;
    }
    Ok(TrainResult {
        params: trainer.params,
        log: trainer.log,
    })
}
