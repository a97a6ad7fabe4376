//! Flat `key = value` run configuration.
//!
//! One file holds the network shape, the optimizer settings and the
//! evaluation knobs. Blank lines and `#` comments are ignored. Every key can
//! also be set programmatically through [`RunConfig::set`], which is how CLI
//! flags override file values.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::skeleton::SkeletonParams;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub skeleton: SkeletonParams,
    /// Samples per ray for evaluation renders.
    pub eval_samples: usize,
    /// PCK threshold as a fraction of the ground-truth bounding-box diagonal.
    pub pck_alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            skeleton: SkeletonParams::default(),
            eval_samples: 96,
            pck_alpha: 0.1,
        }
    }
}

/// Every recognized key, in file order.
pub const KEYS: [&str; 26] = [
    "trunk_width",
    "trunk_depth",
    "skip_at",
    "head_width",
    "joints",
    "bands_x",
    "bands_d",
    "feature_dim",
    "lambda_h",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "iters",
    "rays_per_batch",
    "n_samples",
    "seed",
    "log_every",
    "ckpt_every",
    "sigma_g",
    "tau",
    "eval_samples",
    "pck_alpha",
    "field_seed",
    "jitter",
    "joint_focus",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let f = &mut self.field;
        let t = &mut self.train;
        match key {
            "trunk_width" => f.trunk_width = parse(key, value)?,
            "trunk_depth" => f.trunk_depth = parse(key, value)?,
            "skip_at" => f.skip_at = parse(key, value)?,
            "head_width" => f.head_width = parse(key, value)?,
            "joints" => f.joints = parse(key, value)?,
            "bands_x" => f.bands_x = parse(key, value)?,
            "bands_d" => f.bands_d = parse(key, value)?,
            "feature_dim" => f.feature_dim = parse(key, value)?,
            "lambda_h" => t.lambda_h = parse(key, value)?,
            "lr" => t.adam.lr = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "eps" => t.adam.eps = parse(key, value)?,
            "iters" => t.iters = parse(key, value)?,
            "rays_per_batch" => t.rays_per_batch = parse(key, value)?,
            "n_samples" => t.n_samples = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "log_every" => t.log_every = parse(key, value)?,
            "ckpt_every" => t.ckpt_every = parse(key, value)?,
            "field_seed" => t.field_seed = parse(key, value)?,
            "jitter" => t.jitter = parse(key, value)?,
            "joint_focus" => t.joint_focus = parse(key, value)?,
            "sigma_g" => self.skeleton.sigma_g = parse(key, value)?,
            "tau" => self.skeleton.tau = parse(key, value)?,
            "eval_samples" => self.eval_samples = parse(key, value)?,
            "pck_alpha" => self.pck_alpha = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let f = &self.field;
        let t = &self.train;
        Some(match key {
            "trunk_width" => f.trunk_width.to_string(),
            "trunk_depth" => f.trunk_depth.to_string(),
            "skip_at" => f.skip_at.to_string(),
            "head_width" => f.head_width.to_string(),
            "joints" => f.joints.to_string(),
            "bands_x" => f.bands_x.to_string(),
            "bands_d" => f.bands_d.to_string(),
            "feature_dim" => f.feature_dim.to_string(),
            "lambda_h" => t.lambda_h.to_string(),
            "lr" => t.adam.lr.to_string(),
            "beta1" => t.adam.beta1.to_string(),
            "beta2" => t.adam.beta2.to_string(),
            "eps" => t.adam.eps.to_string(),
            "iters" => t.iters.to_string(),
            "rays_per_batch" => t.rays_per_batch.to_string(),
            "n_samples" => t.n_samples.to_string(),
            "seed" => t.seed.to_string(),
            "log_every" => t.log_every.to_string(),
            "ckpt_every" => t.ckpt_every.to_string(),
            "field_seed" => t.field_seed.to_string(),
            "jitter" => t.jitter.to_string(),
            "joint_focus" => t.joint_focus.to_string(),
            "sigma_g" => self.skeleton.sigma_g.to_string(),
            "tau" => self.skeleton.tau.to_string(),
            "eval_samples" => self.eval_samples.to_string(),
            "pck_alpha" => self.pck_alpha.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::format(path, msg),
            other => other,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.train.validate()?;
        self.skeleton.validate()?;
        if self.eval_samples == 0 {
            return Err(Error::Config("eval_samples must be positive".into()));
        }
        if self.pck_alpha.is_nan() || self.pck_alpha <= 0.0 {
            return Err(Error::Config("pck_alpha must be positive".into()));
        }
        Ok(())
    }
}
