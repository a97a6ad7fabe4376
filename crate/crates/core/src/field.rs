//! The radiance field network.
//!
//! A ReLU trunk consumes `concat(γ(x), f(x))` and re-injects that input at
//! layer `skip_at`. Density comes from a softplus head on the trunk output,
//! color from a sigmoid head on `concat(trunk, γ(d))`, and joint heatmap
//! logits from a two-layer branch tapped at the output of layer `skip_at`,
//! so they never see the view direction.

use serde::{Deserialize, Serialize};

use crate::autodiff::{init_parameters, ParamSet, Tape, Tensor, Var};
use crate::camera::Vec3;
use crate::encoding::{encoded_len, positional_encode_batch, EncodedPoint};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub trunk_width: usize,
    pub trunk_depth: usize,
    pub skip_at: usize,
    pub head_width: usize,
    pub joints: usize,
    pub bands_x: usize,
    pub bands_d: usize,
    pub feature_dim: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            trunk_width: 128,
            trunk_depth: 6,
            skip_at: 3,
            head_width: 64,
            joints: 16,
            bands_x: 10,
            bands_d: 4,
            feature_dim: 9,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.skip_at && self.skip_at < self.trunk_depth) {
            return Err(Error::Config(format!(
                "need 0 < skip_at < trunk_depth, got skip_at={} trunk_depth={}",
                self.skip_at, self.trunk_depth
            )));
        }
        if self.joints == 0 || self.trunk_width == 0 || self.head_width == 0 {
            return Err(Error::Config("joints, trunk_width and head_width must be positive".into()));
        }
        Ok(())
    }

    /// Width of the trunk input, `|γ(x)| + F`.
    pub fn input_dim(&self) -> usize {
        encoded_len(self.bands_x) + self.feature_dim
    }

    pub fn dir_dim(&self) -> usize {
        encoded_len(self.bands_d)
    }

    fn trunk_in(&self, layer: usize) -> usize {
        match layer {
            0 => self.input_dim(),
            l if l == self.skip_at => self.trunk_width + self.input_dim(),
            _ => self.trunk_width,
        }
    }

    fn heat_index(&self) -> usize {
        2 * self.trunk_depth
    }

    fn color_index(&self) -> usize {
        2 * self.trunk_depth + 4
    }

    fn sigma_index(&self) -> usize {
        2 * self.trunk_depth + 6
    }
}

/// Per-sample field output.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldOutput {
    pub color: [f64; 3],
    pub sigma: f64,
    pub heatmap_logits: Vec<f64>,
}

/// Batched field output on a tape: `sigma [n,1]`, `color [n,3]`,
/// `heat_logits [n,K]`.
pub struct FieldVars<'t> {
    pub sigma: Var<'t>,
    pub color: Var<'t>,
    pub heat_logits: Var<'t>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub params: ParamSet,
}

/// Ray samples handed to a field: world positions, unit view directions and
/// pixel-aligned features (`[n, F]`).
pub struct SampleBatch {
    pub positions: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub features: Tensor,
}

/// Anything the volume renderer can query.
pub trait RadianceField<'t> {
    fn tape(&self) -> &'t Tape;
    fn joints(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn query(&self, batch: &SampleBatch) -> Result<FieldVars<'t>>;
}

pub fn field_init(config: &FieldConfig, seed: u64) -> Result<FieldParams> {
    config.validate()?;
    let mut params = ParamSet::new();
    let mut block = 0u64;
    let mut add_layer = |params: &mut ParamSet, name: String, fan_in: usize, fan_out: usize| -> Result<()> {
        block += 1;
        let mut wb = init_parameters(&[fan_in, fan_out], seed.wrapping_mul(0x9E37_79B9).wrapping_add(block))?;
        let b = wb.pop().unwrap();
        let w = wb.pop().unwrap();
        params.push(format!("{name}.w"), w);
        params.push(format!("{name}.b"), b);
        Ok(())
    };
    let c = config;
    for layer in 0..c.trunk_depth {
        add_layer(&mut params, format!("trunk.{layer}"), c.trunk_in(layer), c.trunk_width)?;
    }
    add_layer(&mut params, "heat.0".into(), c.trunk_width, c.head_width)?;
    add_layer(&mut params, "heat.1".into(), c.head_width, c.joints)?;
    add_layer(&mut params, "color".into(), c.trunk_width + c.dir_dim(), 3)?;
    add_layer(&mut params, "sigma".into(), c.trunk_width, 1)?;
    Ok(FieldParams {
        config: config.clone(),
        params,
    })
}

impl FieldParams {
    /// Rebuilds parameters from named checkpoint tensors, checking that the
    /// names and shapes match `config`.
    pub fn from_named(config: &FieldConfig, named: Vec<(String, Tensor)>) -> Result<FieldParams> {
        let mut fresh = field_init(config, 0)?;
        if named.len() != fresh.params.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, config expects {}",
                named.len(),
                fresh.params.len()
            )));
        }
        for ((expect_name, slot), (name, tensor)) in fresh.params.iter_mut().zip(named) {
            if expect_name != name || slot.value.shape() != tensor.shape() {
                return Err(Error::Config(format!(
                    "checkpoint tensor {name} {:?} does not match expected {expect_name} {:?}",
                    tensor.shape(),
                    slot.value.shape()
                )));
            }
            slot.value = tensor;
        }
        Ok(fresh)
    }

    /// Places the parameters on `tape` for training.
    pub fn bind<'t>(&'t self, tape: &'t Tape) -> BoundField<'t> {
        BoundField {
            field: self,
            vars: self.params.bind(tape),
            tape,
        }
    }

    /// Places the parameters on `tape` as constants; nothing is recorded.
    pub fn bind_frozen<'t>(&'t self, tape: &'t Tape) -> BoundField<'t> {
        BoundField {
            field: self,
            vars: self.params.bind_frozen(tape),
            tape,
        }
    }

    /// Names of the heatmap branch parameters.
    pub fn heat_param_names(&self) -> Vec<String> {
        ["heat.0.w", "heat.0.b", "heat.1.w", "heat.1.b"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

pub struct BoundField<'t> {
    field: &'t FieldParams,
    pub vars: Vec<Var<'t>>,
    tape: &'t Tape,
}

fn dense<'t>(x: &Var<'t>, w: &Var<'t>, b: &Var<'t>) -> Result<Var<'t>> {
    x.matmul(w)?.add(b)
}

impl<'t> BoundField<'t> {
    pub fn params(&self) -> &'t FieldParams {
        self.field
    }

    /// Runs the network on encoded inputs: `gamma_x [n, 3+6Lx]`,
    /// `features [n, F]`, `gamma_d [n, 3+6Ld]`.
    pub fn forward(&self, gamma_x: &Var<'t>, features: &Var<'t>, gamma_d: &Var<'t>) -> Result<FieldVars<'t>> {
        let c = &self.field.config;
        let p = &self.vars;
        let input = if c.feature_dim == 0 {
            gamma_x.clone()
        } else {
            Var::concat(&[gamma_x, features])?
        };
        if input.shape().get(1) != Some(&c.input_dim()) {
            return Err(Error::ShapeMismatch {
                op: "field_forward",
                lhs: input.shape().to_vec(),
                rhs: vec![c.input_dim()],
            });
        }
        if gamma_d.shape().get(1) != Some(&c.dir_dim()) {
            return Err(Error::ShapeMismatch {
                op: "field_forward",
                lhs: gamma_d.shape().to_vec(),
                rhs: vec![c.dir_dim()],
            });
        }
        let mut h = input.clone();
        let mut tap = None;
        for layer in 0..c.trunk_depth {
            if layer == c.skip_at {
                h = Var::concat(&[&h, &input])?;
            }
            h = dense(&h, &p[2 * layer], &p[2 * layer + 1])?.relu();
            if layer == c.skip_at {
                tap = Some(h.clone());
            }
        }
        let tap = tap.expect("skip_at < trunk_depth");
        let hi = c.heat_index();
        let heat_hidden = dense(&tap, &p[hi], &p[hi + 1])?.relu();
        let heat_logits = dense(&heat_hidden, &p[hi + 2], &p[hi + 3])?;
        let ci = c.color_index();
        let color = dense(&Var::concat(&[&h, gamma_d])?, &p[ci], &p[ci + 1])?.sigmoid();
        let si = c.sigma_index();
        let sigma = dense(&h, &p[si], &p[si + 1])?.softplus();
        Ok(FieldVars {
            sigma,
            color,
            heat_logits,
        })
    }
}

impl<'t> RadianceField<'t> for BoundField<'t> {
    fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn joints(&self) -> usize {
        self.field.config.joints
    }

    fn feature_dim(&self) -> usize {
        self.field.config.feature_dim
    }

    fn query(&self, batch: &SampleBatch) -> Result<FieldVars<'t>> {
        let c = &self.field.config;
        let gx = self.tape.constant(positional_encode_batch(&batch.positions, c.bands_x));
        let gd = self.tape.constant(positional_encode_batch(&batch.directions, c.bands_d));
        let f = self.tape.constant(batch.features.clone());
        self.forward(&gx, &f, &gd)
    }
}

/// Single-point forward evaluation on frozen parameters.
pub fn field_forward(params: &FieldParams, enc: &EncodedPoint) -> Result<FieldOutput> {
    let c = &params.config;
    if enc.gamma_x.len() != encoded_len(c.bands_x)
        || enc.gamma_d.len() != c.dir_dim()
        || enc.feature.len() != c.feature_dim
    {
        return Err(Error::InvalidArgument(format!(
            "encoded point lengths ({}, {}, {}) do not match config ({}, {}, {})",
            enc.gamma_x.len(),
            enc.gamma_d.len(),
            enc.feature.len(),
            encoded_len(c.bands_x),
            c.dir_dim(),
            c.feature_dim
        )));
    }
    let tape = Tape::new();
    let bound = params.bind_frozen(&tape);
    let row = |v: &[f64]| Tensor::new(vec![1, v.len()], v.to_vec());
    let out = bound.forward(
        &tape.constant(row(&enc.gamma_x)?),
        &tape.constant(row(&enc.feature)?),
        &tape.constant(row(&enc.gamma_d)?),
    )?;
    let col = out.color.value().data();
    Ok(FieldOutput {
        color: [col[0], col[1], col[2]],
        sigma: out.sigma.value().item(),
        heatmap_logits: out.heat_logits.value().data().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> FieldConfig {
        FieldConfig {
            trunk_width: 16,
            trunk_depth: 4,
            skip_at: 2,
            head_width: 8,
            joints: 5,
            bands_x: 2,
            bands_d: 1,
            feature_dim: 3,
        }
    }

    fn random_point(cfg: &FieldConfig, rng: &mut ChaCha8Rng) -> EncodedPoint {
        let mut v = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>();
        EncodedPoint {
            gamma_x: v(encoded_len(cfg.bands_x)),
            gamma_d: v(cfg.dir_dim()),
            feature: v(cfg.feature_dim),
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = field_init(&small(), 3).unwrap();
        assert_eq!(a, field_init(&small(), 3).unwrap());
        assert_ne!(a, field_init(&small(), 4).unwrap());
        for (name, t) in a.params.iter() {
            if name.ends_with(".b") {
                assert!(t.value.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }

    #[test]
    fn parameter_names_are_stable() {
        let p = field_init(&small(), 0).unwrap();
        let names: Vec<_> = p.params.names().collect();
        assert_eq!(
            names,
            [
                "trunk.0.w", "trunk.0.b", "trunk.1.w", "trunk.1.b", "trunk.2.w", "trunk.2.b",
                "trunk.3.w", "trunk.3.b", "heat.0.w", "heat.0.b", "heat.1.w", "heat.1.b",
                "color.w", "color.b", "sigma.w", "sigma.b"
            ]
        );
    }

    #[test]
    fn parameter_count_closed_form() {
        for cfg in [small(), FieldConfig::default()] {
            let input = 3 + 6 * cfg.bands_x + cfg.feature_dim;
            let (w, d, h, k) = (cfg.trunk_width, cfg.trunk_depth, cfg.head_width, cfg.joints);
            let dir = 3 + 6 * cfg.bands_d;
            let trunk = (input * w + w) + (d - 2) * (w * w + w) + ((w + input) * w + w);
            let heat = (w * h + h) + (h * k + k);
            let color = (w + dir) * 3 + 3;
            let sigma = w + 1;
            let p = field_init(&cfg, 1).unwrap();
            assert_eq!(p.params.scalar_count(), trunk + heat + color + sigma);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = small();
        c.skip_at = 0;
        assert!(field_init(&c, 0).is_err());
        c.skip_at = c.trunk_depth;
        assert!(field_init(&c, 0).is_err());
        c.skip_at = 1;
        c.joints = 0;
        assert!(field_init(&c, 0).is_err());
    }

    #[test]
    fn zero_weights_give_neutral_output() {
        let mut p = field_init(&small(), 0).unwrap();
        for (_, t) in p.params.iter_mut() {
            t.value.data_mut().fill(0.0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = field_forward(&p, &random_point(&p.config, &mut rng)).unwrap();
        assert!((out.sigma - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(out.color, [0.5; 3]);
        assert_eq!(out.heatmap_logits, vec![0.0; 5]);
    }

    #[test]
    fn direction_only_moves_color() {
        let p = field_init(&small(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_point(&p.config, &mut rng);
        let mut b = a.clone();
        for x in &mut b.gamma_d {
            *x += rng.gen_range(-0.5..0.5);
        }
        let (oa, ob) = (field_forward(&p, &a).unwrap(), field_forward(&p, &b).unwrap());
        assert_eq!(oa, field_forward(&p, &a).unwrap());
        assert_ne!(oa.color, ob.color);
        assert_eq!(oa.sigma.to_bits(), ob.sigma.to_bits());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&oa.heatmap_logits), bits(&ob.heatmap_logits));
    }

    #[test]
    fn wrong_lengths_are_errors() {
        let p = field_init(&small(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = random_point(&p.config, &mut rng);
        e.feature.push(0.0);
        assert!(field_forward(&p, &e).is_err());
    }

    #[test]
    fn output_ranges_hold() {
        let p = field_init(&small(), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..200 {
            let mut e = random_point(&p.config, &mut rng);
            for x in &mut e.feature {
                *x *= 50.0;
            }
            let o = field_forward(&p, &e).unwrap();
            assert!(o.sigma >= 0.0 && o.sigma.is_finite());
            assert!(o.color.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn checkpoint_names_round_trip() {
        let p = field_init(&small(), 2).unwrap();
        let back = FieldParams::from_named(&small(), p.params.to_named_tensors()).unwrap();
        assert_eq!(back, p);
        let mut wrong = p.params.to_named_tensors();
        wrong.swap(0, 2);
        assert!(FieldParams::from_named(&small(), wrong).is_err());
    }
}
