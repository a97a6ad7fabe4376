use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor with its gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffTensor {
    pub value: Tensor,
    pub requires_grad: bool,
    pub grad: Option<Tensor>,
}

impl DiffTensor {
    pub fn new(value: Tensor) -> Self {
        DiffTensor {
            value,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn frozen(value: Tensor) -> Self {
        DiffTensor {
            value,
            requires_grad: false,
            grad: None,
        }
    }
}

/// Glorot-uniform weights `[fan_in, fan_out]` and zero biases for each
/// consecutive pair in `layer_dims`, returned as `w0, b0, w1, b1, ...`.
pub fn init_parameters(layer_dims: &[usize], seed: u64) -> Result<Vec<DiffTensor>> {
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * layer_dims.len().saturating_sub(1));
    for pair in layer_dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-limit..=limit))
            .collect();
        out.push(DiffTensor::new(Tensor::new(vec![fan_in, fan_out], w)?));
        out.push(DiffTensor::new(Tensor::zeros(&[fan_out])));
    }
    Ok(out)
}

/// Ordered, named collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, DiffTensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: DiffTensor) {
        self.entries.push((name.into(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DiffTensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DiffTensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&DiffTensor> {
        self.index_of(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DiffTensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn at(&self, index: usize) -> &DiffTensor {
        &self.entries[index].1
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.value.len()).sum()
    }

    /// Places every parameter on `tape`: leaves where `requires_grad`,
    /// constants otherwise.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.entries
            .iter()
            .map(|(_, t)| {
                if t.requires_grad {
                    tape.leaf(t.value.clone())
                } else {
                    tape.constant(t.value.clone())
                }
            })
            .collect()
    }

    /// Places every parameter on `tape` as an untracked constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.entries
            .iter()
            .map(|(_, t)| tape.constant(t.value.clone()))
            .collect()
    }

    /// Copies gradients for `bound` (as returned by [`ParamSet::bind`])
    /// into each parameter's `grad` buffer. Parameters the loss does not
    /// reach get zeros.
    pub fn store_grads(&mut self, bound: &[Var<'_>], grads: &Gradients) {
        for ((_, t), var) in self.entries.iter_mut().zip(bound) {
            if t.requires_grad {
                t.grad = Some(grads.get_or_zeros(var));
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.grad = None;
        }
    }

    pub fn to_named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|(n, t)| (n.clone(), t.value.clone()))
            .collect()
    }
}
