use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

#[derive(Clone)]
struct Operand {
    value: Rc<Tensor>,
    node: Option<usize>,
}

enum Op {
    Leaf,
    MatMul(Operand, Operand),
    Add(Operand, Operand),
    AddBias(Operand, Operand),
    Mul(Operand, Operand),
    Concat(Vec<Operand>),
    Relu(Operand),
    Sigmoid(Operand),
    Softplus(Operand),
    Sin(Operand),
    Cos(Operand),
    Exp(Operand),
    Neg(Operand),
    Sum(Operand),
    Mean(Operand),
    SquaredError(Operand, Operand),
    Reshape(Operand),
    SliceCols(Operand, usize),
}

struct Node {
    op: Op,
    value: Rc<Tensor>,
}

/// Define-by-run record of differentiable operations.
///
/// Operations whose inputs are all untracked produce untracked results and
/// leave the tape untouched, so a forward pass over frozen values records
/// nothing.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// A value produced on a [`Tape`]; tracked when it depends on a leaf that
/// requires gradients.
#[derive(Clone)]
pub struct Var<'t> {
    tape: &'t Tape,
    value: Rc<Tensor>,
    node: Option<usize>,
}

/// Adjoints produced by [`Tape::backward`], keyed by leaf.
pub struct Gradients {
    leaves: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `leaf`. Leaves the loss does not
    /// depend on get `None`.
    pub fn get(&self, leaf: &Var<'_>) -> Option<&Tensor> {
        leaf.node
            .and_then(|id| self.leaves.get(id))
            .and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but yields zeros for unreached leaves.
    pub fn get_or_zeros(&self, leaf: &Var<'_>) -> Tensor {
        self.get(leaf)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    /// Number of recorded operations (including leaves).
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// A leaf that requires gradients.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let value = Rc::new(value);
        let id = self.push(Op::Leaf, value.clone());
        Var {
            tape: self,
            value,
            node: Some(id),
        }
    }

    /// An untracked value.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var {
            tape: self,
            value: Rc::new(value),
            node: None,
        }
    }

    fn push(&self, op: Op, value: Rc<Tensor>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        nodes.len() - 1
    }

    fn record(&self, op: Op, value: Tensor, tracked: bool) -> Var<'_> {
        let value = Rc::new(value);
        let node = tracked.then(|| self.push(op, value.clone()));
        Var {
            tape: self,
            value,
            node,
        }
    }

    /// Replays adjoints in reverse record order starting from the scalar
    /// `loss`, then clears the tape.
    pub fn backward(&self, loss: &Var<'_>) -> Result<Gradients> {
        if loss.value.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                loss.value.shape()
            )));
        }
        let Some(loss_id) = loss.node else {
            return Err(Error::Backward(
                "loss does not depend on any tracked tensor".into(),
            ));
        };
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        if nodes.is_empty() {
            return Err(Error::Backward("tape is empty".into()));
        }

        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        adj.resize_with(nodes.len(), || None);
        adj[loss_id] = Some(Tensor::ones(loss.value.shape()));
        let mut leaves: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        leaves.resize_with(nodes.len(), || None);

        for id in (0..=loss_id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => leaves[id] = Some(g),
                Op::MatMul(a, b) => {
                    let (m, k) = a.value.dims2().unwrap();
                    let n = b.value.shape()[1];
                    if a.node.is_some() {
                        // dA = dC · Bᵀ
                        let mut da = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), (n, 1), b.value.data(), (1, n), 0.0, &mut da);
                        accumulate(&mut adj, a, Tensor::new(vec![m, k], da).unwrap());
                    }
                    if b.node.is_some() {
                        // dB = Aᵀ · dC
                        let mut db = vec![0.0; k * n];
                        gemm(k, m, n, a.value.data(), (1, k), g.data(), (n, 1), 0.0, &mut db);
                        accumulate(&mut adj, b, Tensor::new(vec![k, n], db).unwrap());
                    }
                }
                Op::Add(a, b) => {
                    if b.node.is_some() {
                        accumulate(&mut adj, b, g.clone());
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::AddBias(a, b) => {
                    if b.node.is_some() {
                        let cols = b.value.len();
                        let mut db = vec![0.0; cols];
                        for row in g.data().chunks_exact(cols) {
                            for (d, x) in db.iter_mut().zip(row) {
                                *d += x;
                            }
                        }
                        accumulate(&mut adj, b, Tensor::new(vec![cols], db).unwrap());
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Mul(a, b) => {
                    if a.node.is_some() {
                        accumulate(&mut adj, a, g.zip_map(&b.value, |g, y| g * y));
                    }
                    if b.node.is_some() {
                        accumulate(&mut adj, b, g.zip_map(&a.value, |g, x| g * x));
                    }
                }
                Op::Concat(parts) => {
                    let total = *g.shape().last().unwrap();
                    let rows = g.len() / total.max(1);
                    let mut offset = 0;
                    for part in parts {
                        let w = *part.value.shape().last().unwrap();
                        if part.node.is_some() {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                            }
                            let shape = part.value.shape().to_vec();
                            accumulate(&mut adj, part, Tensor::new(shape, d).unwrap());
                        }
                        offset += w;
                    }
                }
                Op::Relu(a) => {
                    accumulate(&mut adj, a, g.zip_map(&a.value, |g, x| if x > 0.0 { g } else { 0.0 }));
                }
                Op::Sigmoid(a) => {
                    accumulate(&mut adj, a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y)));
                }
                Op::Softplus(a) => {
                    accumulate(&mut adj, a, g.zip_map(&a.value, |g, x| g * sigmoid(x)));
                }
                Op::Sin(a) => accumulate(&mut adj, a, g.zip_map(&a.value, |g, x| g * x.cos())),
                Op::Cos(a) => accumulate(&mut adj, a, g.zip_map(&a.value, |g, x| -g * x.sin())),
                Op::Exp(a) => accumulate(&mut adj, a, g.zip_map(&node.value, |g, y| g * y)),
                Op::Neg(a) => accumulate(&mut adj, a, g.map(|g| -g)),
                Op::Sum(a) => {
                    let s = g.item();
                    accumulate(&mut adj, a, Tensor::filled(a.value.shape(), s));
                }
                Op::Mean(a) => {
                    let s = g.item() / a.value.len() as f64;
                    accumulate(&mut adj, a, Tensor::filled(a.value.shape(), s));
                }
                Op::SquaredError(a, b) => {
                    let scale = 2.0 * g.item() / a.value.len() as f64;
                    let diff = a.value.zip_map(&b.value, |x, y| scale * (x - y));
                    if b.node.is_some() {
                        accumulate(&mut adj, b, diff.map(|d| -d));
                    }
                    accumulate(&mut adj, a, diff);
                }
                Op::Reshape(a) => {
                    let shape = a.value.shape().to_vec();
                    accumulate(&mut adj, a, g.with_shape(shape));
                }
                Op::SliceCols(a, start) => {
                    let cols = *a.value.shape().last().unwrap();
                    let w = *g.shape().last().unwrap();
                    let mut d = vec![0.0; a.value.len()];
                    for (dst, src) in d.chunks_exact_mut(cols).zip(g.data().chunks_exact(w)) {
                        dst[*start..start + w].copy_from_slice(src);
                    }
                    let shape = a.value.shape().to_vec();
                    accumulate(&mut adj, a, Tensor::new(shape, d).unwrap());
                }
            }
        }
        Ok(Gradients { leaves })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], to: &Operand, g: Tensor) {
    let Some(id) = to.node else { return };
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn operand(&self) -> Operand {
        Operand {
            value: self.value.clone(),
            node: self.node,
        }
    }

    fn unary(&self, op: fn(Operand) -> Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let out = self.value.map(f);
        self.tape.record(op(self.operand()), out, self.node.is_some())
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (&*self.value, &*other.value);
        let (Some((m, k)), Some((k2, n))) = (a.dims2(), b.dims2()) else {
            return Err(mismatch("matmul", a, b));
        };
        if k != k2 {
            return Err(mismatch("matmul", a, b));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut c);
        let out = Tensor::new(vec![m, n], c)?;
        let tracked = self.node.is_some() || other.node.is_some();
        Ok(self
            .tape
            .record(Op::MatMul(self.operand(), other.operand()), out, tracked))
    }

    /// Elementwise sum of equal shapes, or a row-wise bias add when `other`
    /// is rank 1 and matches the last axis.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (&*self.value, &*other.value);
        let tracked = self.node.is_some() || other.node.is_some();
        if a.shape() == b.shape() {
            let out = a.zip_map(b, |x, y| x + y);
            return Ok(self
                .tape
                .record(Op::Add(self.operand(), other.operand()), out, tracked));
        }
        let cols = a.shape().last().copied();
        if b.rank() == 1 && a.rank() >= 1 && cols == Some(b.len()) {
            let mut out = (*a).clone();
            if b.len() > 0 {
                for row in out.data_mut().chunks_exact_mut(b.len()) {
                    for (x, y) in row.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
            return Ok(self
                .tape
                .record(Op::AddBias(self.operand(), other.operand()), out, tracked));
        }
        Err(mismatch("add", a, b))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (&*self.value, &*other.value);
        if a.shape() != b.shape() {
            return Err(mismatch("mul", a, b));
        }
        let out = a.zip_map(b, |x, y| x * y);
        let tracked = self.node.is_some() || other.node.is_some();
        Ok(self
            .tape
            .record(Op::Mul(self.operand(), other.operand()), out, tracked))
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid, sigmoid)
    }

    pub fn softplus(&self) -> Var<'t> {
        self.unary(Op::Softplus, softplus)
    }

    pub fn sin(&self) -> Var<'t> {
        self.unary(Op::Sin, f64::sin)
    }

    pub fn cos(&self) -> Var<'t> {
        self.unary(Op::Cos, f64::cos)
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(Op::Exp, f64::exp)
    }

    pub fn neg(&self) -> Var<'t> {
        self.unary(Op::Neg, |x| -x)
    }

    pub fn sum(&self) -> Var<'t> {
        let out = Tensor::scalar(self.value.data().iter().sum());
        self.tape
            .record(Op::Sum(self.operand()), out, self.node.is_some())
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value.len() as f64;
        let out = Tensor::scalar(self.value.data().iter().sum::<f64>() / n);
        self.tape
            .record(Op::Mean(self.operand()), out, self.node.is_some())
    }

    /// Mean of squared differences, reduced to a scalar.
    pub fn squared_error(&self, target: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (&*self.value, &*target.value);
        if a.shape() != b.shape() {
            return Err(mismatch("squared_error", a, b));
        }
        let sse: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let out = Tensor::scalar(sse / a.len() as f64);
        let tracked = self.node.is_some() || target.node.is_some();
        Ok(self.tape.record(
            Op::SquaredError(self.operand(), target.operand()),
            out,
            tracked,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        if shape.iter().product::<usize>() != self.value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = (*self.value).clone().with_shape(shape.to_vec());
        Ok(self
            .tape
            .record(Op::Reshape(self.operand()), out, self.node.is_some()))
    }

    /// Columns `start..start + width` of the last axis.
    pub fn slice_cols(&self, start: usize, width: usize) -> Result<Var<'t>> {
        let shape = self.value.shape();
        let cols = shape.last().copied().unwrap_or(0);
        if shape.is_empty() || start + width > cols {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: shape.to_vec(),
                rhs: vec![start, width],
            });
        }
        let mut data = Vec::with_capacity(self.value.len() / cols.max(1) * width);
        for row in self.value.data().chunks_exact(cols) {
            data.extend_from_slice(&row[start..start + width]);
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = width;
        let out = Tensor::new(out_shape, data)?;
        Ok(self.tape.record(
            Op::SliceCols(self.operand(), start),
            out,
            self.node.is_some(),
        ))
    }

    /// Concatenates along the last axis; all leading dimensions must agree.
    pub fn concat(parts: &[&Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let lead = &first.shape()[..first.shape().len().saturating_sub(1)];
        for p in &parts[1..] {
            let s = p.shape();
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat", first.value(), p.value()));
            }
        }
        if first.shape().is_empty() {
            return Err(mismatch("concat", first.value(), first.value()));
        }
        let widths: Vec<usize> = parts.iter().map(|p| *p.shape().last().unwrap()).collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(shape, data)?;
        let tracked = parts.iter().any(|p| p.node.is_some());
        let ops = parts.iter().map(|p| p.operand()).collect();
        Ok(first.tape.record(Op::Concat(ops), out, tracked))
    }
}
