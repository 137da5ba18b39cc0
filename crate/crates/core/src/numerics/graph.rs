//! Reverse-mode differentiation over an append-only node list.
//!
//! Nodes are evaluated eagerly as they are created. Creation order is a
//! topological order, so re-evaluation walks the list forward and backward
//! walks it in reverse, which fixes the evaluation order deterministically.

use super::kernels::{self, LerpTap};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    MatMul(Var, Var),
    Conv3d { x: Var, w: Var, b: Var },
    TemporalConv { x: Var, kernel: Var, bias: Var, stride: usize },
    Relu(Var),
    AvgPool { x: Var, k: usize },
    MeanAxis { x: Var, axis: usize },
    Mean(Var),
    Sum(Var),
    SqNorm(Var),
    Resample { x: Var, plan: Vec<LerpTap> },
    CrossEntropy { logits: Var, labels: Vec<usize> },
    Reshape(Var, Vec<usize>),
    Concat(Vec<Var>),
    L2NormalizeRows(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Conv3d { .. } => "conv3d",
            Op::TemporalConv { .. } => "temporal_conv1d",
            Op::Relu(..) => "relu",
            Op::AvgPool { .. } => "avg_pool",
            Op::MeanAxis { .. } => "mean_axis",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::SqNorm(..) => "sq_norm",
            Op::Resample { .. } => "resample",
            Op::CrossEntropy { .. } => "softmax_cross_entropy",
            Op::Reshape(..) => "reshape",
            Op::Concat(..) => "concat",
            Op::L2NormalizeRows(..) => "l2_normalize_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale(a, _) | Op::Relu(a) | Op::Mean(a) | Op::Sum(a) | Op::SqNorm(a) | Op::Reshape(a, _) | Op::L2NormalizeRows(a) => {
                vec![*a]
            }
            Op::Conv3d { x, w, b } => vec![*x, *w, *b],
            Op::TemporalConv { x, kernel, bias, .. } => vec![*x, *kernel, *bias],
            Op::AvgPool { x, .. } | Op::MeanAxis { x, .. } | Op::Resample { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    learnable: bool,
}

/// A differentiable computation.
///
/// Leaves are either constants or learnable parameters; only nodes downstream
/// of a learnable leaf take part in [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, learnable: bool) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, requires_grad: learnable, learnable });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A learnable leaf; [`Graph::backward`] fills its gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn is_learnable(&self, v: Var) -> bool {
        self.node(v).learnable
    }

    /// Replaces a leaf value. Downstream values are stale until
    /// [`Graph::forward`] runs.
    pub fn set_value(&mut self, v: Var, value: Tensor) -> Result<()> {
        let node = self.nodes.get_mut(v.0).ok_or(Error::UnknownNode(v.0))?;
        if !matches!(node.op, Op::Leaf) {
            return Err(Error::InvalidShape { shape: node.value.shape().to_vec(), reason: "only leaf values can be assigned".into() });
        }
        if node.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch { op: "set_value", lhs: node.value.shape().to_vec(), rhs: value.shape().to_vec() });
        }
        node.value = value;
        Ok(())
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.eval(&op)?;
        let requires_grad = op.inputs().iter().any(|i| self.node(*i).requires_grad);
        self.nodes.push(Node { op, value, requires_grad, learnable: false });
        Ok(Var(self.nodes.len() - 1))
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let v = |var: &Var| self.value(*var);
        Ok(match op {
            Op::Leaf => unreachable!("leaves are not re-evaluated"),
            Op::Add(a, b) => v(a).add(v(b))?,
            Op::Sub(a, b) => v(a).sub(v(b))?,
            Op::Scale(a, s) => v(a).scale(*s),
            Op::Mul(a, b) => v(a).zip_map(v(b), "mul", |x, y| x * y)?,
            Op::MatMul(a, b) => kernels::matmul(v(a), v(b))?,
            Op::Conv3d { x, w, b } => kernels::conv3d(v(x), v(w), v(b))?,
            Op::TemporalConv { x, kernel, bias, stride } => kernels::temporal_conv(v(x), v(kernel), v(bias), *stride)?,
            Op::Relu(a) => v(a).map(|x| x.max(0.0)),
            Op::AvgPool { x, k } => kernels::avg_pool(v(x), *k)?,
            Op::MeanAxis { x, axis } => kernels::mean_axis(v(x), *axis)?,
            Op::Mean(a) => Tensor::scalar(v(a).sum() / v(a).len() as f64),
            Op::Sum(a) => Tensor::scalar(v(a).sum()),
            Op::SqNorm(a) => Tensor::scalar(v(a).sq_norm()),
            Op::Resample { x, plan, .. } => kernels::resample(v(x), plan),
            Op::CrossEntropy { logits, labels } => Tensor::scalar(kernels::cross_entropy(v(logits), labels)?.0),
            Op::Reshape(a, shape) => v(a).clone().reshape(shape)?,
            Op::Concat(parts) => kernels::concat0(&parts.iter().map(v).collect::<Vec<_>>())?,
            Op::L2NormalizeRows(a) => kernels::l2_normalize_rows(v(a))?,
        })
    }

    fn check(&self, vars: &[Var]) -> Result<()> {
        match vars.iter().find(|v| v.0 >= self.nodes.len()) {
            Some(v) => Err(Error::UnknownNode(v.0)),
            None => Ok(()),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        self.push(Op::Sub(a, b))
    }

    /// Scalar times tensor, the one broadcast this graph supports.
    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::Scale(a, s))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        self.push(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(&[a, b])?;
        self.push(Op::MatMul(a, b))
    }

    /// Same-padded, stride-1 convolution of `[B][T][Cin][H][W]` with a
    /// `[Cout][Cin][kt][kh][kw]` kernel (odd extents) and `[Cout]` bias.
    pub fn conv3d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(&[x, w, b])?;
        self.push(Op::Conv3d { x, w, b })
    }

    /// Strided valid convolution along the leading axis with a 1-D kernel
    /// shared over all trailing positions, plus a scalar bias.
    pub fn temporal_conv(&mut self, x: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        self.check(&[x, kernel, bias])?;
        self.push(Op::TemporalConv { x, kernel, bias, stride })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::Relu(a))
    }

    /// `k x k` average pool over the two trailing axes.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        self.check(&[x])?;
        self.push(Op::AvgPool { x, k })
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(&[x])?;
        self.push(Op::MeanAxis { x, axis })
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::Mean(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::Sum(a))
    }

    pub fn sq_norm(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::SqNorm(a))
    }

    /// Linear-interpolation resample along the leading axis: `t_out` frames
    /// evenly spaced over fractional frame positions `[start, end]`.
    pub fn resample(&mut self, x: Var, start: f64, end: f64, t_out: usize) -> Result<Var> {
        self.check(&[x])?;
        let len = self.value(x).shape()[0];
        if t_out == 0 || !(0.0..=end).contains(&start) || end > (len - 1) as f64 {
            return Err(Error::InvalidShape {
                shape: self.value(x).shape().to_vec(),
                reason: format!("resample window [{start}, {end}] -> {t_out} frames is invalid"),
            });
        }
        let plan = kernels::lerp_plan(len, start, end, t_out);
        self.push(Op::Resample { x, plan })
    }

    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(&[logits])?;
        self.push(Op::CrossEntropy { logits, labels: labels.to_vec() })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::Reshape(a, shape.to_vec()))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidShape { shape: vec![0], reason: "concat of zero tensors".into() });
        }
        self.check(parts)?;
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Scales each row of a matrix to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        self.check(&[a])?;
        self.push(Op::L2NormalizeRows(a))
    }

    /// Re-evaluates every node up to `root` from the current leaf values and
    /// returns the root value.
    pub fn forward(&mut self, root: Var) -> Result<Tensor> {
        self.check(&[root])?;
        for i in 0..=root.0 {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            // leaf shapes are fixed, so stored resample plans stay valid
            self.nodes[i].value = self.eval(&self.nodes[i].op)?;
        }
        Ok(self.nodes[root.0].value.clone())
    }

    /// Accumulates d(root)/d(node) for every node downstream of a learnable
    /// leaf. Fan-out contributions are summed.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.check(&[root])?;
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::new(rv.shape().to_vec(), vec![1.0])?);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                let contributions = self.input_grads(&node.op, &g)?;
                for (var, grad) in contributions {
                    self.accumulate(var, grad);
                }
            }
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, var: Var, grad: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut self.grads[var.0] {
            Some(existing) => existing.axpy(1.0, &grad),
            slot @ None => *slot = Some(grad),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn input_grads(&self, op: &Op, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let v = |var: Var| self.value(var);
        let mut res = Vec::new();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.clone()));
            }
            Op::Sub(a, b) => {
                res.push((*a, g.clone()));
                res.push((*b, g.scale(-1.0)));
            }
            Op::Scale(a, s) => res.push((*a, g.scale(*s))),
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, g.zip_map(v(*b), "mul", |x, y| x * y)?));
                }
                if self.wants(*b) {
                    res.push((*b, g.zip_map(v(*a), "mul", |x, y| x * y)?));
                }
            }
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    res.push((*a, kernels::matmul(g, &kernels::transpose(v(*b)))?));
                }
                if self.wants(*b) {
                    res.push((*b, kernels::matmul(&kernels::transpose(v(*a)), g)?));
                }
            }
            Op::Conv3d { x, w, b } => {
                if self.wants(*x) {
                    res.push((*x, kernels::conv3d_grad_input(g, v(*w), v(*x).shape())?));
                }
                if self.wants(*w) {
                    res.push((*w, kernels::conv3d_grad_weight(g, v(*x), v(*w).shape())?));
                }
                if self.wants(*b) {
                    res.push((*b, kernels::conv3d_grad_bias(g)));
                }
            }
            Op::TemporalConv { x, kernel, bias, stride } => {
                let (gx, gk, gb) = kernels::temporal_conv_grads(g, v(*x), v(*kernel), *stride);
                res.push((*x, gx));
                res.push((*kernel, gk));
                res.push((*bias, gb.reshape(v(*bias).shape())?));
            }
            Op::Relu(a) => res.push((*a, g.zip_map(v(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?)),
            Op::AvgPool { x, k } => res.push((*x, kernels::avg_pool_grad(g, *k, v(*x).shape()))),
            Op::MeanAxis { x, axis } => res.push((*x, kernels::mean_axis_grad(g, *axis, v(*x).shape()))),
            Op::Mean(a) => {
                let n = v(*a).len() as f64;
                res.push((*a, Tensor::full(v(*a).shape(), g.item() / n)));
            }
            Op::Sum(a) => res.push((*a, Tensor::full(v(*a).shape(), g.item()))),
            Op::SqNorm(a) => res.push((*a, v(*a).scale(2.0 * g.item()))),
            Op::Resample { x, plan, .. } => res.push((*x, kernels::resample_grad(g, plan, v(*x).shape()))),
            Op::CrossEntropy { logits, labels } => {
                let (_, mut probs) = kernels::cross_entropy(v(*logits), labels)?;
                let n = probs.shape()[1];
                let scale = g.item() / labels.len() as f64;
                for (row, &label) in probs.data_mut().chunks_mut(n).zip(labels) {
                    row[label] -= 1.0;
                    row.iter_mut().for_each(|p| *p *= scale);
                }
                res.push((*logits, probs));
            }
            Op::Reshape(a, _) => res.push((*a, g.clone().reshape(v(*a).shape())?)),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let pv = v(*p);
                    let n = pv.len();
                    let slice = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    res.push((*p, Tensor::new(pv.shape().to_vec(), slice)?));
                }
            }
            Op::L2NormalizeRows(a) => res.push((*a, kernels::l2_normalize_rows_grad(g, v(*a)))),
        }
        debug_assert!(res.iter().all(|(var, t)| t.shape() == v(*var).shape()), "{}: gradient shape", op.name());
        Ok(res)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a learnable leaf, zeros when the root does not depend on it.
    pub fn leaf_grad(&self, v: Var) -> Tensor {
        self.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }
}
