use rand::Rng;

use super::conv::{self, ConvGeometry, ConvShape};
use super::spatial;
use super::{Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Exp,
    Log,
    Relu,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary(UnaryOp, Var),
    Binary(BinaryOp, Var, Var),
    Reduce {
        input: Var,
        mask: Option<Vec<bool>>,
        scale: f64,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        shape: ConvShape,
    },
    Pool {
        input: Var,
    },
    Upsample {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Dropout {
        input: Var,
        keep: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        mask: Vec<bool>,
        probs: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Define-by-run computation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` is a single reverse sweep. A tape serves
/// one backward pass; call [`Tape::reset_grads`] before reusing it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn broadcast_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>, TensorError> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        })
    }
}

#[inline]
fn at(values: &[f64], i: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[i]
    }
}

fn check_finite(op: &'static str, values: &[f64]) -> Result<(), TensorError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// Sums a full-size gradient down to the operand's extent (scalar broadcast).
fn reduce_to(grad: Vec<f64>, numel: usize) -> Vec<f64> {
    if numel == 1 && grad.len() != 1 {
        vec![grad.iter().sum()]
    } else {
        grad
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.needs(v)
    }

    /// Accumulated gradient of a node after `backward`, shaped like its value.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears all gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.consumed = false;
    }

    pub fn unary(&mut self, kind: UnaryOp, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        let name = match kind {
            UnaryOp::Neg => "neg",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Relu => "relu",
            UnaryOp::Square => "square",
        };
        if kind == UnaryOp::Log {
            if let Some((index, &value)) = x.values().iter().enumerate().find(|(_, v)| **v <= 0.0) {
                return Err(TensorError::Domain { op: name, index, value });
            }
        }
        let values: Vec<f64> = x
            .values()
            .iter()
            .map(|&v| match kind {
                UnaryOp::Neg => -v,
                UnaryOp::Exp => v.exp(),
                UnaryOp::Log => v.ln(),
                UnaryOp::Relu => v.max(0.0),
                UnaryOp::Square => v * v,
            })
            .collect();
        check_finite(name, &values)?;
        let out = Tensor::new(x.shape().to_vec(), values)?;
        let rg = self.needs(a);
        Ok(self.push(out, rg, Op::Unary(kind, a)))
    }

    pub fn binary(&mut self, kind: BinaryOp, a: Var, b: Var) -> Result<Var, TensorError> {
        let name = match kind {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        };
        let (x, y) = (self.value(a), self.value(b));
        let shape = broadcast_shape(name, x, y)?;
        let numel: usize = shape.iter().product();
        let (xv, yv) = (x.values(), y.values());
        if kind == BinaryOp::Div {
            if let Some((index, &value)) = yv.iter().enumerate().find(|(_, v)| **v == 0.0) {
                return Err(TensorError::Domain { op: name, index, value });
            }
        }
        let values: Vec<f64> = (0..numel)
            .map(|i| {
                let (p, q) = (at(xv, i), at(yv, i));
                match kind {
                    BinaryOp::Add => p + q,
                    BinaryOp::Sub => p - q,
                    BinaryOp::Mul => p * q,
                    BinaryOp::Div => p / q,
                }
            })
            .collect();
        check_finite(name, &values)?;
        let out = Tensor::new(shape, values)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, rg, Op::Binary(kind, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryOp::Div, a, b)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryOp::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryOp::Log, a)
    }

    /// Rectifier. The derivative at exactly zero is taken as zero.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(UnaryOp::Square, a)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let c = self.scalar(factor);
        self.mul(a, c)
    }

    /// Sum or mean over all elements, optionally restricted to `mask`.
    pub fn reduce(&mut self, kind: ReduceOp, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        let x = self.value(a);
        let (total, count) = match mask {
            Some(m) => {
                if m.len() != x.numel() {
                    return Err(TensorError::ShapeMismatch {
                        op: "reduce mask",
                        left: x.shape().to_vec(),
                        right: vec![m.len()],
                    });
                }
                let total: f64 = x.values().iter().zip(m).filter(|(_, &keep)| keep).map(|(v, _)| v).sum();
                (total, m.iter().filter(|&&k| k).count())
            }
            None => (x.values().iter().sum(), x.numel()),
        };
        let scale = match kind {
            ReduceOp::Sum => 1.0,
            ReduceOp::Mean => {
                if count == 0 {
                    return Err(TensorError::EmptyReduction);
                }
                1.0 / count as f64
            }
        };
        let out = Tensor::scalar(match kind {
            ReduceOp::Sum => total,
            ReduceOp::Mean => total / count as f64,
        });
        let rg = self.needs(a);
        Ok(self.push(
            out,
            rg,
            Op::Reduce {
                input: a,
                mask: mask.map(<[bool]>::to_vec),
                scale,
            },
        ))
    }

    pub fn sum(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        self.reduce(ReduceOp::Sum, a, mask)
    }

    pub fn mean(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var, TensorError> {
        self.reduce(ReduceOp::Mean, a, mask)
    }

    /// 2-D convolution over an `N x C x H x W` input with a `Cout x C x kh x kw` kernel.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeometry,
    ) -> Result<Var, TensorError> {
        let shape = ConvShape::resolve(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), geom)?;
        let values = conv::forward(
            &shape,
            self.value(input).values(),
            self.value(kernel).values(),
            bias.map(|b| self.value(b).values()),
        );
        let out = Tensor::new(vec![shape.n, shape.c_out, shape.ho, shape.wo], values)?;
        let rg = self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            rg,
            Op::Conv2d {
                input,
                kernel,
                bias,
                shape,
            },
        ))
    }

    /// Adaptive mean pooling of the spatial axes to `(oh, ow)`.
    pub fn pool2d(&mut self, input: Var, (oh, ow): (usize, usize)) -> Result<Var, TensorError> {
        let [n, c, h, w] = self.value(input).dims4("pool2d")?;
        if oh == 0 || ow == 0 || oh > h || ow > w {
            return Err(TensorError::InvalidShape(format!(
                "pool2d: cannot pool {h}x{w} to {oh}x{ow}"
            )));
        }
        let values = spatial::pool_forward(self.value(input).values(), n * c, (h, w), (oh, ow));
        let out = Tensor::new(vec![n, c, oh, ow], values)?;
        let rg = self.needs(input);
        Ok(self.push(out, rg, Op::Pool { input }))
    }

    /// Bilinear resampling (align-corners = false) of the spatial axes.
    pub fn upsample_bilinear(&mut self, input: Var, (oh, ow): (usize, usize)) -> Result<Var, TensorError> {
        let [n, c, h, w] = self.value(input).dims4("upsample_bilinear")?;
        if oh == 0 || ow == 0 {
            return Err(TensorError::InvalidShape(
                "upsample_bilinear: zero target extent".into(),
            ));
        }
        let values = spatial::upsample_forward(self.value(input).values(), n * c, (h, w), (oh, ow));
        let out = Tensor::new(vec![n, c, oh, ow], values)?;
        let rg = self.needs(input);
        Ok(self.push(out, rg, Op::Upsample { input }))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidArgument(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut extent = 0;
        for v in inputs {
            let s = self.value(*v).shape();
            let compatible =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            extent += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut values = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                values.extend_from_slice(&t.values()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = extent;
        let out = Tensor::new(shape, values)?;
        let rg = inputs.iter().any(|v| self.needs(*v));
        Ok(self.push(
            out,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Inverted dropout: zeroes elements with probability `p` and rescales the rest.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, p: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if p == 0.0 {
            return Ok(input);
        }
        let x = self.value(input);
        let keep: Vec<f64> = (0..x.numel())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) })
            .collect();
        let values = x.values().iter().zip(&keep).map(|(v, k)| v * k).collect();
        let out = Tensor::new(x.shape().to_vec(), values)?;
        let rg = self.needs(input);
        Ok(self.push(out, rg, Op::Dropout { input, keep }))
    }

    /// Mean softmax cross-entropy over valid pixels of `N x C x H x W` logits.
    ///
    /// `labels` and `mask` are laid out `N x H x W`.
    pub fn sparse_softmax_ce(&mut self, logits: Var, labels: &[usize], mask: &[bool]) -> Result<Var, TensorError> {
        let x = self.value(logits);
        let [n, c, h, w] = x.dims4("sparse_softmax_ce")?;
        let plane = h * w;
        if labels.len() != n * plane || mask.len() != n * plane {
            return Err(TensorError::ShapeMismatch {
                op: "sparse_softmax_ce",
                left: x.shape().to_vec(),
                right: vec![labels.len(), mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::EmptyReduction);
        }
        let xv = x.values();
        let mut probs = vec![0.0; xv.len()];
        let mut total = 0.0;
        for b in 0..n {
            for p in 0..plane {
                let px = b * plane + p;
                if !mask[px] {
                    continue;
                }
                let label = labels[px];
                if label >= c {
                    return Err(TensorError::LabelOutOfRange { label, n_cls: c });
                }
                let idx = |k: usize| (b * c + k) * plane + p;
                let max = (0..c).map(|k| xv[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..c {
                    let e = (xv[idx(k)] - max).exp();
                    probs[idx(k)] = e;
                    z += e;
                }
                for k in 0..c {
                    probs[idx(k)] /= z;
                }
                total += max + z.ln() - xv[idx(label)];
            }
        }
        let out = Tensor::scalar(total / count as f64);
        let rg = self.needs(logits);
        Ok(self.push(
            out,
            rg,
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                mask: mask.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Propagates d`loss`/d`node` to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.consumed {
            return Err(TensorError::StaleTape);
        }
        let value = self.value(loss);
        if !value.is_scalar() {
            return Err(TensorError::NonScalarLoss(value.shape().to_vec()));
        }
        self.consumed = true;
        if !self.needs(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &g);
            self.nodes[i].grad = Some(g);
            for (v, dg) in contributions {
                let node = &mut self.nodes[v.0];
                match node.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&dg).for_each(|(a, d)| *a += d),
                    None => node.grad = Some(dg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each input that needs a gradient.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let mut out = Vec::new();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Unary(kind, a) => {
                if self.needs(*a) {
                    let x = self.value(*a).values();
                    let y = self.nodes[i].value.values();
                    let d = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            UnaryOp::Neg => -gj,
                            UnaryOp::Exp => gj * y[j],
                            UnaryOp::Log => gj / x[j],
                            UnaryOp::Relu => {
                                if x[j] > 0.0 {
                                    gj
                                } else {
                                    0.0
                                }
                            }
                            UnaryOp::Square => 2.0 * x[j] * gj,
                        })
                        .collect();
                    out.push((*a, d));
                }
            }
            Op::Binary(kind, a, b) => {
                let (xv, yv) = (self.value(*a).values(), self.value(*b).values());
                if self.needs(*a) {
                    let d = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            BinaryOp::Add | BinaryOp::Sub => gj,
                            BinaryOp::Mul => gj * at(yv, j),
                            BinaryOp::Div => gj / at(yv, j),
                        })
                        .collect();
                    out.push((*a, reduce_to(d, xv.len())));
                }
                if self.needs(*b) {
                    let d = g
                        .iter()
                        .enumerate()
                        .map(|(j, &gj)| match kind {
                            BinaryOp::Add => gj,
                            BinaryOp::Sub => -gj,
                            BinaryOp::Mul => gj * at(xv, j),
                            BinaryOp::Div => {
                                let q = at(yv, j);
                                -gj * at(xv, j) / (q * q)
                            }
                        })
                        .collect();
                    out.push((*b, reduce_to(d, yv.len())));
                }
            }
            Op::Reduce { input, mask, scale } => {
                if self.needs(*input) {
                    let n = self.value(*input).numel();
                    let s = g[0] * scale;
                    let d = match mask {
                        Some(m) => m.iter().map(|&k| if k { s } else { 0.0 }).collect(),
                        None => vec![s; n],
                    };
                    out.push((*input, d));
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                shape,
            } => {
                let need = (
                    self.needs(*input),
                    self.needs(*kernel),
                    bias.is_some_and(|b| self.needs(b)),
                );
                let grads = conv::backward(
                    shape,
                    self.value(*input).values(),
                    self.value(*kernel).values(),
                    g,
                    need,
                );
                if let Some(d) = grads.input {
                    out.push((*input, d));
                }
                if let Some(d) = grads.kernel {
                    out.push((*kernel, d));
                }
                if let (Some(b), Some(d)) = (bias, grads.bias) {
                    out.push((*b, d));
                }
            }
            Op::Pool { input } => {
                if self.needs(*input) {
                    let [n, c, h, w] = dims(self.value(*input));
                    let [_, _, oh, ow] = dims(&self.nodes[i].value);
                    out.push((*input, spatial::pool_backward(g, n * c, (h, w), (oh, ow))));
                }
            }
            Op::Upsample { input } => {
                if self.needs(*input) {
                    let [n, c, h, w] = dims(self.value(*input));
                    let [_, _, oh, ow] = dims(&self.nodes[i].value);
                    out.push((*input, spatial::upsample_backward(g, n * c, (h, w), (oh, ow))));
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = self.nodes[i].value.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let chunk = self.value(*v).shape()[*axis] * inner;
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(outer * chunk);
                        for o in 0..outer {
                            let start = o * row + offset;
                            d.extend_from_slice(&g[start..start + chunk]);
                        }
                        out.push((*v, d));
                    }
                    offset += chunk;
                }
            }
            Op::Dropout { input, keep } => {
                if self.needs(*input) {
                    out.push((*input, g.iter().zip(keep).map(|(a, k)| a * k).collect()));
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                mask,
                probs,
                count,
            } => {
                if self.needs(*logits) {
                    let [n, c, h, w] = dims(self.value(*logits));
                    let plane = h * w;
                    let s = g[0] / *count as f64;
                    let mut d = vec![0.0; probs.len()];
                    for b in 0..n {
                        for p in 0..plane {
                            let px = b * plane + p;
                            if !mask[px] {
                                continue;
                            }
                            for k in 0..c {
                                let idx = (b * c + k) * plane + p;
                                let onehot = if k == labels[px] { 1.0 } else { 0.0 };
                                d[idx] = s * (probs[idx] - onehot);
                            }
                        }
                    }
                    out.push((*logits, d));
                }
            }
        }
        out
    }
}

fn dims(t: &Tensor) -> [usize; 4] {
    match t.shape() {
        &[n, c, h, w] => [n, c, h, w],
        other => unreachable!("recorded spatial op with rank {}", other.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec1(values: &[f64]) -> Tensor {
        Tensor::new(vec![values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn elementary_values() {
        let mut t = Tape::new();
        let e = t.constant(vec1(&[std::f64::consts::E]));
        let l = t.log(e).unwrap();
        assert!((t.value(l).values()[0] - 1.0).abs() < 1e-15);
        let x = t.constant(vec1(&[-3.0, 2.0]));
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).values(), &[0.0, 2.0]);
    }

    #[test]
    fn exp_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[0.0]));
        let y = t.exp(x).unwrap();
        let s = t.sum(y, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[0.0, 1.0, -1.0]));
        let y = t.relu(x).unwrap();
        let s = t.sum(y, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn masked_mean_and_sum() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[1.0, 2.0, 3.0]));
        let m = t.mean(x, Some(&[true, false, true])).unwrap();
        assert_eq!(t.value(m).item(), Some(2.0));
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.5, 0.0, 0.5]);

        let mut t = Tape::new();
        let x = t.constant(vec1(&[1.0, 2.0, 3.0]));
        let s = t.sum(x, None).unwrap();
        assert_eq!(t.value(s).item(), Some(6.0));
    }

    #[test]
    fn empty_masked_mean_errors() {
        let mut t = Tape::new();
        let x = t.constant(vec1(&[1.0, 2.0]));
        assert_eq!(t.mean(x, Some(&[false, false])), Err(TensorError::EmptyReduction));
        // a masked sum over nothing is simply zero
        let s = t.sum(x, Some(&[false, false])).unwrap();
        assert_eq!(t.value(s).item(), Some(0.0));
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[1.0, 2.0]));
        let sq = t.square(x).unwrap();
        let s = t.sum(sq, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_lifecycle_errors() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
        let s = t.sum(x, None).unwrap();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0]);
        assert_eq!(t.backward(s), Err(TensorError::StaleTape));
        t.reset_grads();
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn domain_errors() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[1.0, 0.0]));
        assert!(matches!(t.log(x), Err(TensorError::Domain { index: 1, .. })));
        let one = t.constant(vec1(&[1.0, 1.0]));
        assert!(matches!(t.div(one, x), Err(TensorError::Domain { .. })));
        let big = t.constant(vec1(&[1000.0]));
        assert_eq!(t.exp(big), Err(TensorError::NonFinite { op: "exp" }));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut t = Tape::new();
        let a = t.constant(vec1(&[1.0, 2.0]));
        let b = t.constant(vec1(&[1.0, 2.0, 3.0]));
        assert!(matches!(t.add(a, b), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn scalar_broadcast_accumulates_gradient() {
        let mut t = Tape::new();
        let a = t.param(vec1(&[1.0, 2.0, 3.0]));
        let s = t.param(Tensor::scalar(2.0));
        let p = t.mul(a, s).unwrap();
        let r = t.sum(p, None).unwrap();
        t.backward(r).unwrap();
        assert_eq!(t.grad(s).unwrap(), &[6.0]);
        assert_eq!(t.grad(a).unwrap(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.param(vec1(&[1.0]));
        let c = t.constant(vec1(&[3.0]));
        let p = t.mul(a, c).unwrap();
        let r = t.sum(p, None).unwrap();
        t.backward(r).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(a).unwrap(), &[3.0]);
    }

    #[test]
    fn shared_input_gradients_accumulate() {
        // y = x * x via mul reuses x on both sides
        let mut t = Tape::new();
        let x = t.param(vec1(&[3.0]));
        let y = t.mul(x, x).unwrap();
        let r = t.sum(y, None).unwrap();
        t.backward(r).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_ce_uniform_and_saturated() {
        let mut t = Tape::new();
        let logits = t.constant(Tensor::zeros(vec![1, 2, 1, 3]).unwrap());
        let l = t.sparse_softmax_ce(logits, &[0, 1, 0], &[true, true, true]).unwrap();
        assert!((t.value(l).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let logits = t.constant(Tensor::new(vec![1, 2, 1, 1], vec![30.0, 0.0]).unwrap());
        let l = t.sparse_softmax_ce(logits, &[0], &[true]).unwrap();
        assert!(t.value(l).item().unwrap() < 1e-9);

        assert_eq!(
            t.sparse_softmax_ce(logits, &[2], &[true]),
            Err(TensorError::LabelOutOfRange { label: 2, n_cls: 2 })
        );
        assert_eq!(
            t.sparse_softmax_ce(logits, &[0], &[false]),
            Err(TensorError::EmptyReduction)
        );
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let mut t = Tape::new();
        let x = t.param(vec1(&[1.0, 2.0]));
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        assert_eq!(t.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(t.dropout(x, 1.0, &mut rng).is_err());
    }
}
