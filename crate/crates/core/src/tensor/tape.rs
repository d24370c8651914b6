//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Nodes are appended in evaluation order, so the tape is topologically
//! sorted by construction. `backward` walks it once in reverse and only
//! propagates into nodes that depend on a leaf created with [`Tape::leaf`];
//! anything built purely from [`Tape::constant`] receives no gradient.

use super::{gemm, Tensor};
use crate::error::{Error, Result};

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
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    MulRow(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softplus(usize),
    LogSigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Sqrt(usize),
    Softmax(usize),
    LogSoftmax(usize),
    LogSumExp(usize),
    Sum(usize),
    Mean(usize),
    SumLast(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    Transpose(usize),
    Reshape(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::MulRow(..) => "mul_row",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::LogSumExp(_) => "logsumexp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Transpose(_) => "transpose",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-writer record of a differentiable computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` was not reached.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
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

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Splits a shape around `axis` into (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Turns on NaN/Inf detection: every op then fails with
    /// [`Error::NonFinite`] instead of recording a non-finite value.
    pub fn with_finite_checks(mut self, on: bool) -> Self {
        self.check_finite = on;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn leaves(&mut self, values: &[&Tensor]) -> Vec<Var> {
        values.iter().map(|t| self.leaf((*t).clone())).collect()
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let value = self.value(a).zip_map(self.value(b), f)?;
        self.push(value, op, &[a.0, b.0])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(value, op, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div(a.0, b.0), |x, y| x / y)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a.0, b.0), &[a.0, b.0])
    }

    /// `x[.., d] + b[d]`, broadcasting the bias over leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let value = self.row_broadcast("add_bias", x, b, |u, v| u + v)?;
        self.push(value, Op::AddBias(x.0, b.0), &[x.0, b.0])
    }

    /// `x[.., d] * v[d]`, scaling every row elementwise.
    pub fn mul_row(&mut self, x: Var, v: Var) -> Result<Var> {
        let value = self.row_broadcast("mul_row", x, v, |u, w| u * w)?;
        self.push(value, Op::MulRow(x.0, v.0), &[x.0, v.0])
    }

    fn row_broadcast(
        &self,
        op: &'static str,
        x: Var,
        v: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let (xv, vv) = (self.value(x), self.value(v));
        if vv.shape().len() != 1 || xv.cols() != vv.len() {
            return Err(Error::shape(op, xv.shape(), vv.shape()));
        }
        let d = vv.len();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o = f(*o, vv.data()[i % d]);
        }
        Ok(out)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Neg(a.0), |x| -x)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a.0, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a.0), |x| x + c)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a.0), super::fastmath::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sigmoid(a.0), sigmoid)
    }

    /// `log(1 + exp(x))`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a.0), softplus)
    }

    /// `log σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSigmoid(a.0), |x| -softplus(-x))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a.0), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a.0), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a.0), f64::sqrt)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax_last(self.value(a));
        self.push(value, Op::Softmax(a.0), &[a.0])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let lse = logsumexp_last(x);
        let d = x.cols();
        let mut out = x.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o -= lse[i / d];
        }
        self.push(out, Op::LogSoftmax(a.0), &[a.0])
    }

    /// Log-sum-exp over the last axis; `[.., d] -> [..]` (a vector becomes `[1]`).
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let shape = reduced_shape(x.shape());
        let value = Tensor::from_vec(shape, logsumexp_last(x))?;
        self.push(value, Op::LogSumExp(a.0), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).mean());
        self.push(value, Op::Mean(a.0), &[a.0])
    }

    /// Sum over the last axis; `[.., d] -> [..]`.
    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let d = x.cols();
        let data = x.data().chunks(d).map(|c| c.iter().sum()).collect();
        let value = Tensor::from_vec(reduced_shape(x.shape()), data)?;
        self.push(value, Op::SumLast(a.0), &[a.0])
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::domain("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let len = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * len..(o + 1) * len]);
            }
        }
        let value = Tensor::from_vec(shape, data)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        self.push(
            value,
            Op::Concat {
                parts: idx.clone(),
                axis,
            },
            &idx,
        )
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || start >= end || end > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, end]));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * len * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = end - start;
        let value = Tensor::from_vec(shape, data)?;
        self.push(
            value,
            Op::Slice {
                src: x.0,
                axis,
                start,
            },
            &[x.0],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        self.push(value, Op::Transpose(x.0), &[x.0])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        self.push(value, Op::Reshape(x.0), &[x.0])
    }

    /// Gradient of a scalar output (seed 1).
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("grad", self.shape(output), &[1]));
        }
        self.backward(output, &Tensor::scalar(1.0))
    }

    /// Reverse sweep: returns `∂(seedᵀ·output)/∂v` for every node `v`.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        let out_shape = self.shape(output);
        if seed.len() != self.value(output).len() {
            return Err(Error::shape("backward", out_shape, seed.shape()));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        if self.nodes[output.0].requires_grad {
            grads[output.0] = Some(seed.data().to_vec());
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut shapes: Vec<Vec<usize>> =
            self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, g) in grads.into_iter().enumerate() {
            out.push(g.map(|d| {
                Tensor::from_vec(std::mem::take(&mut shapes[i]), d).expect("gradient matches node")
            }));
            if shapes[i].is_empty() {
                shapes[i] = self.nodes[i].value.shape().to_vec();
            }
        }
        out.resize(self.nodes.len(), None);
        Ok(Gradients { grads: out, shapes })
    }

    fn wants(&self, j: usize) -> bool {
        self.nodes[j].requires_grad
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, 1.0, g));
                self.acc_with(grads, *b, |d| axpy(d, 1.0, g));
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, |d| axpy(d, 1.0, g));
                self.acc_with(grads, *b, |d| axpy(d, -1.0, g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                self.acc_with(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                self.acc_with(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                self.acc_with(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / bv[k];
                    }
                });
                self.acc_with(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * y[k] / bv[k];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[*a].value.shape(), self.nodes[*b].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                // dA = G·Bᵀ, dB = Aᵀ·G
                self.acc_with(grads, *a, |d| gemm(m, n, k, g, false, bv, true, d, 1.0));
                self.acc_with(grads, *b, |d| gemm(k, m, n, av, true, g, false, d, 1.0));
            }
            Op::AddBias(x, b) => {
                self.acc_with(grads, *x, |d| axpy(d, 1.0, g));
                self.acc_with(grads, *b, |d| {
                    let c = d.len();
                    for (k, gk) in g.iter().enumerate() {
                        d[k % c] += gk;
                    }
                });
            }
            Op::MulRow(x, v) => {
                let (xv, vv) = (val(*x), val(*v));
                let c = vv.len();
                self.acc_with(grads, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vv[k % c];
                    }
                });
                self.acc_with(grads, *v, |d| {
                    for (k, gk) in g.iter().enumerate() {
                        d[k % c] += gk * xv[k];
                    }
                });
            }
            Op::Neg(a) => self.acc_with(grads, *a, |d| axpy(d, -1.0, g)),
            Op::Scale(a, c) => self.acc_with(grads, *a, |d| axpy(d, *c, g)),
            Op::AddScalar(a) | Op::Reshape(a) => self.acc_with(grads, *a, |d| axpy(d, 1.0, g)),
            Op::Tanh(a) => self.acc_elementwise(grads, *a, g, |k| 1.0 - y[k] * y[k]),
            Op::Sigmoid(a) => self.acc_elementwise(grads, *a, g, |k| y[k] * (1.0 - y[k])),
            Op::Softplus(a) => {
                let x = val(*a);
                self.acc_elementwise(grads, *a, g, |k| sigmoid(x[k]))
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                self.acc_elementwise(grads, *a, g, |k| sigmoid(-x[k]))
            }
            Op::Exp(a) => self.acc_elementwise(grads, *a, g, |k| y[k]),
            Op::Log(a) => {
                let x = val(*a);
                self.acc_elementwise(grads, *a, g, |k| 1.0 / x[k])
            }
            Op::Square(a) => {
                let x = val(*a);
                self.acc_elementwise(grads, *a, g, |k| 2.0 * x[k])
            }
            Op::Sqrt(a) => self.acc_elementwise(grads, *a, g, |k| 0.5 / y[k]),
            Op::Softmax(a) => {
                let c = node.value.cols();
                self.acc_with(grads, *a, |d| {
                    for (r, (gr, yr)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                        let dotp: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            d[r * c + j] += yr[j] * (gr[j] - dotp);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                self.acc_with(grads, *a, |d| {
                    for (r, (gr, yr)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                        let total: f64 = gr.iter().sum();
                        for j in 0..c {
                            d[r * c + j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::LogSumExp(a) => {
                let x = &self.nodes[*a].value;
                let c = x.cols();
                self.acc_with(grads, *a, |d| {
                    for (r, xr) in x.data().chunks(c).enumerate() {
                        for j in 0..c {
                            d[r * c + j] += g[r] * (xr[j] - y[r]).exp();
                        }
                    }
                });
            }
            Op::Sum(a) => self.acc_with(grads, *a, |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(a) => self.acc_with(grads, *a, |d| {
                let s = g[0] / d.len() as f64;
                d.iter_mut().for_each(|v| *v += s)
            }),
            Op::SumLast(a) => {
                let c = self.nodes[*a].value.cols();
                self.acc_with(grads, *a, |d| {
                    for (k, v) in d.iter_mut().enumerate() {
                        *v += g[k / c];
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                let stride = node.value.shape()[*axis] * inner;
                for &p in parts {
                    let len = self.nodes[p].value.shape()[*axis] * inner;
                    self.acc_with(grads, p, |d| {
                        for o in 0..outer {
                            let src = &g[o * stride + offset..o * stride + offset + len];
                            axpy(&mut d[o * len..(o + 1) * len], 1.0, src);
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let full = self.nodes[*src].value.shape();
                let (outer, len, inner) = axis_split(full, *axis);
                let width = node.value.shape()[*axis] * inner;
                self.acc_with(grads, *src, |d| {
                    for o in 0..outer {
                        let base = o * len * inner + start * inner;
                        axpy(&mut d[base..base + width], 1.0, &g[o * width..(o + 1) * width]);
                    }
                });
            }
            Op::Transpose(a) => {
                let s = node.value.shape();
                let (r, c) = (s[0], s[1]);
                self.acc_with(grads, *a, |d| {
                    for i2 in 0..r {
                        for j in 0..c {
                            d[j * r + i2] += g[i2 * c + j];
                        }
                    }
                });
            }
        }
    }

    fn acc_with(&self, grads: &mut [Option<Vec<f64>>], j: usize, f: impl FnOnce(&mut [f64])) {
        if !self.wants(j) {
            return;
        }
        let d = grads[j].get_or_insert_with(|| vec![0.0; self.nodes[j].value.len()]);
        f(d);
    }

    fn acc_elementwise(
        &self,
        grads: &mut [Option<Vec<f64>>],
        j: usize,
        g: &[f64],
        local: impl Fn(usize) -> f64,
    ) {
        self.acc_with(grads, j, |d| {
            for k in 0..d.len() {
                d[k] += g[k] * local(k);
            }
        });
    }
}

fn axpy(d: &mut [f64], c: f64, g: &[f64]) {
    for (a, b) in d.iter_mut().zip(g) {
        *a += c * b;
    }
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    if shape.len() <= 1 {
        vec![1]
    } else {
        shape[..shape.len() - 1].to_vec()
    }
}

pub(crate) fn logsumexp_last(x: &Tensor) -> Vec<f64> {
    let c = x.cols();
    x.data()
        .chunks(c)
        .map(|row| logsumexp(row))
        .collect()
}

/// Numerically stable `log Σ exp(x_i)`; `-inf` for an all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_last(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}
