//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value, so the node
//! list is a topological order by construction. [`Graph::backward`] walks it
//! in reverse, accumulating vector-Jacobian products into each input.
//!
//! Elementwise binary ops broadcast when one operand's shape is a suffix of
//! the other's (a bias `[d]` against activations `[b, m, d]`). Row-wise ops
//! (`softmax_rows`, `layer_norm`, `slice`, `concat`) act on the last axis.

use super::gemm::gemm;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds supported by [`Graph::apply`].
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Sub,
    Mul,
    Relu,
    Silu,
    SoftmaxRows,
    LogSoftmaxRows,
    LayerNorm { eps: f64 },
    Concat,
    Slice { start: usize, end: usize },
    Mean,
    Sum,
    SumSquares,
    Exp,
    Log,
    Scale(f64),
    Transpose,
    Reshape(Vec<usize>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Relu => "relu",
            OpKind::Silu => "silu",
            OpKind::SoftmaxRows => "softmax_rows",
            OpKind::LogSoftmaxRows => "log_softmax_rows",
            OpKind::LayerNorm { .. } => "layer_norm",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::SumSquares => "sum_squares",
            OpKind::Exp => "exp",
            OpKind::Log => "log",
            OpKind::Scale(_) => "scale",
            OpKind::Transpose => "transpose",
            OpKind::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, batched: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Silu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm { x: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Mean(Var),
    Sum(Var),
    SumSquares(Var),
    Exp(Var),
    Log(Var),
    Scale(Var, f64),
    Transpose(Var),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Gradients produced by one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn last_dim(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
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

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, name: &'static str) -> Result<Var> {
        if cfg!(debug_assertions) && value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = self.op_requires_grad(&op);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_requires_grad(&self, op: &Op) -> bool {
        let rg = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::MatMul { a, b, .. } | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => rg(a) || rg(b),
            Op::Concat(xs) => xs.iter().any(rg),
            Op::Relu(x)
            | Op::Silu(x)
            | Op::SoftmaxRows(x)
            | Op::LogSoftmaxRows(x)
            | Op::LayerNorm { x, .. }
            | Op::Slice { x, .. }
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::SumSquares(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x) => rg(x),
        }
    }

    /// Records a leaf. Gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            op: Op::Leaf,
            requires_grad: t.requires_grad(),
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf built from raw parts.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.leaf(&t))
    }

    /// Binds a stored parameter as a trainable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: t.values().to_vec(),
            op: Op::Leaf,
            requires_grad: true,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Dispatches by [`OpKind`]; unary kinds use `inputs[0]`.
    pub fn apply(&mut self, kind: &OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Sub | OpKind::Mul => 2,
            OpKind::Concat => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(Error::invalid(
                kind.name(),
                format!("expected {} inputs, got {}", arity, inputs.len()),
            ));
        }
        let x = inputs[0];
        match kind {
            OpKind::MatMul => self.matmul(x, inputs[1]),
            OpKind::Add => self.add(x, inputs[1]),
            OpKind::Sub => self.sub(x, inputs[1]),
            OpKind::Mul => self.mul(x, inputs[1]),
            OpKind::Relu => self.relu(x),
            OpKind::Silu => self.silu(x),
            OpKind::SoftmaxRows => self.softmax_rows(x),
            OpKind::LogSoftmaxRows => self.log_softmax_rows(x),
            OpKind::LayerNorm { eps } => self.layer_norm(x, *eps),
            OpKind::Concat => self.concat(inputs),
            OpKind::Slice { start, end } => self.slice(x, *start, *end),
            OpKind::Mean => self.mean(x),
            OpKind::Sum => self.sum(x),
            OpKind::SumSquares => self.sum_squares(x),
            OpKind::Exp => self.exp(x),
            OpKind::Log => self.log(x),
            OpKind::Scale(c) => self.scale(x, *c),
            OpKind::Transpose => self.transpose(x),
            OpKind::Reshape(shape) => self.reshape(x, shape),
        }
    }

    // ---------------------------------------------------------------- linear

    /// `[.., m, k] x [k, n] -> [.., m, n]`, or batched
    /// `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::Shape {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.len() < 2 {
            return Err(mismatch());
        }
        let k = last_dim(&sa);
        match sb.len() {
            2 => {
                if sb[0] != k {
                    return Err(mismatch());
                }
                let n = sb[1];
                let rows: usize = sa[..sa.len() - 1].iter().product();
                let mut out = vec![0.0; rows * n];
                gemm(rows, k, n, self.value(a), false, self.value(b), false, &mut out, false);
                let mut shape = sa[..sa.len() - 1].to_vec();
                shape.push(n);
                self.push(shape, out, Op::MatMul { a, b, batched: false }, "matmul")
            }
            3 => {
                if sa.len() != 3 || sa[0] != sb[0] || sb[1] != k {
                    return Err(mismatch());
                }
                let (batch, m, n) = (sa[0], sa[1], sb[2]);
                let mut out = vec![0.0; batch * m * n];
                let (va, vb) = (self.value(a), self.value(b));
                for i in 0..batch {
                    gemm(
                        m,
                        k,
                        n,
                        &va[i * m * k..(i + 1) * m * k],
                        false,
                        &vb[i * k * n..(i + 1) * k * n],
                        false,
                        &mut out[i * m * n..(i + 1) * m * n],
                        false,
                    );
                }
                self.push(vec![batch, m, n], out, Op::MatMul { a, b, batched: true }, "matmul")
            }
            _ => Err(mismatch()),
        }
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(Error::invalid("transpose", format!("needs ndim >= 2, got {:?}", s)));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for (blk_in, blk_out) in v.chunks(r * c).zip(out.chunks_mut(r * c)) {
            for i in 0..r {
                for j in 0..c {
                    blk_out[j * r + i] = blk_in[i * c + j];
                }
            }
        }
        let mut shape = s.clone();
        let n = shape.len();
        shape.swap(n - 2, n - 1);
        self.push(shape, out, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape.to_vec(),
            });
        }
        let out = self.value(x).to_vec();
        self.push(shape.to_vec(), out, Op::Reshape(x), "reshape")
    }

    // ----------------------------------------------------------- elementwise

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(sa.to_vec());
        }
        if sa.len() >= sb.len() && sa.ends_with(sb) {
            return Ok(sa.to_vec());
        }
        if sb.len() > sa.len() && sb.ends_with(sa) {
            return Ok(sb.to_vec());
        }
        Err(Error::Shape {
            op,
            left: sa.to_vec(),
            right: sb.to_vec(),
        })
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let shape = self.broadcast(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let n: usize = shape.iter().product();
        let (la, lb) = (va.len(), vb.len());
        let out: Vec<f64> = (0..n).map(|i| f(va[i % la], vb[i % lb])).collect();
        self.push(shape, out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(shape, out, op, name)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        self.unary("silu", x, |v| v * sigmoid(v), Op::Silu(x))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary("exp", x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("log", "input must be strictly positive"));
        }
        self.unary("log", x, f64::ln, Op::Log(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.unary("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    // -------------------------------------------------------------- row-wise

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = last_dim(&shape);
        let mut out = self.value(x).to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                softmax_in_place(row);
            }
        }
        self.push(shape, out, Op::SoftmaxRows(x), "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = last_dim(&shape);
        let mut out = self.value(x).to_vec();
        if c > 0 {
            for row in out.chunks_mut(c) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
        }
        self.push(shape, out, Op::LogSoftmaxRows(x), "log_softmax_rows")
    }

    /// Normalizes each row to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = last_dim(&shape);
        if c == 0 {
            return Err(Error::invalid("layer_norm", "last axis is empty"));
        }
        let v = self.value(x);
        let mut xhat = vec![0.0; v.len()];
        let mut inv_std = Vec::with_capacity(v.len() / c);
        for (row, out) in v.chunks(c).zip(xhat.chunks_mut(c)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, r) in out.iter_mut().zip(row) {
                *o = (r - mean) * inv;
            }
            inv_std.push(inv);
        }
        let out = xhat.clone();
        self.push(shape, out, Op::LayerNorm { x, xhat, inv_std }, "layer_norm")
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("concat", "no inputs"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..s.len() - 1] != lead[..] {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(*first).to_vec(),
                    right: s.to_vec(),
                });
            }
            widths.push(last_dim(s));
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.push(shape, out, Op::Concat(xs.to_vec()), "concat")
    }

    /// Columns `start..end` of the last axis.
    pub fn slice(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let c = last_dim(&s);
        if start >= end || end > c {
            return Err(Error::invalid(
                "slice",
                format!("range {}..{} invalid for shape {:?}", start, end, s),
            ));
        }
        let w = end - start;
        let out: Vec<f64> = self
            .value(x)
            .chunks(c)
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        let mut shape = s;
        *shape.last_mut().unwrap() = w;
        self.push(shape, out, Op::Slice { x, start }, "slice")
    }

    // ------------------------------------------------------------ reductions

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::invalid("mean", "empty input"));
        }
        let m = self.value(x).iter().sum::<f64>() / n as f64;
        self.push(vec![1], vec![m], Op::Mean(x), "mean")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum::<f64>();
        self.push(vec![1], vec![s], Op::Sum(x), "sum")
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().map(|v| v * v).sum::<f64>();
        self.push(vec![1], vec![s], Op::SumSquares(x), "sum_squares")
    }

    // -------------------------------------------------------------- backward

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.propagate(node, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    /// Adds leaf gradients of bound parameters into `store`.
    pub fn write_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Some(id), Some(g)) = (node.param, g) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
    }

    fn propagate(&self, node: &Node, gout: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
            grads[id].get_or_insert_with(|| vec![0.0; len])
        }
        let len_of = |v: Var| nodes[v.0].value.len();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, batched } => {
                let (sa, sb) = (&nodes[a.0].shape, &nodes[b.0].shape);
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let k = last_dim(sa);
                if *batched {
                    let (batch, m, n) = (sa[0], sa[1], sb[2]);
                    if needs(*a) {
                        let ga = acc(grads, a.0, len_of(*a));
                        for i in 0..batch {
                            gemm(
                                m,
                                n,
                                k,
                                &gout[i * m * n..(i + 1) * m * n],
                                false,
                                &vb[i * k * n..(i + 1) * k * n],
                                true,
                                &mut ga[i * m * k..(i + 1) * m * k],
                                true,
                            );
                        }
                    }
                    if needs(*b) {
                        let gb = acc(grads, b.0, len_of(*b));
                        for i in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                &va[i * m * k..(i + 1) * m * k],
                                true,
                                &gout[i * m * n..(i + 1) * m * n],
                                false,
                                &mut gb[i * k * n..(i + 1) * k * n],
                                true,
                            );
                        }
                    }
                } else {
                    let n = sb[1];
                    let rows = gout.len() / n.max(1);
                    if needs(*a) {
                        let ga = acc(grads, a.0, len_of(*a));
                        gemm(rows, n, k, gout, false, vb, true, ga, true);
                    }
                    if needs(*b) {
                        let gb = acc(grads, b.0, len_of(*b));
                        gemm(k, rows, n, va, true, gout, false, gb, true);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if needs(*a) {
                    let la = len_of(*a);
                    let ga = acc(grads, a.0, la);
                    for (i, g) in gout.iter().enumerate() {
                        ga[i % la] += g;
                    }
                }
                if needs(*b) {
                    let lb = len_of(*b);
                    let gb = acc(grads, b.0, lb);
                    for (i, g) in gout.iter().enumerate() {
                        gb[i % lb] += sign * g;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (la, lb) = (va.len(), vb.len());
                if needs(*a) {
                    let ga = acc(grads, a.0, la);
                    for (i, g) in gout.iter().enumerate() {
                        ga[i % la] += g * vb[i % lb];
                    }
                }
                if needs(*b) {
                    let gb = acc(grads, b.0, lb);
                    for (i, g) in gout.iter().enumerate() {
                        gb[i % lb] += g * va[i % la];
                    }
                }
            }
            Op::Relu(x) => {
                let vx = &nodes[x.0].value;
                let gx = acc(grads, x.0, vx.len());
                for ((gx, g), v) in gx.iter_mut().zip(gout).zip(vx) {
                    if *v > 0.0 {
                        *gx += g;
                    }
                }
            }
            Op::Silu(x) => {
                let vx = &nodes[x.0].value;
                let gx = acc(grads, x.0, vx.len());
                for ((gx, g), v) in gx.iter_mut().zip(gout).zip(vx) {
                    let s = sigmoid(*v);
                    *gx += g * (s + v * s * (1.0 - s));
                }
            }
            Op::Exp(x) => {
                let y = &node.value;
                let gx = acc(grads, x.0, y.len());
                for ((gx, g), y) in gx.iter_mut().zip(gout).zip(y) {
                    *gx += g * y;
                }
            }
            Op::Log(x) => {
                let vx = &nodes[x.0].value;
                let gx = acc(grads, x.0, vx.len());
                for ((gx, g), v) in gx.iter_mut().zip(gout).zip(vx) {
                    *gx += g / v;
                }
            }
            Op::Scale(x, c) => {
                let gx = acc(grads, x.0, gout.len());
                for (gx, g) in gx.iter_mut().zip(gout) {
                    *gx += g * c;
                }
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = last_dim(&node.shape);
                let gx = acc(grads, x.0, y.len());
                for ((gx, g), y) in gx.chunks_mut(c).zip(gout.chunks(c)).zip(y.chunks(c)) {
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[j] += y[j] * (g[j] - dot);
                    }
                }
            }
            Op::LogSoftmaxRows(x) => {
                let y = &node.value;
                let c = last_dim(&node.shape);
                let gx = acc(grads, x.0, y.len());
                for ((gx, g), y) in gx.chunks_mut(c).zip(gout.chunks(c)).zip(y.chunks(c)) {
                    let total: f64 = g.iter().sum();
                    for j in 0..c {
                        gx[j] += g[j] - y[j].exp() * total;
                    }
                }
            }
            Op::LayerNorm { x, xhat, inv_std } => {
                let c = last_dim(&node.shape);
                let cf = c as f64;
                let gx = acc(grads, x.0, xhat.len());
                for (((gx, g), xh), inv) in gx
                    .chunks_mut(c)
                    .zip(gout.chunks(c))
                    .zip(xhat.chunks(c))
                    .zip(inv_std)
                {
                    let sum_g: f64 = g.iter().sum();
                    let sum_gx: f64 = g.iter().zip(xh).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        gx[j] += inv / cf * (cf * g[j] - sum_g - xh[j] * sum_gx);
                    }
                }
            }
            Op::Concat(xs) => {
                let total = last_dim(&node.shape);
                let rows = gout.len() / total.max(1);
                let mut offset = 0;
                for &x in xs {
                    let w = last_dim(&nodes[x.0].shape);
                    if needs(x) {
                        let gx = acc(grads, x.0, len_of(x));
                        for r in 0..rows {
                            for j in 0..w {
                                gx[r * w + j] += gout[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Slice { x, start } => {
                let c = last_dim(&nodes[x.0].shape);
                let w = last_dim(&node.shape);
                let gx = acc(grads, x.0, len_of(*x));
                for (r, g) in gout.chunks(w).enumerate() {
                    for j in 0..w {
                        gx[r * c + start + j] += g[j];
                    }
                }
            }
            Op::Mean(x) => {
                let n = len_of(*x);
                let gx = acc(grads, x.0, n);
                let share = gout[0] / n as f64;
                gx.iter_mut().for_each(|v| *v += share);
            }
            Op::Sum(x) => {
                let gx = acc(grads, x.0, len_of(*x));
                gx.iter_mut().for_each(|v| *v += gout[0]);
            }
            Op::SumSquares(x) => {
                let vx = &nodes[x.0].value;
                let gx = acc(grads, x.0, vx.len());
                for (gx, v) in gx.iter_mut().zip(vx) {
                    *gx += 2.0 * v * gout[0];
                }
            }
            Op::Transpose(x) => {
                let s = &node.shape;
                // node is [.., c, r]; input was [.., r, c]
                let (c, r) = (s[s.len() - 2], s[s.len() - 1]);
                let gx = acc(grads, x.0, gout.len());
                for (blk_g, blk_x) in gout.chunks(r * c).zip(gx.chunks_mut(r * c)) {
                    for i in 0..r {
                        for j in 0..c {
                            blk_x[i * c + j] += blk_g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let gx = acc(grads, x.0, gout.len());
                for (gx, g) in gx.iter_mut().zip(gout) {
                    *gx += g;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
