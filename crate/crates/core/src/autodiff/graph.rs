use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_raw, transpose_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How the right operand of an elementwise binary op lines up with the left.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    Same,
    /// Right operand is a vector matching the left operand's last extent.
    Row,
    /// Right operand holds a single value.
    Scalar,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Broadcast),
    Sub(Var, Var, Broadcast),
    Mul(Var, Var, Broadcast),
    Scale(Var, f64),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Logit(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Reshape(Var),
    Gather(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Tape of recorded tensor operations.
///
/// Nodes are appended in evaluation order, so every operand index is smaller
/// than the index of the node consuming it and a single reverse sweep is a
/// valid topological traversal. Graphs are cheap and meant to be rebuilt for
/// every minibatch.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`]: one gradient per node that lies on a path
/// from a trainable leaf to the loss.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the right shape when `v` does not
    /// influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::from_parts(
                self.shapes[v.0].clone(),
                vec![0.0; self.shapes[v.0].iter().product()],
            ),
        }
    }
}

fn domain(op: &'static str, value: f64, domain: &'static str) -> Error {
    Error::Domain { op, value, domain }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
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

fn softmax_rows(x: &[f64], cols: usize, log: bool) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let m = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = src.iter().map(|v| (v - m).exp()).sum();
        if log {
            let lz = z.ln() + m;
            for (d, s) in dst.iter_mut().zip(src) {
                *d = s - lz;
            }
        } else {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - m).exp() / z;
            }
        }
    }
    out
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn unary(&mut self, x: Var, value: Tensor, op: Op) -> Var {
        let ng = self.needs(x);
        self.push(value, op, ng)
    }

    /// Trainable leaf: gradients flow into it.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Constant leaf: treated as fixed during backward.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2().ok_or_else(|| mismatch("matmul", ta, tb))?;
        let (k2, n) = tb.dims2().ok_or_else(|| mismatch("matmul", ta, tb))?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = Tensor::from_parts(vec![m, n], matmul_raw(ta.data(), tb.data(), m, k, n));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).transpose()?;
        Ok(self.unary(x, t, Op::Transpose(x)))
    }

    fn broadcast_kind(&self, op: &'static str, a: Var, b: Var) -> Result<Broadcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            Ok(Broadcast::Same)
        } else if tb.rank() == 1 && ta.rank() >= 1 && tb.numel() == ta.cols() {
            Ok(Broadcast::Row)
        } else if tb.rank() == 0 {
            Ok(Broadcast::Scalar)
        } else {
            Err(mismatch(op, ta, tb))
        }
    }

    fn binary_values(&self, a: Var, b: Var, bc: Broadcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let bd = tb.data();
        let data = match bc {
            Broadcast::Same => ta.data().iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Row => {
                let c = bd.len();
                ta.data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, bd[i % c]))
                    .collect()
            }
            Broadcast::Scalar => ta.data().iter().map(|&x| f(x, bd[0])).collect(),
        };
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    /// Elementwise sum. `b` may also be a row vector added to every row of
    /// `a`, or a rank-0 scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind("add", a, b)?;
        let out = self.binary_values(a, b, bc, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b, bc), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind("sub", a, b)?;
        let out = self.binary_values(a, b, bc, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b, bc), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast_kind("mul", a, b)?;
        let out = self.binary_values(a, b, bc, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b, bc), ng))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v * s);
        Ok(self.unary(x, t, Op::Scale(x, s)))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        let t = self.value(x).map(|v| v + s);
        Ok(self.unary(x, t, Op::AddScalar(x)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().sum();
        Ok(self.unary(x, Tensor::scalar(s), Op::Sum(x)))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.unary(x, Tensor::scalar(s), Op::Mean(x)))
    }

    /// Elementwise exponential; overflow to infinity is a domain error.
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(&v) = t.data().iter().find(|v| !v.exp().is_finite()) {
            return Err(domain("exp", v, "(-inf, 709.78]"));
        }
        let t = t.map(f64::exp);
        Ok(self.unary(x, t, Op::Exp(x)))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(&v) = t.data().iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(domain("log", v, "(0, inf)"));
        }
        let t = t.map(f64::ln);
        Ok(self.unary(x, t, Op::Log(x)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(sigmoid);
        Ok(self.unary(x, t, Op::Sigmoid(x)))
    }

    /// Inverse sigmoid, `ln(p / (1 - p))`.
    pub fn logit(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if let Some(&v) = t.data().iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(domain("logit", v, "(0, 1)"));
        }
        let t = t.map(|p| (p / (1.0 - p)).ln());
        Ok(self.unary(x, t, Op::Logit(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(f64::tanh);
        Ok(self.unary(x, t, Op::Tanh(x)))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        Ok(self.unary(x, t, Op::LeakyRelu(x, slope)))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), t.cols(), false));
        Ok(self.unary(x, out, Op::Softmax(x)))
    }

    /// Log-softmax along the last axis, computed with the max-shift identity.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let out = Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), t.cols(), true));
        Ok(self.unary(x, out, Op::LogSoftmax(x)))
    }

    /// Projects values into `[lo, hi]`; the gradient is zero wherever the
    /// input lies outside that interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        let t = self.value(x).map(|v| v.clamp(lo, hi));
        Ok(self.unary(x, t, Op::Clamp(x, lo, hi)))
    }

    /// Concatenates rank-1 or rank-2 tensors along `axis`.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = self.value(first).rank();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(Error::InvalidShape {
                shape: self.shape(first).to_vec(),
                reason: format!("concat along axis {axis} needs rank 1 or 2"),
            });
        }
        for &p in &parts[1..] {
            let (a, b) = (self.value(first), self.value(p));
            let ok = a.rank() == b.rank()
                && a.shape()
                    .iter()
                    .zip(b.shape())
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !ok {
                return Err(mismatch("concat", a, b));
            }
        }
        let out = if rank == 1 || axis == 0 {
            let mut data = Vec::new();
            let mut shape = self.shape(first).to_vec();
            shape[0] = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                shape[0] += self.shape(p)[0];
            }
            Tensor::from_parts(shape, data)
        } else {
            let rows = self.value(first).rows();
            let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::from_parts(vec![rows, total], data)
        };
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis), ng))
    }

    /// Half-open range `[start, end)` along `axis` of a rank-1 or rank-2 tensor.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        let rank = t.rank();
        if rank == 0 || rank > 2 || axis >= rank || start >= end || end > t.shape()[axis] {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                reason: format!("cannot slice [{start}, {end}) along axis {axis}"),
            });
        }
        let out = if rank == 1 || axis == 0 {
            let inner: usize = t.shape()[1..].iter().product();
            let mut shape = t.shape().to_vec();
            shape[0] = end - start;
            Tensor::from_parts(shape, t.data()[start * inner..end * inner].to_vec())
        } else {
            let rows = t.rows();
            let mut data = Vec::with_capacity(rows * (end - start));
            for r in 0..rows {
                data.extend_from_slice(&t.row(r)[start..end]);
            }
            Tensor::from_parts(vec![rows, end - start], data)
        };
        Ok(self.unary(x, out, Op::Slice { src: x, axis, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape.to_vec())?;
        Ok(self.unary(x, t, Op::Reshape(x)))
    }

    /// Picks column `indices[r]` from every row `r` of a matrix, giving a vector.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.dims2().ok_or_else(|| Error::InvalidShape {
            shape: t.shape().to_vec(),
            reason: "gather needs a matrix".into(),
        })?;
        if indices.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "gather",
                lhs: t.shape().to_vec(),
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(Error::invalid(format!("gather index {bad} out of range for {cols} columns")));
        }
        let data = indices.iter().enumerate().map(|(r, &c)| t.get2(r, c)).collect();
        let out = Tensor::from_parts(vec![rows], data);
        Ok(self.unary(x, out, Op::Gather(x, indices.to_vec())))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::from_parts(lt.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reduces an upstream gradient to the shape of a broadcast right operand.
    fn reduce_broadcast(&self, g: &[f64], b: Var, bc: Broadcast) -> Tensor {
        let tb = self.value(b);
        let data = match bc {
            Broadcast::Same => g.to_vec(),
            Broadcast::Row => {
                let c = tb.numel();
                let mut acc = vec![0.0; c];
                for (i, v) in g.iter().enumerate() {
                    acc[i % c] += v;
                }
                acc
            }
            Broadcast::Scalar => vec![g.iter().sum()],
        };
        Tensor::from_parts(tb.shape().to_vec(), data)
    }

    fn elementwise(&self, x: Var, g: &Tensor, f: impl Fn(f64, f64, f64) -> f64, out: &Tensor) -> Tensor {
        let xv = self.value(x);
        let data = g
            .data()
            .iter()
            .zip(xv.data())
            .zip(out.data())
            .map(|((&gv, &xv), &ov)| f(gv, xv, ov))
            .collect();
        Tensor::from_parts(xv.shape().to_vec(), data)
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                let (m, k) = ta.dims2().unwrap();
                let n = tb.cols();
                if self.needs(a) {
                    let da = matmul_nt_raw(g.data(), tb.data(), m, n, k);
                    self.accumulate(grads, a, Tensor::from_parts(vec![m, k], da));
                }
                if self.needs(b) {
                    let db = matmul_tn_raw(ta.data(), g.data(), m, k, n);
                    self.accumulate(grads, b, Tensor::from_parts(vec![k, n], db));
                }
            }
            &Op::Transpose(x) => {
                let (r, c) = out.dims2().unwrap();
                let d = transpose_raw(g.data(), r, c);
                self.accumulate(grads, x, Tensor::from_parts(vec![c, r], d));
            }
            &Op::Add(a, b, bc) => {
                self.accumulate(grads, a, g.clone());
                if self.needs(b) {
                    let db = self.reduce_broadcast(g.data(), b, bc);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Sub(a, b, bc) => {
                self.accumulate(grads, a, g.clone());
                if self.needs(b) {
                    let neg: Vec<f64> = g.data().iter().map(|v| -v).collect();
                    let db = self.reduce_broadcast(&neg, b, bc);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Mul(a, b, bc) => {
                if self.needs(a) {
                    let da = {
                        let tb = self.value(b).data();
                        let c = tb.len();
                        let d = g
                            .data()
                            .iter()
                            .enumerate()
                            .map(|(i, gv)| {
                                gv * match bc {
                                    Broadcast::Same => tb[i],
                                    Broadcast::Row => tb[i % c],
                                    Broadcast::Scalar => tb[0],
                                }
                            })
                            .collect();
                        Tensor::from_parts(out.shape().to_vec(), d)
                    };
                    self.accumulate(grads, a, da);
                }
                if self.needs(b) {
                    let prod: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let db = self.reduce_broadcast(&prod, b, bc);
                    self.accumulate(grads, b, db);
                }
            }
            &Op::Scale(x, s) => self.accumulate(grads, x, g.map(|v| v * s)),
            &Op::AddScalar(x) => self.accumulate(grads, x, g.clone()),
            &Op::Sum(x) => {
                let t = self.value(x);
                let gv = g.data()[0];
                self.accumulate(grads, x, Tensor::from_parts(t.shape().to_vec(), vec![gv; t.numel()]));
            }
            &Op::Mean(x) => {
                let t = self.value(x);
                let gv = g.data()[0] / t.numel() as f64;
                self.accumulate(grads, x, Tensor::from_parts(t.shape().to_vec(), vec![gv; t.numel()]));
            }
            &Op::Exp(x) => {
                let d = self.elementwise(x, g, |gv, _, o| gv * o, out);
                self.accumulate(grads, x, d);
            }
            &Op::Log(x) => {
                let d = self.elementwise(x, g, |gv, xv, _| gv / xv, out);
                self.accumulate(grads, x, d);
            }
            &Op::Sigmoid(x) => {
                let d = self.elementwise(x, g, |gv, _, o| gv * o * (1.0 - o), out);
                self.accumulate(grads, x, d);
            }
            &Op::Logit(x) => {
                let d = self.elementwise(x, g, |gv, p, _| gv / (p * (1.0 - p)), out);
                self.accumulate(grads, x, d);
            }
            &Op::Tanh(x) => {
                let d = self.elementwise(x, g, |gv, _, o| gv * (1.0 - o * o), out);
                self.accumulate(grads, x, d);
            }
            &Op::LeakyRelu(x, slope) => {
                let d = self.elementwise(x, g, |gv, xv, _| if xv > 0.0 { gv } else { gv * slope }, out);
                self.accumulate(grads, x, d);
            }
            &Op::Softmax(x) => {
                let c = out.cols();
                let mut d = vec![0.0; out.numel()];
                for ((s, gr), dr) in out.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                    let dot: f64 = s.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, sv), gv) in dr.iter_mut().zip(s).zip(gr) {
                        *dv = sv * (gv - dot);
                    }
                }
                self.accumulate(grads, x, Tensor::from_parts(out.shape().to_vec(), d));
            }
            &Op::LogSoftmax(x) => {
                let c = out.cols();
                let mut d = vec![0.0; out.numel()];
                for ((ls, gr), dr) in out.data().chunks(c).zip(g.data().chunks(c)).zip(d.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for ((dv, l), gv) in dr.iter_mut().zip(ls).zip(gr) {
                        *dv = gv - l.exp() * total;
                    }
                }
                self.accumulate(grads, x, Tensor::from_parts(out.shape().to_vec(), d));
            }
            &Op::Clamp(x, lo, hi) => {
                let d = self.elementwise(x, g, |gv, xv, _| if xv >= lo && xv <= hi { gv } else { 0.0 }, out);
                self.accumulate(grads, x, d);
            }
            Op::Concat(parts, axis) => {
                let rank = out.rank();
                if rank == 1 || *axis == 0 {
                    let inner: usize = out.shape()[1..].iter().product();
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let len = t.shape()[0] * inner;
                        let d = g.data()[offset..offset + len].to_vec();
                        offset += len;
                        self.accumulate(grads, p, Tensor::from_parts(t.shape().to_vec(), d));
                    }
                } else {
                    let rows = out.rows();
                    let mut col = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        if self.needs(p) {
                            let mut d = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                d.extend_from_slice(&g.row(r)[col..col + w]);
                            }
                            self.accumulate(grads, p, Tensor::from_parts(vec![rows, w], d));
                        }
                        col += w;
                    }
                }
            }
            &Op::Slice { src, axis, start } => {
                let t = self.value(src);
                let mut d = vec![0.0; t.numel()];
                if t.rank() == 1 || axis == 0 {
                    let inner: usize = t.shape()[1..].iter().product();
                    d[start * inner..start * inner + g.numel()].copy_from_slice(g.data());
                } else {
                    let (c, w) = (t.cols(), out.cols());
                    for r in 0..t.rows() {
                        d[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                    }
                }
                self.accumulate(grads, src, Tensor::from_parts(t.shape().to_vec(), d));
            }
            &Op::Reshape(x) => {
                let shape = self.value(x).shape().to_vec();
                self.accumulate(grads, x, Tensor::from_parts(shape, g.data().to_vec()));
            }
            Op::Gather(x, idx) => {
                let t = self.value(*x);
                let c = t.cols();
                let mut d = vec![0.0; t.numel()];
                for (r, (&col, gv)) in idx.iter().zip(g.data()).enumerate() {
                    d[r * c + col] = *gv;
                }
                self.accumulate(grads, *x, Tensor::from_parts(t.shape().to_vec(), d));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(g.value(y).item(), Some(9.0));
        assert_eq!(grads.wrt(x).item(), Some(6.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([4]).unwrap());
        let s = g.sigmoid(x).unwrap();
        let l = g.sum(s).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.wrt(x).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn logit_and_leaky_relu_values() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::scalar(0.5));
        let l = g.logit(p).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        let x = g.constant(Tensor::scalar(-1.0));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).item(), Some(-0.2));
    }

    #[test]
    fn domain_violations_are_errors() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![1.0, 0.0]).unwrap());
        assert!(matches!(g.log(z), Err(Error::Domain { op: "log", .. })));
        let one = g.constant(Tensor::scalar(1.0));
        assert!(matches!(g.logit(one), Err(Error::Domain { op: "logit", .. })));
        let big = g.constant(Tensor::scalar(1000.0));
        assert!(matches!(g.exp(big), Err(Error::Domain { op: "exp", .. })));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([2, 3]).unwrap());
        let b = g.constant(Tensor::zeros([2, 3]).unwrap());
        match g.matmul(a, b) {
            Err(Error::ShapeMismatch { op, lhs, rhs }) => {
                assert_eq!(op, "matmul");
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = g.constant(Tensor::zeros([4]).unwrap());
        assert!(g.add(a, c).is_err());
    }

    #[test]
    fn backward_preconditions() {
        let g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::EmptyGraph)));
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([2]).unwrap());
        assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn unreachable_params_get_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let unused = g.param(Tensor::zeros([3]).unwrap());
        let l = g.sum(x).unwrap();
        let grads = g.backward(l).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -50.0, 0.0, 50.0]).unwrap());
        let s = g.softmax(x).unwrap();
        for r in 0..2 {
            let total: f64 = g.value(s).row(r).iter().sum();
            assert!((total - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn row_broadcast_add_reduces_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros([3, 2]).unwrap());
        let b = g.param(Tensor::vector(vec![1.0, -1.0]).unwrap());
        let y = g.add(x, b).unwrap();
        let l = g.sum(y).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.wrt(b).data(), &[3.0, 3.0]);
    }
}
