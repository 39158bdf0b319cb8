//! Define-by-run reverse-mode tape.
//!
//! Every primitive call appends a node holding its value; `backward` walks
//! the tape in reverse and accumulates adjoints. Inputs always precede the
//! node that consumes them, so reverse tape order is a valid topological
//! order.

use super::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    MatVec,
    MatMul,
    Add,
    Scale,
    ScaleConst,
    Tanh,
    Relu,
    Softmax,
    Sigmoid,
    MeanRows,
    SquaredError,
    CrossEntropy,
    Concat,
    Select,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatVec(Var, Var),
    MatMul(Var, Var),
    Add(Vec<Var>),
    Scale(Var, Var),
    ScaleConst(Var, f64),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Sigmoid(Var),
    MeanRows(Var),
    SquaredError(Var, Tensor),
    CrossEntropy(Var, Vec<usize>),
    Concat(Vec<Var>),
    Select(Var, usize),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatVec(..) => OpKind::MatVec,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
            Op::ScaleConst(..) => OpKind::ScaleConst,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Relu(..) => OpKind::Relu,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::MeanRows(..) => OpKind::MeanRows,
            Op::SquaredError(..) => OpKind::SquaredError,
            Op::CrossEntropy(..) => OpKind::CrossEntropy,
            Op::Concat(..) => OpKind::Concat,
            Op::Select(..) => OpKind::Select,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatVec(a, b) | Op::MatMul(a, b) | Op::Scale(a, b) => vec![*a, *b],
            Op::Add(v) | Op::Concat(v) => v.clone(),
            Op::ScaleConst(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::Sigmoid(a)
            | Op::MeanRows(a)
            | Op::SquaredError(a, _)
            | Op::CrossEntropy(a, _)
            | Op::Select(a, _) => vec![*a],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; `None` when `v` does not influence the loss
    /// or does not require gradients.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a scalar node, zero when unreachable.
    pub fn scalar(&self, v: Var) -> f64 {
        self.get(v).map(|t| t.item()).unwrap_or(0.0)
    }
}

fn fmt_shapes(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" vs ")
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: format!("{:?}", op.kind()),
            });
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Generic entry point keyed by primitive identifier.
    pub fn forward_primitive(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::shape(
                    "forward_primitive",
                    format!("{kind:?} takes {n} inputs, got {}", inputs.len()),
                ));
            }
            Ok(())
        };
        match kind {
            OpKind::MatVec => {
                arity(2)?;
                self.matvec(inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Add => self.add_n(inputs),
            OpKind::Scale => {
                arity(2)?;
                self.scale(inputs[0], inputs[1])
            }
            OpKind::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
            OpKind::Sigmoid => {
                arity(1)?;
                self.sigmoid(inputs[0])
            }
            OpKind::MeanRows => {
                arity(1)?;
                self.mean_rows(inputs[0])
            }
            OpKind::Concat => self.concat(inputs),
            OpKind::Leaf
            | OpKind::ScaleConst
            | OpKind::SquaredError
            | OpKind::CrossEntropy
            | OpKind::Select => Err(Error::shape(
                "forward_primitive",
                format!("{kind:?} needs non-node arguments; call its method directly"),
            )),
        }
    }

    /// `m [r,c] · v [c] -> [r]`.
    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (ms, vs) = (self.shape(m), self.shape(v));
        if ms.len() != 2 || vs.len() != 1 || ms[1] != vs[0] {
            return Err(Error::shape("matvec", fmt_shapes(&[ms, vs])));
        }
        let (r, c) = (ms[0], ms[1]);
        let out = matmul_raw(self.value(m).data(), self.value(v).data(), r, c, 1);
        self.push(Op::MatVec(m, v), Tensor::vector(out))
    }

    /// `a [n,k] · b [k,m] -> [n,m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a), self.shape(b));
        if as_.len() != 2 || bs.len() != 2 || as_[1] != bs[0] {
            return Err(Error::shape("matmul", fmt_shapes(&[as_, bs])));
        }
        let (n, k, m) = (as_[0], as_[1], bs[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        self.push(Op::MatMul(a, b), Tensor::matrix(n, m, out)?)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.add_n(&[a, b])
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::shape("add", "no inputs"));
        };
        let shape = self.shape(first).to_vec();
        let mut out = self.value(first).clone();
        for &x in &xs[1..] {
            if self.shape(x) != shape.as_slice() {
                return Err(Error::shape("add", fmt_shapes(&[&shape, self.shape(x)])));
            }
            out.add_assign(self.value(x));
        }
        self.push(Op::Add(xs.to_vec()), out)
    }

    /// `s · x` with `s` a single-element node.
    pub fn scale(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape(
                "scale",
                format!("scale factor must be scalar, got {:?}", self.shape(s)),
            ));
        }
        let k = self.value(s).item();
        let out = self.value(x).map(|v| k * v);
        self.push(Op::Scale(s, x), out)
    }

    pub fn scale_const(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| k * v);
        self.push(Op::ScaleConst(x, k), out)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), out)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu(x), out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), out)
    }

    /// Softmax over a 1-D vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(Error::shape("softmax", fmt_shapes(&[self.shape(x)])));
        }
        let out = Tensor::vector(softmax_slice(self.value(x).data()));
        self.push(Op::Softmax(x), out)
    }

    /// Mean over the batch (first) axis: `[n,d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] == 0 {
            return Err(Error::shape("mean_rows", fmt_shapes(&[s])));
        }
        let (n, d) = (s[0], s[1]);
        let xv = self.value(x).data();
        let mut out = vec![0.0; d];
        for i in 0..n {
            for (o, v) in out.iter_mut().zip(&xv[i * d..(i + 1) * d]) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.push(Op::MeanRows(x), Tensor::vector(out))
    }

    /// `(1/n) Σ_j ½‖pred_j − target_j‖²` over the rows of `pred`.
    pub fn squared_error(&mut self, pred: Var, target: Tensor) -> Result<Var> {
        let s = self.shape(pred);
        if s != target.shape() {
            return Err(Error::shape(
                "squared_error",
                fmt_shapes(&[s, target.shape()]),
            ));
        }
        let n = if s.len() == 2 { s[0] } else { 1 } as f64;
        let loss: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(target.data())
            .map(|(p, t)| 0.5 * (p - t) * (p - t))
            .sum::<f64>()
            / n;
        self.push(Op::SquaredError(pred, target), Tensor::scalar(loss))
    }

    /// Mean softmax cross-entropy of `logits [n,c]` against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("logits {:?} vs {} labels", s, labels.len()),
            ));
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} out of range for {c} classes"),
            ));
        }
        let lv = self.value(logits);
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        loss /= labels.len() as f64;
        self.push(
            Op::CrossEntropy(logits, labels.to_vec()),
            Tensor::scalar(loss),
        )
    }

    /// Concatenate flattened inputs into one vector.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut out = Vec::new();
        for &x in xs {
            out.extend_from_slice(self.value(x).data());
        }
        self.push(Op::Concat(xs.to_vec()), Tensor::vector(out))
    }

    /// Element `k` of a flattened node, as a scalar.
    pub fn select(&mut self, x: Var, k: usize) -> Result<Var> {
        let n = self.value(x).len();
        if k >= n {
            return Err(Error::shape(
                "select",
                format!("index {k} out of range for {n} elements"),
            ));
        }
        let v = self.value(x).data()[k];
        self.push(Op::Select(x, k), Tensor::scalar(v))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    op: format!("backward {:?}", node.op.kind()),
                });
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<()> {
        let needs = |v: &Var| self.nodes[v.0].needs_grad;
        match op {
            Op::Leaf => {}
            Op::MatVec(m, v) => {
                let (mv, vv) = (self.value(*m), self.value(*v));
                let (r, c) = (mv.shape()[0], mv.shape()[1]);
                if needs(m) {
                    // outer(g, v)
                    let gm = matmul_raw(g.data(), vv.data(), r, 1, c);
                    self.accumulate(grads, *m, Tensor::matrix(r, c, gm)?);
                }
                if needs(v) {
                    let gv = matmul_tn(mv.data(), g.data(), r, c, 1);
                    self.accumulate(grads, *v, Tensor::vector(gv));
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if needs(a) {
                    let ga = matmul_nt(g.data(), bv.data(), n, m, k);
                    self.accumulate(grads, *a, Tensor::matrix(n, k, ga)?);
                }
                if needs(b) {
                    let gb = matmul_tn(av.data(), g.data(), n, k, m);
                    self.accumulate(grads, *b, Tensor::matrix(k, m, gb)?);
                }
            }
            Op::Add(xs) => {
                for x in xs {
                    self.accumulate(grads, *x, g.clone());
                }
            }
            Op::Scale(s, x) => {
                let k = self.value(*s).item();
                if needs(s) {
                    let gs = g.dot(self.value(*x));
                    let shape = self.value(*s).shape().to_vec();
                    self.accumulate(grads, *s, Tensor::new(shape, vec![gs])?);
                }
                if needs(x) {
                    self.accumulate(grads, *x, g.map(|v| k * v));
                }
            }
            Op::ScaleConst(x, k) => {
                let k = *k;
                self.accumulate(grads, *x, g.map(|v| k * v));
            }
            Op::Tanh(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), data)?);
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), data)?);
            }
            Op::Sigmoid(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(gv, y)| gv * y * (1.0 - y))
                    .collect();
                self.accumulate(grads, *x, Tensor::new(out.shape().to_vec(), data)?);
            }
            Op::Softmax(x) => {
                let p = out.data();
                let gp: f64 = g.data().iter().zip(p).map(|(a, b)| a * b).sum();
                let data = p
                    .iter()
                    .zip(g.data())
                    .map(|(pi, gi)| pi * (gi - gp))
                    .collect();
                self.accumulate(grads, *x, Tensor::vector(data));
            }
            Op::MeanRows(x) => {
                let s = self.value(*x).shape();
                let (n, d) = (s[0], s[1]);
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    data.extend(g.data().iter().map(|v| v / n as f64));
                }
                self.accumulate(grads, *x, Tensor::matrix(n, d, data)?);
            }
            Op::SquaredError(pred, target) => {
                let s = self.value(*pred).shape();
                let n = if s.len() == 2 { s[0] } else { 1 } as f64;
                let gl = g.item();
                let data = self
                    .value(*pred)
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(p, t)| gl * (p - t) / n)
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(s.to_vec(), data)?);
            }
            Op::CrossEntropy(logits, labels) => {
                let lv = self.value(*logits);
                let n = labels.len() as f64;
                let gl = g.item();
                let mut data = Vec::with_capacity(lv.len());
                for (i, &y) in labels.iter().enumerate() {
                    let p = softmax_slice(lv.row(i));
                    for (k, pk) in p.into_iter().enumerate() {
                        let ind = if k == y { 1.0 } else { 0.0 };
                        data.push(gl * (pk - ind) / n);
                    }
                }
                self.accumulate(grads, *logits, Tensor::new(lv.shape().to_vec(), data)?);
            }
            Op::Concat(xs) => {
                let mut off = 0;
                for x in xs {
                    let xv = self.value(*x);
                    let part = g.data()[off..off + xv.len()].to_vec();
                    off += xv.len();
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), part)?);
                }
            }
            Op::Select(x, k) => {
                let xv = self.value(*x);
                let mut t = Tensor::zeros(xv.shape());
                t.data_mut()[*k] = g.item();
                self.accumulate(grads, *x, t);
            }
        }
        Ok(())
    }
}
