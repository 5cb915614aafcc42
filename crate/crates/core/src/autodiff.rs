//! Define-by-run reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every primitive as a node holding its forward value
//! and references to its parents. Nodes are appended in evaluation order, so
//! the tape is already topologically sorted and [`Graph::backward`] walks it
//! once in reverse.
//!
//! ```
//! use hpcde::autodiff::Graph;
//! use hpcde::tensor::Tensor;
//!
//! let mut g = Graph::new();
//! let w = g.param(Tensor::matrix(1, 2, vec![2.0, -1.0]).unwrap());
//! let x = g.constant(Tensor::vector(vec![3.0, 4.0]));
//! let y = g.matvec(w, x).unwrap();
//! let loss = g.sum(y);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(g.value(loss).item(), 2.0);
//! assert_eq!(grads.wrt(&g, w).data(), &[3.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
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
    Mul(Var, Var),
    Scale(Var, f64),
    Axpy(Var, f64, Var),
    MatMul(Var, Var),
    MatVec(Var, Var),
    Linear(Var, Var, Option<Var>),
    Elu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    SoftplusBeta(Var, Var),
    Sum(Var),
    Dot(Var, Var),
    Pick(Var, usize),
    Row(Var, usize),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Exponential linear unit.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Derivative of [`elu`].
pub fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Derivative of `tanh`.
pub fn tanh_grad(x: f64) -> f64 {
    let t = x.tanh();
    1.0 - t * t
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// `beta * ln(1 + exp(x / beta))`, overflow-safe and floored at the smallest
/// positive normal double so the result is strictly positive.
pub fn softplus_beta(x: f64, beta: f64) -> f64 {
    let u = x / beta;
    let y = if u > 30.0 {
        x + beta * (-u).exp().ln_1p()
    } else {
        beta * u.exp().ln_1p()
    };
    y.max(f64::MIN_POSITIVE)
}

/// Partial derivatives of [`softplus_beta`] with respect to `x` and `beta`.
pub fn softplus_beta_grad(x: f64, beta: f64) -> (f64, f64) {
    let u = x / beta;
    let s = sigmoid(u);
    let sp = if u > 30.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    };
    (s, sp - u * s)
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `var`, zero-filled when nothing flowed into it.
    pub fn wrt(&self, graph: &Graph, var: Var) -> Tensor {
        let shape = graph.value(var).shape().to_vec();
        match self.get(var) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

/// Computation tape.
pub struct Graph {
    nodes: Vec<Node>,
    checked: bool,
    first_non_finite: Option<(usize, &'static str)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checked: false,
            first_non_finite: None,
        }
    }

    /// A graph that records the first operation producing a NaN or infinity.
    pub fn checked() -> Self {
        Graph {
            checked: true,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Approximate bytes held by recorded values.
    pub fn value_bytes(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| n.value.len() * std::mem::size_of::<f64>())
            .sum()
    }

    /// In checked mode, the first non-finite result seen so far.
    pub fn status(&self) -> Result<()> {
        match self.first_non_finite {
            Some((node, op)) => Err(Error::NonFinite(format!("at node {node} ({op})"))),
            None => Ok(()),
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.item()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true, "param")
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false, "constant")
    }

    pub fn constant_scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Var {
        let id = self.nodes.len();
        if self.checked && self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some((id, name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(id)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var], name: &'static str) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, rg, name)
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                op,
                format!("left {:?}, right {:?}", ta.shape(), tb.shape()),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b], "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b], "sub"))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b], "mul"))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| c * x);
        self.push(v, Op::Scale(a, c), &[a], "scale")
    }

    /// `x + c * y`.
    pub fn axpy(&mut self, x: Var, c: f64, y: Var) -> Result<Var> {
        self.same_len("axpy", x, y)?;
        let v = self.zip_map(x, y, |p, q| p + c * q);
        Ok(self.push(v, Op::Axpy(x, c, y), &[x, y], "axpy"))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("cannot multiply {:?} by {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        let v = Tensor::matrix(m, n, out)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b], "matmul"))
    }

    fn matvec_value(&self, op: &'static str, w: Var, x: Var) -> Result<Vec<f64>> {
        let (tw, tx) = (self.value(w), self.value(x));
        if tw.rank() != 2 || tx.rank() != 1 || tw.shape()[1] != tx.len() {
            return Err(Error::shape(
                op,
                format!("matrix {:?} against vector {:?}", tw.shape(), tx.shape()),
            ));
        }
        let n = tx.len();
        let xd = tx.data();
        Ok(tw
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Matrix `[m, n]` times vector `[n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let out = self.matvec_value("matvec", w, x)?;
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x), &[w, x], "matvec"))
    }

    /// Fully connected layer `w x + b`.
    pub fn linear(&mut self, w: Var, x: Var, b: Option<Var>) -> Result<Var> {
        let mut out = self.matvec_value("linear", w, x)?;
        let mut parents = vec![w, x];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != out.len() {
                return Err(Error::shape(
                    "linear",
                    format!("bias {:?} for output of length {}", tb.shape(), out.len()),
                ));
            }
            for (o, bv) in out.iter_mut().zip(tb.data()) {
                *o += bv;
            }
            parents.push(b);
        }
        Ok(self.push(Tensor::vector(out), Op::Linear(w, x, b), &parents, "linear"))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(elu);
        self.push(v, Op::Elu(a), &[a], "elu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a], "tanh")
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a], "exp")
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Log(a), &[a], "log")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a), &[a], "square")
    }

    /// `beta * ln(1 + exp(x / beta))` with `beta = exp(log_beta)`.
    ///
    /// `log_beta` is either a single element shared by every entry of `x`, or
    /// has the same length as `x`.
    pub fn softplus_beta(&mut self, x: Var, log_beta: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(log_beta));
        if tb.len() != 1 && tb.len() != tx.len() {
            return Err(Error::shape(
                "softplus_beta",
                format!("input {:?} with beta {:?}", tx.shape(), tb.shape()),
            ));
        }
        let per = tb.len() != 1;
        let bd = tb.data();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| softplus_beta(v, bd[if per { i } else { 0 }].exp()))
            .collect();
        let v = Tensor::new(tx.shape().to_vec(), data)?;
        Ok(self.push(v, Op::SoftplusBeta(x, log_beta), &[x, log_beta], "softplus_beta"))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a], "sum")
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let s = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), &[a, b], "dot"))
    }

    /// Single element of a flat tensor, as a scalar.
    pub fn pick(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.value(a);
        if index >= ta.len() {
            return Err(Error::shape(
                "pick",
                format!("index {index} out of range for {:?}", ta.shape()),
            ));
        }
        let v = Tensor::scalar(ta.data()[index]);
        Ok(self.push(v, Op::Pick(a, index), &[a], "pick"))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, a: Var, index: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 || index >= ta.shape()[0] {
            return Err(Error::shape(
                "row",
                format!("row {index} of {:?}", ta.shape()),
            ));
        }
        let v = Tensor::vector(ta.row(index).to_vec());
        Ok(self.push(v, Op::Row(a, index), &[a], "row"))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let tail: Vec<usize> = self.value(*first).shape().iter().skip(1).copied().collect();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.rank() == 0 || t.shape()[1..] != tail[..] {
                return Err(Error::shape(
                    "concat",
                    format!("part {:?} does not match trailing dims {:?}", t.shape(), tail),
                ));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec()), parts, "concat"))
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || start + len > t.shape()[0] {
            return Err(Error::shape(
                "slice",
                format!("range {}..{} of {:?}", start, start + len, t.shape()),
            ));
        }
        let inner: usize = t.shape()[1..].iter().product();
        let data = t.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = len;
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::Slice(a, start), &[a], "slice"))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(a).clone().reshaped(shape)?;
        Ok(self.push(v, Op::Reshape(a), &[a], "reshape"))
    }

    /// Softmax over a vector.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = Tensor::vector(softmax(self.value(a).data()));
        self.push(v, Op::Softmax(a), &[a], "softmax")
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let d = self.value(a).data();
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + d.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let v = Tensor::vector(d.iter().map(|x| x - lse).collect());
        self.push(v, Op::LogSoftmax(a), &[a], "log_softmax")
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("output must be a single element, got {:?}", out.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        if !node.requires_grad {
            return;
        }
        let nodes = &self.nodes;
        let mut acc = |var: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[var.0].requires_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; nodes[var.0].value.len()]);
            f(slot);
        };
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g, 1.0));
                acc(*b, &mut |s| add_into(s, g, 1.0));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g, 1.0));
                acc(*b, &mut |s| add_into(s, g, -1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * vb[i];
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * va[i];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| add_into(s, g, *c)),
            Op::Axpy(x, c, yv) => {
                acc(*x, &mut |s| add_into(s, g, 1.0));
                acc(*yv, &mut |s| add_into(s, g, *c));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let (ad, bd) = (ta.data(), tb.data());
                acc(*a, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let mut t = 0.0;
                            for j in 0..n {
                                t += g[i * n + j] * bd[p * n + j];
                            }
                            s[i * k + p] += t;
                        }
                    }
                });
                acc(*b, &mut |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for j in 0..n {
                                s[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::MatVec(w, x) | Op::Linear(w, x, _) => {
                let (tw, tx) = (self.value(*w), self.value(*x));
                let n = tx.len();
                let (wd, xd) = (tw.data(), tx.data());
                acc(*w, &mut |s| {
                    for (i, gi) in g.iter().enumerate() {
                        if *gi == 0.0 {
                            continue;
                        }
                        for (sv, xv) in s[i * n..(i + 1) * n].iter_mut().zip(xd) {
                            *sv += gi * xv;
                        }
                    }
                });
                acc(*x, &mut |s| {
                    for (i, gi) in g.iter().enumerate() {
                        for (sv, wv) in s.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                            *sv += gi * wv;
                        }
                    }
                });
                if let Op::Linear(_, _, Some(b)) = &node.op {
                    acc(*b, &mut |s| add_into(s, g, 1.0));
                }
            }
            Op::Elu(a) => {
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        // y + 1 == exp(x) on the negative branch
                        let d = if y[i] >= 0.0 { 1.0 } else { y[i] + 1.0 };
                        s[i] += g[i] * d;
                    }
                });
            }
            Op::Tanh(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }),
            Op::Exp(a) => acc(*a, &mut |s| {
                for i in 0..s.len() {
                    s[i] += g[i] * y[i];
                }
            }),
            Op::Log(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] / x[i];
                    }
                });
            }
            Op::Square(a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += 2.0 * g[i] * x[i];
                    }
                });
            }
            Op::SoftplusBeta(x, lb) => {
                let xd = self.value(*x).data();
                let bd = self.value(*lb).data();
                let per = bd.len() != 1;
                let parts: Vec<(f64, f64)> = xd
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let beta = bd[if per { i } else { 0 }].exp();
                        let (dx, dbeta) = softplus_beta_grad(v, beta);
                        (dx, dbeta * beta)
                    })
                    .collect();
                acc(*x, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * parts[i].0;
                    }
                });
                acc(*lb, &mut |s| {
                    for (i, p) in parts.iter().enumerate() {
                        s[if per { i } else { 0 }] += g[i] * p.1;
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| {
                for v in s.iter_mut() {
                    *v += g[0];
                }
            }),
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| add_into(s, vb, g[0]));
                acc(*b, &mut |s| add_into(s, va, g[0]));
            }
            Op::Pick(a, i) => acc(*a, &mut |s| s[*i] += g[0]),
            Op::Row(a, r) => acc(*a, &mut |s| {
                let c = g.len();
                add_into(&mut s[r * c..(r + 1) * c], g, 1.0);
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    acc(*p, &mut |s| add_into(s, &g[offset..offset + n], 1.0));
                    offset += n;
                }
            }
            Op::Slice(a, start) => {
                let t = self.value(*a);
                let inner: usize = t.shape()[1..].iter().product();
                let off = start * inner;
                acc(*a, &mut |s| add_into(&mut s[off..off + g.len()], g, 1.0));
            }
            Op::Reshape(a) => acc(*a, &mut |s| add_into(s, g, 1.0)),
            Op::Softmax(a) => {
                let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += y[i] * (g[i] - gy);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let gs: f64 = g.iter().sum();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] - y[i].exp() * gs;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}
