//! Tape of differentiable operations over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamSet`] immutably; parameters enter the tape
//! without being copied and their gradients are accumulated straight into a
//! [`Gradients`] buffer by [`Graph::backward`].

use super::params::{Gradients, ParamId, ParamSet};
use super::tensor::{axpy, dot, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row(ParamId, usize),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Softmax(Var),
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
    SumN(Vec<Var>),
}

struct Node {
    op: Op,
    value: Tensor,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// Numerically stable log-softmax.
pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| v - lse).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn tensor(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.params.get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.tensor(v).data()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.tensor(v).shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Constant input; receives no gradient outside the tape.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), Tensor::default())
    }

    /// Row `row` of a rank-2 parameter (embedding lookup).
    pub fn row(&mut self, id: ParamId, row: usize) -> Result<Var> {
        let p = self.params.get(id);
        if p.rank() != 2 || row >= p.shape()[0] {
            return Err(Error::Shape {
                op: "row",
                lhs: p.shape().to_vec(),
                rhs: vec![row],
            });
        }
        let cols = p.shape()[1];
        let data = p.data()[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(Op::Row(id, row), Tensor::vector(data)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    /// `[m, k] x [k]` or `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let bad = || Error::Shape {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(bad());
        }
        let (m, k) = (sa[0], sa[1]);
        let n = if sb.len() == 2 { sb[1] } else { 1 };
        let out_shape = if sb.len() == 2 { vec![m, n] } else { vec![m] };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&av[i * k..(i + 1) * k], bv);
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    axpy(av[i * k + p], &bv[p * n..(p + 1) * n], orow);
                }
            }
        }
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(self.shape(a).to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.value(a).iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape(a).to_vec(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), t))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| c * x);
        self.push(Op::Scale(a, c), t)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| x + c);
        self.push(Op::Offset(a), t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(Op::Tanh(a), t)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        self.push(Op::Sigmoid(a), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::exp);
        self.push(Op::Exp(a), t)
    }

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            data.extend_from_slice(self.value(p));
        }
        Ok(self.push(Op::Concat(parts.to_vec()), Tensor::vector(data)))
    }

    /// Elements `start..start + len` of a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || start + len > s[0] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s.to_vec(),
                rhs: vec![start, len],
            });
        }
        let data = self.value(a)[start..start + len].to_vec();
        Ok(self.push(Op::Slice(a, start), Tensor::vector(data)))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: self.shape(a).to_vec(),
                rhs: vec![],
            });
        }
        let t = Tensor::vector(softmax(self.value(a)));
        Ok(self.push(Op::Softmax(a), t))
    }

    /// `-log softmax(logits)[target]` as a scalar node.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::Shape {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![target],
            });
        }
        let lv = self.value(logits);
        let loss = log_sum_exp(lv) - lv[target];
        let probs = softmax(lv);
        Ok(self.push(
            Op::CrossEntropy { logits, target, probs },
            Tensor::scalar(loss),
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    /// Elementwise sum of same-shape nodes.
    pub fn sum_n(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Ok(self.input(Tensor::scalar(0.0)));
        };
        let mut acc = self.value(first).to_vec();
        for &p in &parts[1..] {
            self.same_shape("sum_n", first, p)?;
            for (a, v) in acc.iter_mut().zip(self.value(p)) {
                *a += v;
            }
        }
        let t = Tensor::new(self.shape(first).to_vec(), acc)?;
        Ok(self.push(Op::SumN(parts.to_vec()), t))
    }

    /// `w x + b`
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Accumulates `d loss / d param` into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        self.backward_with_seed(loss, 1.0, grads)
    }

    /// Accumulates `seed * d loss / d param` into `grads`; `seed` is treated
    /// as a constant.
    pub fn backward_with_seed(&self, loss: Var, seed: f64, grads: &mut Gradients) -> Result<()> {
        if self.tensor(loss).len() != 1 {
            return Err(Error::Invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Invalid("gradient buffer does not match parameter set".into()));
        }
        let mut node_grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        node_grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut node_grads, grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], ng: &mut [Option<Vec<f64>>], pg: &mut Gradients) {
        let nodes = &self.nodes;
        let params = self.params;
        // Gradient slot of node `j`, resolving parameter nodes to `pg`.
        fn slot<'a>(
            nodes: &[Node],
            params: &ParamSet,
            ng: &'a mut [Option<Vec<f64>>],
            pg: &'a mut Gradients,
            j: Var,
        ) -> &'a mut [f64] {
            match nodes[j.0].op {
                Op::Param(id) => pg.slot(id),
                _ => {
                    let n = nodes[j.0].value.len();
                    let _ = params;
                    ng[j.0].get_or_insert_with(|| vec![0.0; n])
                }
            }
        }
        let val = |v: Var| -> &[f64] {
            match nodes[v.0].op {
                Op::Param(id) => params.get(id).data(),
                _ => nodes[v.0].value.data(),
            }
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Input => {}
            Op::Param(id) => axpy(1.0, g, pg.slot(*id)),
            Op::Row(id, row) => {
                let cols = params.get(*id).shape()[1];
                axpy(1.0, g, &mut pg.slot(*id)[row * cols..(row + 1) * cols]);
            }
            Op::MatMul(a, b) => {
                let sa = self.tensor(*a).shape();
                let sb = self.tensor(*b).shape();
                let (m, k) = (sa[0], sa[1]);
                let n = if sb.len() == 2 { sb[1] } else { 1 };
                let av = val(*a);
                let bv = val(*b);
                // dB = A^T G
                let mut gb = vec![0.0; k * n];
                for r in 0..m {
                    let arow = &av[r * k..(r + 1) * k];
                    let grow = &g[r * n..(r + 1) * n];
                    if n == 1 {
                        if grow[0] != 0.0 {
                            axpy(grow[0], arow, &mut gb);
                        }
                    } else {
                        for p in 0..k {
                            axpy(arow[p], grow, &mut gb[p * n..(p + 1) * n]);
                        }
                    }
                }
                // dA = G B^T
                {
                    let ga = slot(nodes, params, ng, pg, *a);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        let garow = &mut ga[r * k..(r + 1) * k];
                        if n == 1 {
                            if grow[0] != 0.0 {
                                axpy(grow[0], bv, garow);
                            }
                        } else {
                            for (p, gap) in garow.iter_mut().enumerate() {
                                *gap += dot(grow, &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                axpy(1.0, &gb, slot(nodes, params, ng, pg, *b));
            }
            Op::Add(a, b) => {
                axpy(1.0, g, slot(nodes, params, ng, pg, *a));
                axpy(1.0, g, slot(nodes, params, ng, pg, *b));
            }
            Op::Sub(a, b) => {
                axpy(1.0, g, slot(nodes, params, ng, pg, *a));
                axpy(-1.0, g, slot(nodes, params, ng, pg, *b));
            }
            Op::Mul(a, b) => {
                let ga: Vec<f64> = g.iter().zip(val(*b)).map(|(x, y)| x * y).collect();
                let gb: Vec<f64> = g.iter().zip(val(*a)).map(|(x, y)| x * y).collect();
                axpy(1.0, &ga, slot(nodes, params, ng, pg, *a));
                axpy(1.0, &gb, slot(nodes, params, ng, pg, *b));
            }
            Op::Scale(a, c) => axpy(*c, g, slot(nodes, params, ng, pg, *a)),
            Op::Offset(a) => axpy(1.0, g, slot(nodes, params, ng, pg, *a)),
            Op::Tanh(a) => {
                let s = slot(nodes, params, ng, pg, *a);
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(out) {
                    *si += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let s = slot(nodes, params, ng, pg, *a);
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(out) {
                    *si += gi * yi * (1.0 - yi);
                }
            }
            Op::Exp(a) => {
                let s = slot(nodes, params, ng, pg, *a);
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(out) {
                    *si += gi * yi;
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.tensor(p).len();
                    axpy(1.0, &g[off..off + n], slot(nodes, params, ng, pg, p));
                    off += n;
                }
            }
            Op::Slice(a, start) => {
                let s = slot(nodes, params, ng, pg, *a);
                axpy(1.0, g, &mut s[*start..*start + g.len()]);
            }
            Op::Softmax(a) => {
                let gy = dot(g, out);
                let s = slot(nodes, params, ng, pg, *a);
                for ((si, gi), yi) in s.iter_mut().zip(g).zip(out) {
                    *si += yi * (gi - gy);
                }
            }
            Op::CrossEntropy { logits, target, probs } => {
                let s = slot(nodes, params, ng, pg, *logits);
                axpy(g[0], probs, s);
                s[*target] -= g[0];
            }
            Op::Sum(a) => {
                let s = slot(nodes, params, ng, pg, *a);
                for si in s.iter_mut() {
                    *si += g[0];
                }
            }
            Op::SumN(parts) => {
                for &p in parts {
                    axpy(1.0, g, slot(nodes, params, ng, pg, p));
                }
            }
        }
    }
}
