//! Computation record for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order and the backward sweep is a single reverse pass.

use super::params::ParameterSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param,
    Linear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    Relu(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Concat(NodeId, NodeId),
    Replicate(NodeId, usize),
    Tile(NodeId),
    ReduceMean(NodeId),
    ReduceSum(NodeId),
    /// Scalar computed outside the engine with a precomputed input gradient.
    Custom {
        input: NodeId,
        local_grad: Tensor,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::Shape {
            op,
            left: t.shape().to_vec(),
            right: vec![],
        });
    }
    Ok(())
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(Error::Contract(format!(
                "parameter `{name}` registered twice"
            )));
        }
        let id = self.push(Op::Param, value);
        self.params.push((name.to_string(), id));
        Ok(id)
    }

    /// Registers every entry of `params` and returns the ids in name order.
    pub fn params_from(&mut self, params: &ParameterSet) -> Result<Vec<NodeId>> {
        params
            .iter()
            .map(|(n, t)| self.param(n, t.clone()))
            .collect()
    }

    /// `x W + b` with `x: n x i`, `W: i x o`, `b: o`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        require_2d("linear", xv)?;
        require_2d("linear", wv)?;
        if xv.cols() != wv.rows() {
            return Err(shape_err("linear", xv, wv));
        }
        if bv.shape() != [wv.cols()] {
            return Err(shape_err("linear(bias)", wv, bv));
        }
        let (n, i, o) = (xv.rows(), wv.rows(), wv.cols());
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; n * o];
        for r in 0..n {
            let row = &mut out[r * o..(r + 1) * o];
            row.copy_from_slice(bd);
            for k in 0..i {
                let a = xd[r * i + k];
                let wrow = &wd[k * o..(k + 1) * o];
                for (dst, &wv) in row.iter_mut().zip(wrow) {
                    *dst += a * wv;
                }
            }
        }
        let t = Tensor::new(vec![n, o], out)?;
        Ok(self.push(Op::Linear { x, w, b }, t))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(x), t)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), t)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let mut t = av.clone();
        t.add_assign(bv);
        Ok(self.push(Op::Add(a, b), t))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let t = self.value(x).map(|v| c * v);
        self.push(Op::Scale(x, c), t)
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        require_2d("concat", av)?;
        require_2d("concat", bv)?;
        if av.rows() != bv.rows() {
            return Err(shape_err("concat", av, bv));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut out = Vec::with_capacity(n * (p + q));
        for r in 0..n {
            out.extend_from_slice(&av.data()[r * p..(r + 1) * p]);
            out.extend_from_slice(&bv.data()[r * q..(r + 1) * q]);
        }
        let t = Tensor::new(vec![n, p + q], out)?;
        Ok(self.push(Op::Concat(a, b), t))
    }

    /// Repeats every row `r` times in place: row `i` becomes rows `i*r .. i*r + r`.
    pub fn replicate(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let xv = self.value(x);
        require_2d("replicate", xv)?;
        if r == 0 {
            return Err(Error::Contract("replicate factor must be positive".into()));
        }
        let (n, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(n * r * c);
        for row in xv.data().chunks_exact(c) {
            for _ in 0..r {
                out.extend_from_slice(row);
            }
        }
        let t = Tensor::new(vec![n * r, c], out)?;
        Ok(self.push(Op::Replicate(x, r), t))
    }

    /// Stacks `n` copies of the whole matrix.
    pub fn tile(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let xv = self.value(x);
        require_2d("tile", xv)?;
        if n == 0 {
            return Err(Error::Contract("tile count must be positive".into()));
        }
        let (m, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(n * m * c);
        for _ in 0..n {
            out.extend_from_slice(xv.data());
        }
        let t = Tensor::new(vec![n * m, c], out)?;
        Ok(self.push(Op::Tile(x), t))
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::ReduceMean(x), Tensor::scalar(m))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> NodeId {
        let s = self.value(x).data().iter().sum::<f64>();
        self.push(Op::ReduceSum(x), Tensor::scalar(s))
    }

    /// Scalar node whose value and input gradient were computed elsewhere.
    pub fn custom_scalar(
        &mut self,
        input: NodeId,
        value: f64,
        local_grad: Tensor,
    ) -> Result<NodeId> {
        let iv = self.value(input);
        if iv.shape() != local_grad.shape() {
            return Err(shape_err("custom_scalar", iv, &local_grad));
        }
        Ok(self.push(Op::Custom { input, local_grad }, Tensor::scalar(value)))
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    /// Parameters the loss does not depend on get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<ParameterSet> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        let mut param_grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param => param_grads[idx] = Some(gy),
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, i, o) = (xv.rows(), wv.rows(), wv.cols());
                    let (xd, wd, gd) = (xv.data(), wv.data(), gy.data());
                    let mut gx = vec![0.0; n * i];
                    let mut gw = vec![0.0; i * o];
                    let mut gb = vec![0.0; o];
                    for r in 0..n {
                        let grow = &gd[r * o..(r + 1) * o];
                        for (acc, &g) in gb.iter_mut().zip(grow) {
                            *acc += g;
                        }
                        for k in 0..i {
                            let wrow = &wd[k * o..(k + 1) * o];
                            gx[r * i + k] = grow.iter().zip(wrow).map(|(g, w)| g * w).sum();
                            let a = xd[r * i + k];
                            for (acc, &g) in gw[k * o..(k + 1) * o].iter_mut().zip(grow) {
                                *acc += a * g;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(vec![n, i], gx)?);
                    accumulate(&mut grads, *w, Tensor::new(vec![i, o], gw)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![o], gb)?);
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let data = gy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), data)?);
                }
                Op::Tanh(x) => {
                    let data = gy
                        .data()
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, &t)| g * (1.0 - t * t))
                        .collect();
                    accumulate(
                        &mut grads,
                        *x,
                        Tensor::new(node.value.shape().to_vec(), data)?,
                    );
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = gy
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    let gb = gy
                        .data()
                        .iter()
                        .zip(av.data())
                        .map(|(g, v)| g * v)
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
                    accumulate(&mut grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    accumulate(&mut grads, *x, gy.map(|g| c * g));
                }
                Op::Concat(a, b) => {
                    let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                    let n = gy.rows();
                    let mut ga = Vec::with_capacity(n * p);
                    let mut gb = Vec::with_capacity(n * q);
                    for row in gy.data().chunks_exact(p + q) {
                        ga.extend_from_slice(&row[..p]);
                        gb.extend_from_slice(&row[p..]);
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![n, p], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![n, q], gb)?);
                }
                Op::Replicate(x, r) => {
                    let xv = self.value(*x);
                    let c = xv.cols();
                    let mut gx = vec![0.0; xv.numel()];
                    for (k, row) in gy.data().chunks_exact(c).enumerate() {
                        let dst = &mut gx[(k / r) * c..(k / r + 1) * c];
                        for (d, g) in dst.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::Tile(x) => {
                    let xv = self.value(*x);
                    let mut gx = vec![0.0; xv.numel()];
                    for block in gy.data().chunks_exact(xv.numel()) {
                        for (d, g) in gx.iter_mut().zip(block) {
                            *d += g;
                        }
                    }
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), gx)?);
                }
                Op::ReduceMean(x) => {
                    let xv = self.value(*x);
                    let g = gy.data()[0] / xv.numel() as f64;
                    accumulate(&mut grads, *x, xv.map(|_| g));
                }
                Op::ReduceSum(x) => {
                    let xv = self.value(*x);
                    let g = gy.data()[0];
                    accumulate(&mut grads, *x, xv.map(|_| g));
                }
                Op::Custom { input, local_grad } => {
                    let g = gy.data()[0];
                    accumulate(&mut grads, *input, local_grad.map(|v| g * v));
                }
            }
        }

        let mut out = ParameterSet::new();
        for (name, id) in &self.params {
            let g = param_grads[id.0]
                .take()
                .unwrap_or_else(|| Tensor::zeros(self.value(*id).shape()));
            out.insert(name, g)?;
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
