//! Tape of recorded operations and the reverse sweep over it.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op appends a node
//! holding its output value; [`Graph::backward`] walks the tape in reverse and
//! returns gradients for every leaf that requires them.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{AdError, Result};
use crate::ops;
use crate::param::ParamTensor;
use crate::tensor::{broadcast_shape, expand, numel, reduce_to, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Identity of a node inside one particular graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    pub graph: u64,
    pub index: usize,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Relu,
    Sigmoid,
    Softplus,
    Sin,
    Cos,
    Exp,
    Square,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 7] = [
        UnaryOp::Relu,
        UnaryOp::Sigmoid,
        UnaryOp::Softplus,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Relu => "relu",
            UnaryOp::Sigmoid => "sigmoid",
            UnaryOp::Softplus => "softplus",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Square => "square",
        }
    }

    pub fn eval(self, x: f32) -> f32 {
        match self {
            UnaryOp::Relu => x.max(0.0),
            UnaryOp::Sigmoid => ops::sigmoid(x),
            UnaryOp::Softplus => ops::softplus(x),
            UnaryOp::Sin => x.sin(),
            UnaryOp::Cos => x.cos(),
            UnaryOp::Exp => x.exp(),
            UnaryOp::Square => x * x,
        }
    }

    /// d(out)/d(in) given the input `x` and the output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            UnaryOp::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryOp::Sigmoid => y * (1.0 - y),
            UnaryOp::Softplus => ops::sigmoid(x),
            UnaryOp::Sin => x.cos(),
            UnaryOp::Cos => -x.sin(),
            UnaryOp::Exp => y,
            UnaryOp::Square => 2.0 * x,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Binary(Binary, Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Unary(UnaryOp, Var),
    Clamp { input: Var, lo: f32, hi: f32 },
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    BroadcastTo(Var),
    Sum { input: Var, axis: Option<usize> },
    Mean { input: Var, axis: Option<usize> },
    L2Norm(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward sweep, indexed by leaf node.
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` if the leaf was unreachable or constant.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn graph_id(&self) -> u64 {
        self.graph
    }

    /// Adds this sweep's gradient into `param.grad` (allocating it if absent).
    ///
    /// Parameters that were not bound to the graph, or are unreachable from
    /// the output, receive a zero contribution.
    pub fn accumulate(&self, param: &mut ParamTensor) -> Result<()> {
        let Some(id) = param.node_id else {
            return Ok(());
        };
        if id.graph != self.graph {
            return Err(AdError::GraphMismatch {
                expected: id.graph,
                found: self.graph,
            });
        }
        let grad = param
            .grad
            .get_or_insert_with(|| Tensor::zeros(param.value.shape().to_vec()));
        if let Some(g) = self.grads.get(id.index).and_then(Option::as_ref) {
            grad.add_assign(g);
        }
        Ok(())
    }
}

pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_id(&self, var: Var) -> NodeId {
        NodeId {
            graph: self.id,
            index: var.0,
        }
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter as a leaf and records its node identity on it.
    pub fn param(&mut self, param: &mut ParamTensor) -> Var {
        let var = self.push(param.value.clone(), Op::Leaf, param.requires_grad);
        param.node_id = Some(self.node_id(var));
        var
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0f32; m * n];
        ops::gemm(
            m,
            k,
            n,
            ops::Mat::row_major(self.value(a).data(), k),
            ops::Mat::row_major(self.value(b).data(), n),
            &mut out,
            0.0,
        );
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b), rg))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let out_shape = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let f: fn(f32, f32) -> f32 = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let value = ops::zip_broadcast(self.value(a), self.value(b), &out_shape, f);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn unary(&mut self, op: UnaryOp, a: Var) -> Var {
        let value = self.value(a).map(|x| op.eval(x));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Unary(op, a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sigmoid, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Softplus, a)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Sin, a)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Cos, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Exp, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(UnaryOp::Square, a)
    }

    /// Elementwise clamp; gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f32, hi: f32) -> Var {
        let value = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Clamp { input: a, lo, hi }, rg)
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs.first().ok_or(AdError::InvalidArgument {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(AdError::InvalidArgument {
                op: "concat",
                msg: format!("axis {axis} out of range for shape {base:?}"),
            });
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(AdError::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `a[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(AdError::InvalidArgument {
                op: "slice",
                msg: format!("range {start}..{end} on axis {axis} of shape {shape:?}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            data.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        let rg = self.any_grad(&[a]);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Slice {
                input: a,
                axis,
                start,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() {
            return Err(AdError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn broadcast_to(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let target = broadcast_shape("broadcast", self.shape(a), shape)?;
        if target != shape {
            return Err(AdError::ShapeMismatch {
                op: "broadcast",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let value = expand(self.value(a), shape);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::BroadcastTo(a), rg))
    }

    /// Sum over one axis (removing it) or over everything (to a scalar).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let value = ops::reduce_sum(self.value(a), axis)?;
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Sum { input: a, axis }, rg))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let count = match axis {
            Some(ax) => self.shape(a).get(ax).copied().unwrap_or(1),
            None => self.value(a).numel(),
        };
        let mut value = ops::reduce_sum(self.value(a), axis)?;
        let inv = 1.0 / count as f32;
        value.data_mut().iter_mut().for_each(|x| *x *= inv);
        let rg = self.any_grad(&[a]);
        Ok(self.push(value, Op::Mean { input: a, axis }, rg))
    }

    /// Euclidean norm over the last axis.
    pub fn l2norm(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some((&last, lead)) = shape.split_last() else {
            return Err(AdError::InvalidArgument {
                op: "l2norm",
                msg: "scalar input".into(),
            });
        };
        let data: Vec<f32> = self
            .value(a)
            .data()
            .chunks_exact(last)
            .map(|row| row.iter().map(|x| x * x).sum::<f32>().sqrt())
            .collect();
        let rg = self.any_grad(&[a]);
        Ok(self.push(Tensor::from_parts(lead.to_vec(), data), Op::L2Norm(a), rg))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = &self.nodes[output.0].value;
        if out.numel() != 1 {
            return Err(AdError::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape().to_vec(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn send(&self, grads: &mut [Option<Tensor>], to: Var, g: Tensor) {
        if !self.nodes[to.0].requires_grad {
            return;
        }
        match &mut grads[to.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    ops::gemm(
                        m,
                        n,
                        k,
                        ops::Mat::row_major(g.data(), n),
                        ops::Mat::transposed(vb.data(), n),
                        &mut da,
                        0.0,
                    );
                    self.send(grads, *a, Tensor::from_parts(vec![m, k], da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    ops::gemm(
                        k,
                        m,
                        n,
                        ops::Mat::transposed(va.data(), k),
                        ops::Mat::row_major(g.data(), n),
                        &mut db,
                        0.0,
                    );
                    self.send(grads, *b, Tensor::from_parts(vec![k, n], db));
                }
            }
            Op::Binary(kind, a, b) => {
                let out_shape = node.value.shape();
                if self.requires_grad(*a) {
                    let ga = match kind {
                        Binary::Add | Binary::Sub => g.clone(),
                        Binary::Mul => {
                            ops::zip_broadcast(g, self.value(*b), out_shape, |x, y| x * y)
                        }
                    };
                    self.send(grads, *a, reduce_to(&ga, self.shape(*a)));
                }
                if self.requires_grad(*b) {
                    let gb = match kind {
                        Binary::Add => g.clone(),
                        Binary::Sub => g.map(|x| -x),
                        Binary::Mul => {
                            ops::zip_broadcast(g, self.value(*a), out_shape, |x, y| x * y)
                        }
                    };
                    self.send(grads, *b, reduce_to(&gb, self.shape(*b)));
                }
            }
            Op::Scale(a, factor) => self.send(grads, *a, g.map(|x| x * factor)),
            Op::AddScalar(a) => self.send(grads, *a, g.clone()),
            Op::Unary(op, a) => {
                let x = self.value(*a).data();
                let y = node.value.data();
                let data = g
                    .data()
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(&gi, (&xi, &yi))| gi * op.derivative(xi, yi))
                    .collect();
                self.send(grads, *a, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.value(*input).data();
                let data = g
                    .data()
                    .iter()
                    .zip(x)
                    .map(|(&gi, &xi)| if xi >= *lo && xi <= *hi { gi } else { 0.0 })
                    .collect();
                self.send(grads, *input, Tensor::from_parts(g.shape().to_vec(), data));
            }
            Op::Concat { inputs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let row = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let part = self.shape(*v)[*axis] * inner;
                    if self.requires_grad(*v) {
                        let mut data = Vec::with_capacity(outer * part);
                        for o in 0..outer {
                            let base = o * row + offset;
                            data.extend_from_slice(&g.data()[base..base + part]);
                        }
                        self.send(
                            grads,
                            *v,
                            Tensor::from_parts(self.shape(*v).to_vec(), data),
                        );
                    }
                    offset += part;
                }
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.shape(*input);
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let width = g.shape()[*axis] * inner;
                let mut data = vec![0.0; self.value(*input).numel()];
                for o in 0..outer {
                    let dst = o * in_shape[*axis] * inner + start * inner;
                    data[dst..dst + width].copy_from_slice(&g.data()[o * width..(o + 1) * width]);
                }
                self.send(grads, *input, Tensor::from_parts(in_shape.to_vec(), data));
            }
            Op::Reshape(a) => {
                let t = Tensor::from_parts(self.shape(*a).to_vec(), g.data().to_vec());
                self.send(grads, *a, t);
            }
            Op::BroadcastTo(a) => self.send(grads, *a, reduce_to(g, self.shape(*a))),
            Op::Sum { input, axis } => {
                let t = ops::spread(g, self.shape(*input), *axis, 1.0);
                self.send(grads, *input, t);
            }
            Op::Mean { input, axis } => {
                let shape = self.shape(*input);
                let count = match axis {
                    Some(ax) => shape[*ax],
                    None => numel(shape),
                };
                let t = ops::spread(g, shape, *axis, 1.0 / count as f32);
                self.send(grads, *input, t);
            }
            Op::L2Norm(a) => {
                let x = self.value(*a);
                let last = *x.shape().last().unwrap_or(&1);
                let mut data = Vec::with_capacity(x.numel());
                for ((row, &norm), &gi) in x
                    .data()
                    .chunks_exact(last)
                    .zip(node.value.data())
                    .zip(g.data())
                {
                    if norm > 0.0 {
                        data.extend(row.iter().map(|xi| gi * xi / norm));
                    } else {
                        data.extend(std::iter::repeat(0.0).take(last));
                    }
                }
                self.send(grads, *a, Tensor::from_parts(x.shape().to_vec(), data));
            }
        }
    }
}
