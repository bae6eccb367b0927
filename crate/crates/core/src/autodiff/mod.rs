//! Reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operator appends one
//! node holding its forward value and an op-record naming its parents, so
//! node indices are a topological order and the graph cannot contain a cycle.
//! The graph is meant to be rebuilt for every training step.
//!
//! Binary elementwise operators accept a second operand that is either the
//! same shape as the first, a row vector matching the last axis (`[n]` or
//! `[1, n]`), or a column `[m, 1]` against a matrix `[m, n]`.

pub mod check;

pub use check::{gradient_check, GradCheckConfig, GradCheckReport, GraphObjective, GroupReport, Objective};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Inputs to `log` are clamped to at least this value.
pub const LOG_FLOOR: f64 = 1e-12;

/// Floating-point element type of a graph.
pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Row,
    Column,
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Add(Tensor, Tensor, Broadcast),
    Sub(Tensor, Tensor, Broadcast),
    Mul(Tensor, Tensor, Broadcast),
    Scale(Tensor, T),
    MatMul(Tensor, Tensor),
    Concat(Vec<Tensor>),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Softmax(Tensor),
    Log(Tensor),
    Min(Tensor, Tensor),
    Sum(Tensor),
    Gather(Tensor, Arc<[usize]>),
    ScatterAdd(Tensor, Arc<[usize]>),
}

/// Operator identifiers, as reported by [`Graph::op_kind`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Add,
    Sub,
    Mul,
    Scale,
    MatMul,
    Concat,
    Sigmoid,
    Tanh,
    Softmax,
    Log,
    Min,
    Sum,
    Gather,
    ScatterAdd,
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    min_ties: usize,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            min_ties: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, t: Tensor) -> T {
        self.nodes[t.0].value[0]
    }

    /// Number of exact ties resolved by `min` so far.
    pub fn min_ties(&self) -> usize {
        self.min_ties
    }

    pub fn op_kind(&self, t: Tensor) -> OpKind {
        match &self.nodes[t.0].op {
            Op::Leaf => OpKind::Leaf,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Concat(..) => OpKind::Concat,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Softmax(..) => OpKind::Softmax,
            Op::Log(..) => OpKind::Log,
            Op::Min(..) => OpKind::Min,
            Op::Sum(..) => OpKind::Sum,
            Op::Gather(..) => OpKind::Gather,
            Op::ScatterAdd(..) => OpKind::ScatterAdd,
        }
    }

    /// Parent handles of a node, in operand order.
    pub fn parents(&self, t: Tensor) -> Vec<Tensor> {
        match &self.nodes[t.0].op {
            Op::Leaf => vec![],
            Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Min(a, b) => vec![*a, *b],
            Op::Concat(xs) => xs.clone(),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _) => vec![*a],
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        let requires_grad = self.any_parent_requires_grad(&op);
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn any_parent_requires_grad(&self, op: &Op<T>) -> bool {
        let w = |t: &Tensor| self.nodes[t.0].requires_grad;
        match op {
            Op::Leaf => false,
            Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) | Op::MatMul(a, b) | Op::Min(a, b) => {
                w(a) || w(b)
            }
            Op::Concat(xs) => xs.iter().any(w),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Gather(a, _)
            | Op::ScatterAdd(a, _) => w(a),
        }
    }

    fn leaf(&mut self, values: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::contract(format!("leaf shape {shape:?} must be non-empty and positive")));
        }
        if numel(shape) != values.len() {
            return Err(Error::Dimension {
                op: "leaf",
                lhs: shape.to_vec(),
                rhs: vec![values.len()],
            });
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: values,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Tensor(self.nodes.len() - 1))
    }

    /// A differentiable leaf.
    pub fn param(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(values, shape, true)
    }

    /// A leaf that never receives an adjoint.
    pub fn constant(&mut self, values: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(values, shape, false)
    }

    pub fn param_f64(&mut self, values: &[f64], shape: &[usize]) -> Result<Tensor> {
        self.param(values.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn constant_f64(&mut self, values: &[f64], shape: &[usize]) -> Result<Tensor> {
        self.constant(values.iter().map(|&v| T::of(v)).collect(), shape)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Result<Tensor> {
        self.constant(vec![T::zero(); numel(shape)], shape)
    }

    pub fn filled(&mut self, shape: &[usize], v: f64) -> Result<Tensor> {
        self.constant(vec![T::of(v); numel(shape)], shape)
    }

    fn broadcast_rule(&self, op: &'static str, a: Tensor, b: Tensor) -> Result<Broadcast> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa == sb {
            return Ok(Broadcast::None);
        }
        let last = *sa.last().unwrap();
        let row = match sb {
            [n] => *n == last,
            [1, n] => *n == last,
            _ => false,
        };
        if row {
            return Ok(Broadcast::Row);
        }
        if let ([m, _], [mb, 1]) = (sa, sb) {
            if m == mb {
                return Ok(Broadcast::Column);
            }
        }
        Err(Error::Dimension {
            op,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })
    }

    fn zip_broadcast(
        &self,
        a: Tensor,
        b: Tensor,
        bc: Broadcast,
        f: impl Fn(T, T) -> T,
    ) -> Vec<T> {
        let va = self.value(a);
        let vb = self.value(b);
        match bc {
            Broadcast::None => va.iter().zip(vb).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Row => {
                let n = vb.len();
                va.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, vb[i % n]))
                    .collect()
            }
            Broadcast::Column => {
                let n = self.shape(a)[1];
                va.iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, vb[i / n]))
                    .collect()
            }
        }
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let bc = self.broadcast_rule("add", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x + y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Add(a, b, bc)))
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let bc = self.broadcast_rule("sub", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x - y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Sub(a, b, bc)))
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let bc = self.broadcast_rule("mul", a, b)?;
        let v = self.zip_broadcast(a, b, bc, |x, y| x * y);
        Ok(self.push(self.shape(a).to_vec(), v, Op::Mul(a, b, bc)))
    }

    pub fn scale(&mut self, a: Tensor, s: f64) -> Result<Tensor> {
        let s = T::of(s);
        let v = self.value(a).iter().map(|&x| x * s).collect();
        Ok(self.push(self.shape(a).to_vec(), v, Op::Scale(a, s)))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let (m, k, n) = match (self.shape(a), self.shape(b)) {
            ([m, k], [kb, n]) if k == kb => (*m, *k, *n),
            (sa, sb) => {
                return Err(Error::Dimension {
                    op: "matmul",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                })
            }
        };
        let mut out = vec![T::zero(); m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b)))
    }

    /// Concatenate along the last axis. Leading dimensions must agree.
    pub fn concat(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = &self.shape(first)[..self.shape(first).len() - 1];
        let rows = numel(lead);
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || &s[..s.len() - 1] != lead {
                return Err(Error::Dimension {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(self.push(shape, out, Op::Concat(xs.to_vec())))
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(self.shape(a).to_vec(), v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let v = self.value(a).iter().map(|&x| x.tanh()).collect();
        self.push(self.shape(a).to_vec(), v, Op::Tanh(a))
    }

    /// Max-shifted softmax over the last axis.
    pub fn softmax(&mut self, a: Tensor) -> Tensor {
        let n = *self.shape(a).last().unwrap();
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(self.shape(a).to_vec(), out, Op::Softmax(a))
    }

    /// Natural log with inputs clamped to at least [`LOG_FLOOR`]. NaN passes
    /// through so divergence stays visible.
    pub fn log(&mut self, a: Tensor) -> Tensor {
        let floor = T::of(LOG_FLOOR);
        let v = self
            .value(a)
            .iter()
            .map(|&x| if x < floor { floor.ln() } else { x.ln() })
            .collect();
        self.push(self.shape(a).to_vec(), v, Op::Log(a))
    }

    /// Elementwise minimum. At exact ties the first operand is selected.
    pub fn min(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension {
                op: "min",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let mut ties = 0;
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| {
                if x == y {
                    ties += 1;
                }
                if x <= y {
                    x
                } else {
                    y
                }
            })
            .collect();
        self.min_ties += ties;
        Ok(self.push(self.shape(a).to_vec(), v, Op::Min(a, b)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Tensor) -> Tensor {
        let s: T = self.value(a).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(a))
    }

    /// `out[i] = src[index[i]]` over flat positions, reshaped to `shape`.
    pub fn gather(&mut self, src: Tensor, index: Arc<[usize]>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != index.len() {
            return Err(Error::Dimension {
                op: "gather",
                lhs: shape.to_vec(),
                rhs: vec![index.len()],
            });
        }
        let v = self.value(src);
        if let Some(&bad) = index.iter().find(|&&i| i >= v.len()) {
            return Err(Error::contract(format!(
                "gather index {bad} out of range for {} elements",
                v.len()
            )));
        }
        let out = index.iter().map(|&i| v[i]).collect();
        Ok(self.push(shape.to_vec(), out, Op::Gather(src, index)))
    }

    /// `out[index[i]] += src[i]` into a zero array of `shape`.
    pub fn scatter_add(&mut self, src: Tensor, index: Arc<[usize]>, shape: &[usize]) -> Result<Tensor> {
        let n = numel(shape);
        let v = self.value(src);
        if v.len() != index.len() {
            return Err(Error::Dimension {
                op: "scatter_add",
                lhs: self.shape(src).to_vec(),
                rhs: vec![index.len()],
            });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::contract(format!(
                "scatter index {bad} out of range for shape {shape:?}"
            )));
        }
        let mut out = vec![T::zero(); n];
        for (&i, &x) in index.iter().zip(v) {
            out[i] += x;
        }
        Ok(self.push(shape.to_vec(), out, Op::ScatterAdd(src, index)))
    }

    /// Same values under a new shape (an identity gather).
    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Result<Tensor> {
        let n = self.value(a).len();
        if numel(shape) != n {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let index: Arc<[usize]> = (0..n).collect();
        self.gather(a, index, shape)
    }

    /// Columns `[start, start + width)` of a `[m, n]` tensor.
    pub fn slice_cols(&mut self, a: Tensor, start: usize, width: usize) -> Result<Tensor> {
        let (m, n) = match self.shape(a) {
            [m, n] if start + width <= *n => (*m, *n),
            s => {
                return Err(Error::Dimension {
                    op: "slice_cols",
                    lhs: s.to_vec(),
                    rhs: vec![start, width],
                })
            }
        };
        let index: Arc<[usize]> = (0..m)
            .flat_map(|r| (start..start + width).map(move |c| r * n + c))
            .collect();
        self.gather(a, index, &[m, width])
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Tensor) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    fn wants(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b, bc) => {
                if self.wants(*a) {
                    acc(grads, *a, self.value(*a).len(), |d| axpy(d, g, T::one()));
                }
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    acc(grads, *b, n, |d| self.reduce_into(d, g, node, *bc, T::one()));
                }
            }
            Op::Sub(a, b, bc) => {
                if self.wants(*a) {
                    acc(grads, *a, self.value(*a).len(), |d| axpy(d, g, T::one()));
                }
                if self.wants(*b) {
                    let n = self.value(*b).len();
                    acc(grads, *b, n, |d| self.reduce_into(d, g, node, *bc, -T::one()));
                }
            }
            Op::Mul(a, b, bc) => {
                if self.wants(*a) {
                    let gb = self.zip_broadcast_slice(g, *a, *b, *bc);
                    acc(grads, *a, gb.len(), |d| axpy(d, &gb, T::one()));
                }
                if self.wants(*b) {
                    let ga: Vec<T> = g.iter().zip(self.value(*a)).map(|(&x, &y)| x * y).collect();
                    let n = self.value(*b).len();
                    acc(grads, *b, n, |d| self.reduce_into(d, &ga, node, *bc, T::one()));
                }
            }
            Op::Scale(a, s) => {
                if self.wants(*a) {
                    acc(grads, *a, g.len(), |d| axpy(d, g, *s));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                if self.wants(*a) {
                    // dA = G Bᵀ
                    let vb = self.value(*b);
                    acc(grads, *a, m * k, |d| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            let di = &mut d[i * k..(i + 1) * k];
                            for (p, dp) in di.iter_mut().enumerate() {
                                let bp = &vb[p * n..(p + 1) * n];
                                let mut s = T::zero();
                                for j in 0..n {
                                    s += gi[j] * bp[j];
                                }
                                *dp += s;
                            }
                        }
                    });
                }
                if self.wants(*b) {
                    // dB = Aᵀ G
                    let va = self.value(*a);
                    acc(grads, *b, k * n, |d| {
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = va[i * k + p];
                                if aip == T::zero() {
                                    continue;
                                }
                                let dp = &mut d[p * n..(p + 1) * n];
                                for j in 0..n {
                                    dp[j] += aip * gi[j];
                                }
                            }
                        }
                    });
                }
            }
            Op::Concat(xs) => {
                let total = *node.shape.last().unwrap();
                let rows = g.len() / total;
                let mut offset = 0;
                for &x in xs {
                    let w = *self.shape(x).last().unwrap();
                    if self.wants(x) {
                        acc(grads, x, rows * w, |d| {
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                axpy(&mut d[r * w..(r + 1) * w], src, T::one());
                            }
                        });
                    }
                    offset += w;
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    acc(grads, *a, g.len(), |d| {
                        for ((dx, &gy), &y) in d.iter_mut().zip(g).zip(&node.value) {
                            *dx += gy * y * (T::one() - y);
                        }
                    });
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    acc(grads, *a, g.len(), |d| {
                        for ((dx, &gy), &y) in d.iter_mut().zip(g).zip(&node.value) {
                            *dx += gy * (T::one() - y * y);
                        }
                    });
                }
            }
            Op::Softmax(a) => {
                if self.wants(*a) {
                    let n = *node.shape.last().unwrap();
                    acc(grads, *a, g.len(), |d| {
                        for ((dr, gr), yr) in d
                            .chunks_mut(n)
                            .zip(g.chunks(n))
                            .zip(node.value.chunks(n))
                        {
                            let dot: T = gr.iter().zip(yr).map(|(&x, &y)| x * y).sum();
                            for ((dx, &gy), &y) in dr.iter_mut().zip(gr).zip(yr) {
                                *dx += y * (gy - dot);
                            }
                        }
                    });
                }
            }
            Op::Log(a) => {
                if self.wants(*a) {
                    let floor = T::of(LOG_FLOOR);
                    let x = self.value(*a);
                    acc(grads, *a, g.len(), |d| {
                        for ((dx, &gy), &xi) in d.iter_mut().zip(g).zip(x) {
                            if !(xi < floor) {
                                *dx += gy / xi;
                            }
                        }
                    });
                }
            }
            Op::Min(a, b) => {
                let va = self.value(*a);
                let vb = self.value(*b);
                if self.wants(*a) {
                    acc(grads, *a, g.len(), |d| {
                        for i in 0..g.len() {
                            if va[i] <= vb[i] {
                                d[i] += g[i];
                            }
                        }
                    });
                }
                if self.wants(*b) {
                    acc(grads, *b, g.len(), |d| {
                        for i in 0..g.len() {
                            if va[i] > vb[i] {
                                d[i] += g[i];
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let n = self.value(*a).len();
                    acc(grads, *a, n, |d| d.iter_mut().for_each(|x| *x += g[0]));
                }
            }
            Op::Gather(a, index) => {
                if self.wants(*a) {
                    let n = self.value(*a).len();
                    acc(grads, *a, n, |d| {
                        for (&i, &gy) in index.iter().zip(g) {
                            d[i] += gy;
                        }
                    });
                }
            }
            Op::ScatterAdd(a, index) => {
                if self.wants(*a) {
                    acc(grads, *a, index.len(), |d| {
                        for (dx, &i) in d.iter_mut().zip(index.iter()) {
                            *dx += g[i];
                        }
                    });
                }
            }
        }
    }

    // g ⊙ broadcast(b), shaped like a.
    fn zip_broadcast_slice(&self, g: &[T], a: Tensor, b: Tensor, bc: Broadcast) -> Vec<T> {
        let vb = self.value(b);
        match bc {
            Broadcast::None => g.iter().zip(vb).map(|(&x, &y)| x * y).collect(),
            Broadcast::Row => {
                let n = vb.len();
                g.iter().enumerate().map(|(i, &x)| x * vb[i % n]).collect()
            }
            Broadcast::Column => {
                let n = self.shape(a)[1];
                g.iter().enumerate().map(|(i, &x)| x * vb[i / n]).collect()
            }
        }
    }

    // Sum an output-shaped adjoint back down to the broadcast operand.
    fn reduce_into(&self, d: &mut [T], g: &[T], node: &Node<T>, bc: Broadcast, sign: T) {
        match bc {
            Broadcast::None => axpy(d, g, sign),
            Broadcast::Row => {
                let n = d.len();
                for row in g.chunks(n) {
                    axpy(d, row, sign);
                }
            }
            Broadcast::Column => {
                let n = node.shape[1];
                for (dx, row) in d.iter_mut().zip(g.chunks(n)) {
                    let s: T = row.iter().copied().sum();
                    *dx += sign * s;
                }
            }
        }
    }
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x = *x / total;
    }
}

fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let oi = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let bp = &b[p * n..(p + 1) * n];
            for j in 0..n {
                oi[j] += aip * bp[j];
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(d: &mut [T], x: &[T], s: T) {
    for (dv, &xv) in d.iter_mut().zip(x) {
        *dv += s * xv;
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], t: Tensor, n: usize, f: impl FnOnce(&mut [T])) {
    let slot = grads[t.0].get_or_insert_with(|| vec![T::zero(); n]);
    f(slot);
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T: Scalar = f64> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Adjoint of a leaf, or `None` when the root does not depend on it.
    pub fn get(&self, t: Tensor) -> Option<&[T]> {
        self.grads.get(t.0).and_then(|g| g.as_deref())
    }

    /// Adjoint of a leaf as `f64`, zero-filled when unreachable.
    pub fn to_f64(&self, graph: &Graph<T>, t: Tensor) -> Vec<f64> {
        match self.get(t) {
            Some(g) => g.iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; graph.value(t).len()],
        }
    }
}
