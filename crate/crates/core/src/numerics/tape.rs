//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Operations are recorded on a [`Tape`] in execution order, which is a
//! topological order by construction. [`Tape::backward`] walks the record
//! in reverse and accumulates adjoints into persistent gradient buffers of
//! the leaves that require them.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{gemm, Layout, Tensor};
use crate::error::{Result, TfdError};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Silu(usize),
    Relu(usize),
    Sum(usize, Option<usize>),
    Mean(usize, Option<usize>),
    L2Norm(usize, Option<usize>),
    StopGradient(usize),
    AvgPool(usize, usize),
    NormalizeRows(usize, f64),
    PairwiseDistance(usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | AddRow(a, b) => vec![a, b],
            PairwiseDistance(a, b) => vec![a, b],
            Scale(a, _) | Exp(a) | Silu(a) | Relu(a) | Sum(a, _) | Mean(a, _) | L2Norm(a, _) => {
                vec![a]
            }
            AvgPool(a, _) | NormalizeRows(a, _) => vec![a],
            StopGradient(_) => vec![],
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Recording of primitive operations together with their outputs.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grads: RefCell<HashMap<usize, Vec<f64>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.value().shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn record(&self, op: Op) -> Result<Var<'_>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let value = evaluate(&op, &nodes)?;
            let rg = op.inputs().iter().any(|&i| nodes[i].requires_grad);
            (value, rg)
        };
        Ok(self.push(value, op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Accumulated gradient of a leaf; zeros when none has reached it.
    pub fn grad(&self, var: Var<'_>) -> Tensor {
        let shape = self.value_of(var.id).shape().to_vec();
        match self.grads.borrow().get(&var.id) {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    /// Reverse pass from a scalar `loss`. Gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TfdError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        adj[loss.id] = Some(vec![1.0]);
        let mut grads = self.grads.borrow_mut();
        for id in (0..=loss.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match grads.get_mut(&id) {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
                    None => {
                        grads.insert(id, g);
                    }
                }
                continue;
            }
            propagate(&node.op, &node.value, &g, &nodes, &mut adj);
        }
        Ok(())
    }

    /// Recomputes every recorded operation from its inputs and reports
    /// whether all stored outputs are reproduced bit-exactly.
    pub fn replay_matches(&self) -> Result<bool> {
        let nodes = self.nodes.borrow();
        for node in nodes.iter() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let again = evaluate(&node.op, &nodes)?;
            let same = again.shape() == node.value.shape()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Checks that every operation only reads earlier records.
    pub fn is_topologically_ordered(&self) -> bool {
        let nodes = self.nodes.borrow();
        nodes.iter().enumerate().all(|(id, n)| match n.op {
            Op::StopGradient(src) => src < id,
            ref op => op.inputs().iter().all(|&i| i < id),
        })
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value; only meaningful for one-element results.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::MatMul(self.id, rhs.id))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Add(self.id, rhs.id))
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Sub(self.id, rhs.id))
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::Mul(self.id, rhs.id))
    }

    /// Adds a length-`k` row vector to every row of an `n×k` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::AddRow(self.id, row.id))
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        self.tape.record(Op::Scale(self.id, factor))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.tape.record(Op::Exp(self.id))
    }

    pub fn silu(self) -> Result<Var<'t>> {
        self.tape.record(Op::Silu(self.id))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.tape.record(Op::Relu(self.id))
    }

    pub fn sum(self, axis: Option<usize>) -> Result<Var<'t>> {
        self.tape.record(Op::Sum(self.id, axis))
    }

    pub fn mean(self, axis: Option<usize>) -> Result<Var<'t>> {
        self.tape.record(Op::Mean(self.id, axis))
    }

    /// Euclidean norm. Its gradient at the zero vector is taken to be zero.
    pub fn l2_norm(self, axis: Option<usize>) -> Result<Var<'t>> {
        self.tape.record(Op::L2Norm(self.id, axis))
    }

    /// Same value, no gradient flows back into `self`.
    pub fn stop_gradient(self) -> Var<'t> {
        let value = (*self.value()).clone();
        self.tape.push(value, Op::StopGradient(self.id), false)
    }

    /// Mean over contiguous groups of `pool` entries along the last axis.
    pub fn avg_pool(self, pool: usize) -> Result<Var<'t>> {
        self.tape.record(Op::AvgPool(self.id, pool))
    }

    /// Scales each row to unit Euclidean norm (norm floored at `eps`).
    pub fn normalize_rows(self, eps: f64) -> Result<Var<'t>> {
        self.tape.record(Op::NormalizeRows(self.id, eps))
    }

    /// `[M×d] , [N×d] → [M×N]` matrix of Euclidean distances between rows.
    pub fn pairwise_distance(self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.record(Op::PairwiseDistance(self.id, other.id))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len().max(1) {
        return Err(TfdError::dim(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    if shape.is_empty() {
        return Ok((1, 1, 1));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn reduced_shape(shape: &[usize], axis: Option<usize>) -> Vec<usize> {
    match axis {
        None => Vec::new(),
        Some(a) if shape.is_empty() => {
            debug_assert_eq!(a, 0);
            Vec::new()
        }
        Some(a) => {
            let mut s = shape.to_vec();
            s.remove(a);
            s
        }
    }
}

fn binary_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<Vec<usize>> {
    if a.shape() == b.shape() {
        Ok(a.shape().to_vec())
    } else if b.numel() == 1 {
        Ok(a.shape().to_vec())
    } else if a.numel() == 1 {
        Ok(b.shape().to_vec())
    } else {
        Err(TfdError::dim(format!(
            "{what}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )))
    }
}

fn broadcast_binary(a: &Tensor, b: &Tensor, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = binary_shape(a, b, what)?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let data = match (ad.len() == 1 && n != 1, bd.len() == 1 && n != 1) {
        (false, false) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
        (true, _) => bd.iter().map(|&y| f(ad[0], y)).collect(),
        (false, true) => ad.iter().map(|&x| f(x, bd[0])).collect(),
    };
    Tensor::new(shape, data)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn evaluate(op: &Op, nodes: &[Node]) -> Result<Tensor> {
    let v = |i: usize| -> &Tensor { &nodes[i].value };
    match *op {
        Op::Leaf => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => v(a).matmul(v(b)),
        Op::Add(a, b) => broadcast_binary(v(a), v(b), "add", |x, y| x + y),
        Op::Sub(a, b) => broadcast_binary(v(a), v(b), "sub", |x, y| x - y),
        Op::Mul(a, b) => broadcast_binary(v(a), v(b), "mul", |x, y| x * y),
        Op::AddRow(a, b) => {
            let (n, k) = v(a).require_matrix("add_row")?;
            if v(b).numel() != k {
                return Err(TfdError::dim(format!(
                    "add_row: row of shape {:?} does not fit {:?}",
                    v(b).shape(),
                    v(a).shape()
                )));
            }
            let row = v(b).data();
            let mut data = v(a).data().to_vec();
            for r in data.chunks_exact_mut(k) {
                r.iter_mut().zip(row).for_each(|(x, y)| *x += y);
            }
            Tensor::matrix(n, k, data)
        }
        Op::Scale(a, s) => Ok(v(a).map(|x| x * s)),
        Op::Exp(a) => Ok(v(a).map(f64::exp)),
        Op::Silu(a) => Ok(v(a).map(|x| x * sigmoid(x))),
        Op::Relu(a) => Ok(v(a).map(|x| x.max(0.0))),
        Op::Sum(a, axis) | Op::Mean(a, axis) | Op::L2Norm(a, axis) => {
            let t = v(a);
            let (outer, len, inner) = match axis {
                None => (1, t.numel(), 1),
                Some(ax) => split_axis(t.shape(), ax)?,
            };
            let d = t.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        let x = d[base + i];
                        out[o * inner + i] += match op {
                            Op::L2Norm(..) => x * x,
                            _ => x,
                        };
                    }
                }
            }
            match op {
                Op::Mean(..) => out.iter_mut().for_each(|x| *x /= len as f64),
                Op::L2Norm(..) => out.iter_mut().for_each(|x| *x = x.sqrt()),
                _ => {}
            }
            Tensor::new(reduced_shape(t.shape(), axis), out)
        }
        Op::StopGradient(a) => Ok(v(a).clone()),
        Op::AvgPool(a, pool) => {
            let t = v(a);
            let w = t.cols();
            if pool == 0 || w % pool != 0 {
                return Err(TfdError::contract(format!(
                    "pool size {pool} does not divide width {w}"
                )));
            }
            let data: Vec<f64> = t
                .data()
                .chunks_exact(pool)
                .map(|c| c.iter().sum::<f64>() / pool as f64)
                .collect();
            let mut shape = t.shape().to_vec();
            if let Some(last) = shape.last_mut() {
                *last = w / pool;
            }
            Tensor::new(shape, data)
        }
        Op::NormalizeRows(a, eps) => {
            let t = v(a);
            let c = t.cols();
            let mut data = t.data().to_vec();
            for r in data.chunks_exact_mut(c) {
                let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt().max(eps);
                r.iter_mut().for_each(|x| *x /= norm);
            }
            Tensor::new(t.shape().to_vec(), data)
        }
        Op::PairwiseDistance(a, b) => {
            let (m, d) = v(a).require_matrix("pairwise_distance lhs")?;
            let (n, d2) = v(b).require_matrix("pairwise_distance rhs")?;
            if d != d2 {
                return Err(TfdError::dim(format!(
                    "pairwise_distance: {:?} vs {:?}",
                    v(a).shape(),
                    v(b).shape()
                )));
            }
            let (x, y) = (v(a), v(b));
            let mut out = Vec::with_capacity(m * n);
            for i in 0..m {
                let xi = x.row(i);
                for j in 0..n {
                    out.push(euclidean(xi, y.row(j)));
                }
            }
            Tensor::matrix(m, n, out)
        }
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: usize, g: Vec<f64>) {
    match &mut adj[id] {
        Some(buf) => buf.iter_mut().zip(&g).for_each(|(b, v)| *b += v),
        slot @ None => *slot = Some(g),
    }
}

/// Reduces a gradient of the broadcast output back to an input's shape.
fn unbroadcast(g: Vec<f64>, input: &Tensor) -> Vec<f64> {
    if input.numel() == g.len() {
        g
    } else {
        vec![g.iter().sum()]
    }
}

fn propagate(op: &Op, out: &Tensor, g: &[f64], nodes: &[Node], adj: &mut [Option<Vec<f64>>]) {
    let v = |i: usize| -> &Tensor { &nodes[i].value };
    let wants = |i: usize| nodes[i].requires_grad;
    match *op {
        Op::Leaf | Op::StopGradient(_) => {}
        Op::MatMul(a, b) => {
            let (m, k) = (v(a).rows(), v(a).cols());
            let n = v(b).cols();
            if wants(a) {
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g, Layout::Normal, v(b).data(), Layout::Transposed, &mut da, 0.0);
                accumulate(adj, a, da);
            }
            if wants(b) {
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, v(a).data(), Layout::Transposed, g, Layout::Normal, &mut db, 0.0);
                accumulate(adj, b, db);
            }
        }
        Op::Add(a, b) => {
            if wants(a) {
                accumulate(adj, a, unbroadcast(g.to_vec(), v(a)));
            }
            if wants(b) {
                accumulate(adj, b, unbroadcast(g.to_vec(), v(b)));
            }
        }
        Op::Sub(a, b) => {
            if wants(a) {
                accumulate(adj, a, unbroadcast(g.to_vec(), v(a)));
            }
            if wants(b) {
                accumulate(adj, b, unbroadcast(g.iter().map(|x| -x).collect(), v(b)));
            }
        }
        Op::Mul(a, b) => {
            let expand = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
            if wants(a) {
                let ga = g.iter().enumerate().map(|(i, gi)| gi * expand(v(b), i)).collect();
                accumulate(adj, a, unbroadcast(ga, v(a)));
            }
            if wants(b) {
                let gb = g.iter().enumerate().map(|(i, gi)| gi * expand(v(a), i)).collect();
                accumulate(adj, b, unbroadcast(gb, v(b)));
            }
        }
        Op::AddRow(a, b) => {
            if wants(a) {
                accumulate(adj, a, g.to_vec());
            }
            if wants(b) {
                let k = v(b).numel();
                let mut gb = vec![0.0; k];
                for r in g.chunks_exact(k) {
                    gb.iter_mut().zip(r).for_each(|(x, y)| *x += y);
                }
                accumulate(adj, b, gb);
            }
        }
        Op::Scale(a, s) => {
            if wants(a) {
                accumulate(adj, a, g.iter().map(|x| x * s).collect());
            }
        }
        Op::Exp(a) => {
            if wants(a) {
                accumulate(adj, a, g.iter().zip(out.data()).map(|(x, y)| x * y).collect());
            }
        }
        Op::Silu(a) => {
            if wants(a) {
                let ga = g
                    .iter()
                    .zip(v(a).data())
                    .map(|(gi, &x)| {
                        let s = sigmoid(x);
                        gi * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                accumulate(adj, a, ga);
            }
        }
        Op::Relu(a) => {
            if wants(a) {
                let ga = g
                    .iter()
                    .zip(v(a).data())
                    .map(|(gi, &x)| if x > 0.0 { *gi } else { 0.0 })
                    .collect();
                accumulate(adj, a, ga);
            }
        }
        Op::Sum(a, axis) | Op::Mean(a, axis) | Op::L2Norm(a, axis) => {
            if !wants(a) {
                return;
            }
            let t = v(a);
            let (outer, len, inner) = match axis {
                None => (1, t.numel(), 1),
                Some(ax) => split_axis(t.shape(), ax).expect("validated on record"),
            };
            let x = t.data();
            let mut ga = vec![0.0; t.numel()];
            for o in 0..outer {
                for l in 0..len {
                    let base = (o * len + l) * inner;
                    for i in 0..inner {
                        let gi = g[o * inner + i];
                        ga[base + i] = match op {
                            Op::Sum(..) => gi,
                            Op::Mean(..) => gi / len as f64,
                            _ => {
                                let norm = out.data()[o * inner + i];
                                if norm > 0.0 {
                                    gi * x[base + i] / norm
                                } else {
                                    0.0
                                }
                            }
                        };
                    }
                }
            }
            accumulate(adj, a, ga);
        }
        Op::AvgPool(a, pool) => {
            if wants(a) {
                let ga = g
                    .iter()
                    .flat_map(|gi| std::iter::repeat(gi / pool as f64).take(pool))
                    .collect();
                accumulate(adj, a, ga);
            }
        }
        Op::NormalizeRows(a, eps) => {
            if !wants(a) {
                return;
            }
            let c = out.cols();
            let x = v(a).data();
            let mut ga = vec![0.0; x.len()];
            for (r, ((gr, yr), xr)) in g
                .chunks_exact(c)
                .zip(out.data().chunks_exact(c))
                .zip(x.chunks_exact(c))
                .enumerate()
            {
                let norm = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dst = &mut ga[r * c..(r + 1) * c];
                if norm > eps {
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        dst[j] = (gr[j] - yr[j] * dot) / norm;
                    }
                } else {
                    for j in 0..c {
                        dst[j] = gr[j] / eps;
                    }
                }
            }
            accumulate(adj, a, ga);
        }
        Op::PairwiseDistance(a, b) => {
            let (x, y) = (v(a), v(b));
            let (m, d) = (x.rows(), x.cols());
            let n = y.rows();
            let mut gx = if wants(a) { Some(vec![0.0; m * d]) } else { None };
            let mut gy = if wants(b) { Some(vec![0.0; n * d]) } else { None };
            for i in 0..m {
                for j in 0..n {
                    let dist = out.data()[i * n + j];
                    let gij = g[i * n + j];
                    if dist == 0.0 || gij == 0.0 {
                        continue;
                    }
                    let w = gij / dist;
                    let (xi, yj) = (x.row(i), y.row(j));
                    for k in 0..d {
                        let diff = w * (xi[k] - yj[k]);
                        if let Some(gx) = gx.as_mut() {
                            gx[i * d + k] += diff;
                        }
                        if let Some(gy) = gy.as_mut() {
                            gy[j * d + k] -= diff;
                        }
                    }
                }
            }
            if let Some(gx) = gx {
                accumulate(adj, a, gx);
            }
            if let Some(gy) = gy {
                accumulate(adj, b, gy);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, d: &[f64]) -> Tensor {
        Tensor::matrix(r, c, d.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let out = i.matmul(i).unwrap();
        assert_eq!(*out.value(), Tensor::identity(2));
    }

    #[test]
    fn matmul_hand_values_and_shape_error() {
        let tape = Tape::new();
        let a = tape.constant(mat(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.constant(mat(2, 1, &[1.0, 1.0]));
        assert_eq!(a.matmul(b).unwrap().value().data(), &[3.0, 7.0]);
        let err = b.matmul(b).unwrap_err().to_string();
        assert!(err.contains("[2, 1]"), "{err}");
    }

    #[test]
    fn elementwise_basics() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -2.0, 3.5]));
        let zero = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.add(zero).unwrap().value().data(), x.value().data());
        let e = tape.constant(Tensor::scalar(0.0)).exp().unwrap();
        assert_eq!(e.item(), 1.0);
        let bad = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(x.add(bad), Err(TfdError::Dimension(_))));
    }

    #[test]
    fn silu_slope_at_zero() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(0.0));
        let y = x.silu().unwrap();
        tape.backward(y).unwrap();
        assert!((tape.grad(x).item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reductions() {
        let tape = Tape::new();
        let v = tape.param(Tensor::vector(vec![3.0, 4.0]));
        assert_eq!(v.l2_norm(None).unwrap().item(), 5.0);
        let w = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]));
        assert_eq!(w.mean(None).unwrap().item(), 2.5);
        let s = w.sum(None).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(w).data(), &[1.0; 4]);
        assert!(matches!(w.sum(Some(3)), Err(TfdError::Dimension(_))));
    }

    #[test]
    fn axis_reductions() {
        let tape = Tape::new();
        let m = tape.param(mat(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        assert_eq!(m.sum(Some(0)).unwrap().value().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(m.sum(Some(1)).unwrap().value().data(), &[6.0, 15.0]);
        assert_eq!(m.mean(Some(1)).unwrap().value().shape(), &[2]);
    }

    #[test]
    fn zero_vector_norm_has_zero_gradient() {
        let tape = Tape::new();
        let z = tape.param(Tensor::vector(vec![0.0, 0.0]));
        let n = z.l2_norm(None).unwrap();
        assert_eq!(n.item(), 0.0);
        tape.backward(n).unwrap();
        assert_eq!(tape.grad(z).data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_gradient_and_accumulation() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(3.0));
        let loss = x.square().unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).item(), 6.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).item(), 12.0);
        tape.zero_grad();
        assert_eq!(tape.grad(x).item(), 0.0);
    }

    #[test]
    fn stop_gradient_detaches() {
        let tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let loss = x.stop_gradient().mul(x).unwrap();
        assert_eq!(loss.item(), 4.0);
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).item(), 2.0);

        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, -1.0]));
        let only_sg = x.stop_gradient().sum(None).unwrap();
        assert!(!only_sg.requires_grad());
        tape.backward(only_sg).unwrap();
        assert_eq!(tape.grad(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(TfdError::Contract(_))));
    }

    #[test]
    fn unreachable_leaf_has_zero_grad() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.param(Tensor::vector(vec![5.0, 6.0]));
        let loss = x.sum(None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(y).data(), &[0.0, 0.0]);
    }

    #[test]
    fn avg_pool_values_and_errors() {
        let tape = Tape::new();
        let v = tape.constant(mat(1, 8, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
        assert_eq!(v.avg_pool(4).unwrap().value().data(), &[2.5, 6.5]);
        assert_eq!(v.avg_pool(1).unwrap().value().data(), v.value().data());
        assert!(matches!(v.avg_pool(3), Err(TfdError::Contract(_))));
    }

    #[test]
    fn replay_and_order() {
        let tape = Tape::new();
        let x = tape.param(mat(2, 2, &[0.1, -0.3, 0.7, 1.2]));
        let w = tape.param(mat(2, 3, &[0.2, 0.4, -0.5, 1.0, 0.0, 0.3]));
        let h = x.matmul(w).unwrap().silu().unwrap().normalize_rows(1e-12).unwrap();
        let d = h.pairwise_distance(h.stop_gradient()).unwrap();
        let _ = d.exp().unwrap().mean(None).unwrap();
        assert!(tape.is_topologically_ordered());
        assert!(tape.replay_matches().unwrap());
    }
}
