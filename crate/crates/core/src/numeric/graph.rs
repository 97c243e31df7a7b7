//! Tape-based reverse-mode differentiation over a closed set of ops:
//! linear, relu, add, scale, concat, elementwise mean, mean, mse, row
//! L2-normalization, pairwise dot products, transpose, softmax
//! cross-entropy (with margin and exclusions), and sigmoid BCE.
//!
//! Nodes are appended in evaluation order, so reverse index order is a valid
//! topological order for the backward sweep.

use std::collections::HashMap;

use super::optim::{ParamId, ParamSet};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Where the target-logit margin of [`Graph::cross_entropy`] applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginMode {
    /// The lowered target logit appears in numerator and normalizer alike.
    Shared,
    /// Only the numerator is lowered; the normalizer uses raw logits, which
    /// adds exactly `margin` to each row's loss.
    NumeratorOnly,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param,
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, T),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    MeanOf(Vec<NodeId>),
    Mean(NodeId),
    Mse(NodeId, NodeId),
    NormalizeRows { x: NodeId, norms: Vec<T> },
    MatMulNt(NodeId, NodeId),
    Transpose(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        excluded: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    BceWithLogits { logits: NodeId, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Smallest row norm used by [`Graph::normalize_rows`].
const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that reaches it.
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
    touched: Vec<ParamId>,
}

impl<T: Real> Gradients<T> {
    pub fn wrt(&self, node: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(node.0).and_then(Option::as_ref)
    }

    /// Parameters that received a gradient, in parameter-id order.
    pub fn touched_params(&self) -> &[ParamId] {
        &self.touched
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id).data()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant leaf; receives a gradient but never feeds a parameter.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Leaf bound to a parameter. Registering the same parameter twice
    /// returns the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(params.get(id).value.clone(), Op::Param);
        self.param_nodes.insert(id, n);
        n
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (bsz, i) = self.value(x).require_matrix("linear input")?;
        let (wi, o) = self.value(w).require_matrix("linear weight")?;
        if wi != i {
            return Err(Error::dim(format!(
                "linear: input has {i} features, weight expects {wi}"
            )));
        }
        if self.value(b).len() != o || self.value(b).rank() != 1 {
            return Err(Error::dim(format!(
                "linear: bias shape {:?} does not match {o} outputs",
                self.value(b).shape()
            )));
        }
        let mut out = matmul(self.value(x).data(), bsz, i, self.value(w).data(), o);
        let bias = self.value(b).data();
        for row in out.chunks_mut(o) {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v = *v + bv;
            }
        }
        let value = Tensor::new(vec![bsz, o], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "add: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> NodeId {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let rows = self.value(parts[0]).require_matrix("concat input")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat input")?;
            if r != rows {
                return Err(Error::dim(format!("concat: row counts {rows} and {r} differ")));
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero tensors"));
        }
        let cols = self.value(parts[0]).require_matrix("concat input")?.1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat input")?;
            if c != cols {
                return Err(Error::dim(format!("concat: column counts {cols} and {c} differ")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Elementwise arithmetic mean of equally shaped tensors.
    pub fn mean_of(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("mean of zero tensors"));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "mean: shapes {shape:?} and {:?} differ",
                    self.value(p).shape()
                )));
            }
        }
        let mut value = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            value.add_assign(self.value(p));
        }
        let inv = T::one() / T::from_f64(parts.len() as f64);
        value.data_mut().iter_mut().for_each(|v| *v = *v * inv);
        Ok(self.push(value, Op::MeanOf(parts.to_vec())))
    }

    /// Mean over every element, accumulated in f64.
    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        let s: f64 = v.data().iter().map(|v| v.as_f64()).sum();
        let m = if v.is_empty() { 0.0 } else { s / v.len() as f64 };
        self.push(Tensor::scalar(T::from_f64(m)), Op::Mean(x))
    }

    /// Mean squared error over every element, accumulated in f64.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(format!(
                "mse: shapes {:?} and {:?} differ",
                va.shape(),
                vb.shape()
            )));
        }
        let s: f64 = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| {
                let d = x.as_f64() - y.as_f64();
                d * d
            })
            .sum();
        let m = s / va.len().max(1) as f64;
        Ok(self.push(Tensor::scalar(T::from_f64(m)), Op::Mse(a, b)))
    }

    /// Scales every row to unit L2 norm.
    pub fn normalize_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).require_matrix("normalize input")?;
        let src = self.value(x).data();
        let mut norms = Vec::with_capacity(r);
        let mut data = Vec::with_capacity(r * c);
        for row in src.chunks(c) {
            let n2: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum();
            let n = T::from_f64(n2.sqrt().max(NORM_EPS));
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let value = Tensor::new(vec![r, c], data)?;
        Ok(self.push(value, Op::NormalizeRows { x, norms }))
    }

    /// All pairwise dot products: `out[i, j] = a_i · b_j`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.value(a).require_matrix("dot input")?;
        let (n, kb) = self.value(b).require_matrix("dot input")?;
        if k != kb {
            return Err(Error::dim(format!("dot: widths {k} and {kb} differ")));
        }
        let out = matmul_nt(self.value(a).data(), m, k, self.value(b).data(), n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMulNt(a, b)))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let value = transpose(self.value(x))?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    /// Mean over rows of `-log softmax(row)[target]`, where the target logit
    /// is lowered by `margin` (see [`MarginMode`]) and the column
    /// `excluded[r]` (if any) is left out of row `r`'s normalizer. Computed
    /// in f64.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        excluded: Option<&[Option<usize>]>,
        margin: f64,
        mode: MarginMode,
    ) -> Result<NodeId> {
        let (r, c) = self.value(logits).require_matrix("cross-entropy logits")?;
        if targets.len() != r {
            return Err(Error::dim(format!(
                "cross-entropy: {} targets for {r} rows",
                targets.len()
            )));
        }
        let excluded: Vec<Option<usize>> = match excluded {
            Some(e) if e.len() != r => {
                return Err(Error::dim("cross-entropy: exclusion list length"));
            }
            Some(e) => e.to_vec(),
            None => vec![None; r],
        };
        let z = self.value(logits);
        let (shift, extra) = match mode {
            MarginMode::Shared => (margin, 0.0),
            MarginMode::NumeratorOnly => (0.0, margin),
        };
        let mut probs = vec![0.0f64; r * c];
        let mut total = 0.0f64;
        for i in 0..r {
            let t = targets[i];
            if t >= c || excluded[i] == Some(t) {
                return Err(Error::contract(format!(
                    "cross-entropy: invalid target {t} for row {i}"
                )));
            }
            let row = z.row(i);
            let shifted = |k: usize| -> Option<f64> {
                if excluded[i] == Some(k) {
                    None
                } else if k == t {
                    Some(row[k].as_f64() - shift)
                } else {
                    Some(row[k].as_f64())
                }
            };
            let max = (0..c)
                .filter_map(shifted)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for k in 0..c {
                if let Some(s) = shifted(k) {
                    let e = (s - max).exp();
                    probs[i * c + k] = e;
                    denom += e;
                }
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= denom;
            }
            let log_p = shifted(t).unwrap() - max - denom.ln();
            total += extra - log_p;
        }
        let loss = if r == 0 { 0.0 } else { total / r as f64 };
        Ok(self.push(
            Tensor::scalar(T::from_f64(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                excluded,
                probs,
            },
        ))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against 0/1 targets.
    pub fn bce_with_logits(&mut self, logits: NodeId, targets: &Tensor<T>) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape() != targets.shape() {
            return Err(Error::dim(format!(
                "bce: logits {:?} vs targets {:?}",
                z.shape(),
                targets.shape()
            )));
        }
        let s: f64 = z
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &y)| {
                let (z, y) = (z.as_f64(), y.as_f64());
                // softplus(z) - y z, stable for either sign
                z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
            })
            .sum();
        let m = s / z.len().max(1) as f64;
        Ok(self.push(
            Tensor::scalar(T::from_f64(m)),
            Op::BceWithLogits {
                logits,
                targets: targets.data().to_vec(),
            },
        ))
    }

    /// Backpropagates from a scalar node. Parameter gradients are added into
    /// `params` (never overwritten); all node gradients are returned.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<T>) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut touched = Vec::new();
        let mut ids: Vec<(ParamId, NodeId)> =
            self.param_nodes.iter().map(|(&p, &n)| (p, n)).collect();
        ids.sort();
        for (pid, node) in ids {
            if let Some(g) = &grads[node.0] {
                params.get_mut(pid).grad.add_assign(g);
                touched.push(pid);
            }
        }
        Ok(Gradients { grads, touched })
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let acc = |grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>| {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (bsz, i) = (xv.rows(), xv.cols());
                let o = wv.cols();
                let gx = matmul_nt(g.data(), bsz, o, wv.data(), i);
                let gw = matmul_tn(xv.data(), bsz, i, g.data(), o);
                let mut gb = vec![T::zero(); o];
                for row in g.data().chunks(o) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                acc(grads, *x, Tensor::new(vec![bsz, i], gx).unwrap());
                acc(grads, *w, Tensor::new(vec![i, o], gw).unwrap());
                acc(grads, *b, Tensor::vector(gb));
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, &y) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    if y <= T::zero() {
                        *gv = T::zero();
                    }
                }
                acc(grads, *x, gx);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Scale(x, c) => acc(grads, *x, g.map(|v| v * *c)),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut data = Vec::with_capacity(rows * c);
                    for r in 0..rows {
                        data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                    }
                    acc(grads, p, Tensor::new(vec![rows, c], data).unwrap());
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let data = g.data()[offset * cols..(offset + r) * cols].to_vec();
                    acc(grads, p, Tensor::new(vec![r, cols], data).unwrap());
                    offset += r;
                }
            }
            Op::MeanOf(parts) => {
                let inv = T::one() / T::from_f64(parts.len() as f64);
                for &p in parts {
                    acc(grads, p, g.map(|v| v * inv));
                }
            }
            Op::Mean(x) => {
                let n = self.value(*x).len().max(1);
                let v = T::from_f64(g.data()[0].as_f64() / n as f64);
                acc(grads, *x, Tensor::full(self.value(*x).shape(), v));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = 2.0 * g.data()[0].as_f64() / va.len().max(1) as f64;
                let ga: Vec<T> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .map(|(&x, &y)| T::from_f64(scale * (x.as_f64() - y.as_f64())))
                    .collect();
                let gb: Vec<T> = ga.iter().map(|&v| -v).collect();
                acc(grads, *a, Tensor::new(va.shape().to_vec(), ga).unwrap());
                acc(grads, *b, Tensor::new(vb.shape().to_vec(), gb).unwrap());
            }
            Op::NormalizeRows { x, norms } => {
                let c = g.cols();
                let y = node.value.data();
                let mut gx = Vec::with_capacity(g.len());
                for (r, n) in norms.iter().enumerate() {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g.data()[r * c..(r + 1) * c];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| (gv - yv * dot) / *n));
                }
                acc(grads, *x, Tensor::new(g.shape().to_vec(), gx).unwrap());
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.rows(), va.cols());
                let n = vb.rows();
                let ga = matmul(g.data(), m, n, vb.data(), k);
                let gb = matmul_tn(g.data(), m, n, va.data(), k);
                acc(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                acc(grads, *b, Tensor::new(vec![n, k], gb).unwrap());
            }
            Op::Transpose(x) => acc(grads, *x, transpose(g).unwrap()),
            Op::CrossEntropy {
                logits,
                targets,
                excluded,
                probs,
            } => {
                let (r, c) = (self.value(*logits).rows(), self.value(*logits).cols());
                let scale = g.data()[0].as_f64() / r.max(1) as f64;
                let mut gz = vec![T::zero(); r * c];
                for i in 0..r {
                    for k in 0..c {
                        if excluded[i] == Some(k) {
                            continue;
                        }
                        let ind = if k == targets[i] { 1.0 } else { 0.0 };
                        gz[i * c + k] = T::from_f64(scale * (probs[i * c + k] - ind));
                    }
                }
                acc(grads, *logits, Tensor::new(vec![r, c], gz).unwrap());
            }
            Op::BceWithLogits { logits, targets } => {
                let z = self.value(*logits);
                let scale = g.data()[0].as_f64() / z.len().max(1) as f64;
                let gz: Vec<T> = z
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &y)| {
                        let s = 1.0 / (1.0 + (-z.as_f64()).exp());
                        T::from_f64(scale * (s - y.as_f64()))
                    })
                    .collect();
                acc(grads, *logits, Tensor::new(z.shape().to_vec(), gz).unwrap());
            }
        }
    }
}

pub(crate) fn transpose<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (r, c) = x.require_matrix("transpose input")?;
    let src = x.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// `a[m×k] · b[k×n]`, one output row per task.
pub(crate) fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    let mut out = vec![T::zero(); m * n];
    exec::for_each_row_mut(&mut out, n, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (p, &av) in ai.iter().enumerate() {
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o = *o + av * bv;
            }
        }
    });
    out
}

/// `a[m×k] · b[n×k]ᵀ`.
pub(crate) fn matmul_nt<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    let mut out = vec![T::zero(); m * n];
    exec::for_each_row_mut(&mut out, n, |i, row| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, o) in row.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            *o = ai.iter().zip(bj).fold(T::zero(), |s, (&x, &y)| s + x * y);
        }
    });
    out
}

/// `a[k×m]ᵀ · b[k×n]`.
pub(crate) fn matmul_tn<T: Real>(a: &[T], k: usize, m: usize, b: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    exec::for_each_row_mut(&mut out, n, |i, row| {
        for p in 0..k {
            let av = a[p * m + i];
            let bp = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(bp) {
                *o = *o + av * bv;
            }
        }
    });
    out
}
