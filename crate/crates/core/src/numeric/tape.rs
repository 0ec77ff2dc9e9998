//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Graph`] records every primitive as it is evaluated. Leaves are either
//! tracked parameters (gradients are accumulated for them) or constants.
//! [`Graph::backward`] walks the record once, newest node first, and returns
//! the adjoint of every tracked node.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{masked_softmax_rows, normalize};
use super::matrix::{gemm_nn, gemm_nt, gemm_tn, Mask, Matrix};
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    MulConst(usize, Matrix),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Matrix,
        inv_std: Vec<f64>,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
    SliceCols {
        src: usize,
        start: usize,
    },
    ConcatCols(Vec<usize>),
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Matrix,
        scale: f64,
    },
    SumAll(usize),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
    tracked: bool,
}

/// The gradient tape. Parameter leaves borrow their values for `'p`.
pub struct Graph<'p> {
    id: u64,
    nodes: Vec<Node<'p>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[self.idx(id)].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id).data()[0]
    }

    fn idx(&self, id: NodeId) -> usize {
        assert_eq!(id.tape, self.id, "node belongs to a different tape");
        id.index
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op, tracked: bool) -> NodeId {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op, tracked });
        NodeId {
            tape: self.id,
            index,
        }
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tracked)
    }

    /// Tracked leaf borrowing `value`.
    pub fn param(&mut self, value: &'p Matrix) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Tracked leaf owning `value`.
    pub fn param_owned(&mut self, value: Matrix) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul(&self.nodes[ib].value)?;
        let t = self.tracked(&[ia, ib]);
        Ok(self.push(Cow::Owned(out), Op::MatMul(ia, ib), t))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let out = self.nodes[ia].value.matmul_transposed(&self.nodes[ib].value)?;
        let t = self.tracked(&[ia, ib]);
        Ok(self.push(Cow::Owned(out), Op::MatMulT(ia, ib), t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let mut out = self.nodes[ia].value.clone().into_owned();
        out.add_assign(&self.nodes[ib].value)?;
        let t = self.tracked(&[ia, ib]);
        Ok(self.push(Cow::Owned(out), Op::Add(ia, ib), t))
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (ia, ir) = (self.idx(a), self.idx(row));
        let (av, rv) = (&self.nodes[ia].value, &self.nodes[ir].value);
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::Shape {
                op: "add_row",
                left: av.shape(),
                right: rv.shape(),
            });
        }
        let mut out = av.clone().into_owned();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        let t = self.tracked(&[ia, ir]);
        Ok(self.push(Cow::Owned(out), Op::AddRow(ia, ir), t))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|v| v * s);
        let t = self.tracked(&[ia]);
        self.push(Cow::Owned(out), Op::Scale(ia, s), t)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let ia = self.idx(a);
        let out = self.nodes[ia].value.map(|v| v.max(0.0));
        let t = self.tracked(&[ia]);
        self.push(Cow::Owned(out), Op::Relu(ia), t)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: NodeId, c: Matrix) -> Result<NodeId> {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        av.check_same_shape("mul_const", &c)?;
        let data = av.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Matrix::from_vec(av.rows(), av.cols(), data)?;
        let t = self.tracked(&[ia]);
        Ok(self.push(Cow::Owned(out), Op::MulConst(ia, c), t))
    }

    pub fn masked_softmax(&mut self, a: NodeId, mask: &Mask) -> Result<NodeId> {
        let ia = self.idx(a);
        let out = masked_softmax_rows(&self.nodes[ia].value, mask)?;
        let t = self.tracked(&[ia]);
        Ok(self.push(Cow::Owned(out), Op::Softmax(ia), t))
    }

    /// Row-wise layer normalization with `1×d` gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (ix, ig, ib) = (self.idx(x), self.idx(gamma), self.idx(beta));
        let (xv, gv, bv) = (
            &self.nodes[ix].value,
            &self.nodes[ig].value,
            &self.nodes[ib].value,
        );
        if gv.shape() != (1, xv.cols()) || bv.shape() != (1, xv.cols()) {
            return Err(Error::Shape {
                op: "layer_norm",
                left: xv.shape(),
                right: gv.shape(),
            });
        }
        let mut xhat = Matrix::zeros(xv.rows(), xv.cols());
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let (h, s) = normalize(xv.row(r), eps);
            inv_std.push(s);
            for (c, hv) in h.iter().enumerate() {
                out.set(r, c, gv.data()[c] * hv + bv.data()[c]);
            }
            xhat.row_mut(r).copy_from_slice(&h);
        }
        let t = self.tracked(&[ix, ig, ib]);
        Ok(self.push(
            Cow::Owned(out),
            Op::LayerNorm {
                x: ix,
                gamma: ig,
                beta: ib,
                xhat,
                inv_std,
            },
            t,
        ))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let it = self.idx(table);
        let tv = &self.nodes[it].value;
        let mut out = Matrix::zeros(indices.len(), tv.cols());
        for (r, &i) in indices.iter().enumerate() {
            if i >= tv.rows() {
                return Err(Error::InvalidToken {
                    id: i,
                    vocab_size: tv.rows(),
                });
            }
            out.row_mut(r).copy_from_slice(tv.row(i));
        }
        let t = self.tracked(&[it]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Gather {
                table: it,
                indices: indices.to_vec(),
            },
            t,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        if start + len > av.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: av.shape(),
                right: (start, len),
            });
        }
        let mut out = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let t = self.tracked(&[ia]);
        Ok(self.push(Cow::Owned(out), Op::SliceCols { src: ia, start }, t))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        let rows = self.nodes[idx[0]].value.rows();
        let cols: usize = idx.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &i in &idx {
            let v = &self.nodes[i].value;
            if v.rows() != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    left: (rows, cols),
                    right: v.shape(),
                });
            }
            for r in 0..rows {
                out.row_mut(r)[offset..offset + v.cols()].copy_from_slice(v.row(r));
            }
            offset += v.cols();
        }
        let t = self.tracked(&idx);
        Ok(self.push(Cow::Owned(out), Op::ConcatCols(idx), t))
    }

    /// Softmax cross-entropy against per-row targets; `None` rows are ignored.
    /// Produces a `1×1` node.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[Option<usize>],
        reduction: Reduction,
    ) -> Result<NodeId> {
        let il = self.idx(logits);
        let lv = &self.nodes[il].value;
        if targets.len() != lv.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: lv.shape(),
                right: (targets.len(), 1),
            });
        }
        let live = targets.iter().filter(|t| t.is_some()).count();
        if live == 0 && reduction == Reduction::Mean {
            return Err(Error::AllPadded);
        }
        let probs = super::kernels::softmax_rows(lv);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= lv.cols() {
                    return Err(Error::InvalidToken {
                        id: t,
                        vocab_size: lv.cols(),
                    });
                }
                // log-sum-exp form keeps large margins exact
                let row = lv.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[t];
            }
        }
        let scale = match reduction {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / live as f64,
        };
        let t = self.tracked(&[il]);
        Ok(self.push(
            Cow::Owned(Matrix::filled(1, 1, total * scale)),
            Op::CrossEntropy {
                logits: il,
                targets: targets.to_vec(),
                probs,
                scale,
            },
            t,
        ))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let ia = self.idx(a);
        let s = self.nodes[ia].value.sum();
        let t = self.tracked(&[ia]);
        self.push(Cow::Owned(Matrix::filled(1, 1, s)), Op::SumAll(ia), t)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.tape != self.id || loss.index >= self.nodes.len() {
            return Err(Error::NotOnTape(loss.index));
        }
        if self.nodes[loss.index].value.shape() != (1, 1) {
            return Err(Error::NotOnTape(loss.index));
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visited = Vec::new();
        grads[loss.index] = Some(Matrix::filled(1, 1, 1.0));

        for i in (0..=loss.index).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            visited.push(i);
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            visited,
        })
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |j: usize| -> &Matrix { &self.nodes[j].value };
        let mut acc = |j: usize, f: &dyn Fn(&mut Matrix)| {
            if !self.nodes[j].tracked {
                return;
            }
            let (r, c) = self.nodes[j].value.shape();
            let slot = grads[j].get_or_insert_with(|| Matrix::zeros(r, c));
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, &|s| gemm_nt(g, val(*b), s));
                acc(*b, &|s| gemm_tn(val(*a), g, s));
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ: da = g b, db = gᵀ a
                acc(*a, &|s| gemm_nn(g, val(*b), s));
                acc(*b, &|s| gemm_tn(g, val(*a), s));
            }
            Op::Add(a, b) => {
                acc(*a, &|s| s.add_assign(g).expect("shape"));
                acc(*b, &|s| s.add_assign(g).expect("shape"));
            }
            Op::AddRow(a, row) => {
                acc(*a, &|s| s.add_assign(g).expect("shape"));
                acc(*row, &|s| {
                    for r in 0..g.rows() {
                        for (o, v) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::Scale(a, k) => {
                acc(*a, &|s| {
                    for (o, v) in s.data_mut().iter_mut().zip(g.data()) {
                        *o += k * v;
                    }
                });
            }
            Op::Relu(a) => {
                acc(*a, &|s| {
                    for ((o, v), x) in s.data_mut().iter_mut().zip(g.data()).zip(val(*a).data()) {
                        if *x > 0.0 {
                            *o += v;
                        }
                    }
                });
            }
            Op::MulConst(a, c) => {
                acc(*a, &|s| {
                    for ((o, v), m) in s.data_mut().iter_mut().zip(g.data()).zip(c.data()) {
                        *o += v * m;
                    }
                });
            }
            Op::Softmax(a) => {
                let y = val(i);
                acc(*a, &|s| {
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in s.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o += p * (q - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma);
                acc(*x, &|s| {
                    let d = xhat.cols() as f64;
                    for r in 0..xhat.rows() {
                        let dxhat: Vec<f64> =
                            g.row(r).iter().zip(gam.data()).map(|(a, b)| a * b).collect();
                        let sum: f64 = dxhat.iter().sum();
                        let dot: f64 = dxhat.iter().zip(xhat.row(r)).map(|(a, b)| a * b).sum();
                        let k = inv_std[r] / d;
                        for ((o, dh), h) in s.row_mut(r).iter_mut().zip(&dxhat).zip(xhat.row(r)) {
                            *o += k * (d * dh - sum - h * dot);
                        }
                    }
                });
                acc(*gamma, &|s| {
                    for r in 0..g.rows() {
                        for ((o, a), h) in s.data_mut().iter_mut().zip(g.row(r)).zip(xhat.row(r)) {
                            *o += a * h;
                        }
                    }
                });
                acc(*beta, &|s| {
                    for r in 0..g.rows() {
                        for (o, a) in s.data_mut().iter_mut().zip(g.row(r)) {
                            *o += a;
                        }
                    }
                });
            }
            Op::Gather { table, indices } => {
                acc(*table, &|s| {
                    for (r, &t) in indices.iter().enumerate() {
                        for (o, v) in s.row_mut(t).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::SliceCols { src, start } => {
                acc(*src, &|s| {
                    for r in 0..g.rows() {
                        let dst = &mut s.row_mut(r)[*start..*start + g.cols()];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, &|s| {
                        for r in 0..g.rows() {
                            for (o, v) in s.row_mut(r).iter_mut().zip(&g.row(r)[offset..offset + w]) {
                                *o += v;
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                scale,
            } => {
                let k = g.data()[0] * scale;
                acc(*logits, &|s| {
                    for (r, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            for (c, (o, p)) in s.row_mut(r).iter_mut().zip(probs.row(r)).enumerate() {
                                let onehot = if c == t { 1.0 } else { 0.0 };
                                *o += k * (p - onehot);
                            }
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let k = g.data()[0];
                acc(*a, &|s| s.data_mut().iter_mut().for_each(|o| *o += k));
            }
        }
    }
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Matrix>>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient for a node; `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        assert_eq!(id.tape, self.tape, "node belongs to a different tape");
        self.grads[id.index].as_ref()
    }

    /// Gradient for a node, zero-filled when the loss does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Matrix {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }

    /// Node indices in the order the sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
