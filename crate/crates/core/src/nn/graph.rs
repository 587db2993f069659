//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records one forward computation. Parameters are borrowed from
//! one or more [`ParamStore`]s registered with the graph; after
//! [`Graph::backward`] their gradients come back in a [`Gradients`] value
//! shaped like the registered stores.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::tensor::{log_sum_exp, softmax, Matrix};

/// Named parameter tensors of one model component.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamStore {
    pub fn push(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        self.names.push(name.into());
        self.tensors.push(value);
        self.tensors.len() - 1
    }

    pub fn get(&self, index: usize) -> &Matrix {
        &self.tensors[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Matrix {
        &mut self.tensors[index]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Matrix] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data().len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::all_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Index of a store registered with a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoreId(usize);

#[derive(Debug, Clone, Copy)]
struct ParamRef {
    store: usize,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamRef),
    Gather(ParamRef, Vec<usize>),
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Tanh(NodeId),
    Scale(NodeId, f64),
    SoftmaxRows(NodeId),
    MeanRows(NodeId, usize, usize),
    Row(NodeId, usize),
    ConcatRows(Vec<NodeId>),
    CrossEntropy(NodeId, usize),
    MeanScalars(Vec<NodeId>),
}

struct Node<'a> {
    value: Cow<'a, Matrix>,
    op: Op,
}

pub struct Graph<'a> {
    stores: Vec<&'a ParamStore>,
    nodes: Vec<Node<'a>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph {
            stores: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn register(&mut self, store: &'a ParamStore) -> StoreId {
        self.stores.push(store);
        StoreId(self.stores.len() - 1)
    }

    fn push(&mut self, value: Cow<'a, Matrix>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Matrix, op: Op) -> NodeId {
        self.push(Cow::Owned(value), op)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.shape(), (1, 1), "not a scalar node");
        v.get(0, 0)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.owned(value, Op::Input)
    }

    pub fn param(&mut self, store: StoreId, index: usize) -> NodeId {
        let value = self.stores[store.0].get(index);
        self.push(
            Cow::Borrowed(value),
            Op::Param(ParamRef {
                store: store.0,
                index,
            }),
        )
    }

    /// Rows `ids` of a parameter table, as an `ids.len() x cols` matrix.
    pub fn gather(&mut self, store: StoreId, index: usize, ids: &[usize]) -> NodeId {
        let table = self.stores[store.0].get(index);
        let mut out = Matrix::zeros(ids.len(), table.cols());
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.owned(
            out,
            Op::Gather(
                ParamRef {
                    store: store.0,
                    index,
                },
                ids.to_vec(),
            ),
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.owned(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_t(self.value(b));
        self.owned(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.owned(v, Op::Add(a, b))
    }

    /// Adds the `1 x c` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let bias = self.value(b);
        assert_eq!(bias.rows(), 1, "add_row expects a row vector");
        assert_eq!(bias.cols(), self.value(a).cols(), "add_row width mismatch");
        let mut v = self.value(a).clone();
        for r in 0..v.rows() {
            for (x, b) in v.row_mut(r).iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        self.owned(v, Op::AddRow(a, b))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.owned(v, Op::Tanh(a))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).map(|x| x * factor);
        self.owned(v, Op::Scale(a, factor))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let src = self.value(a);
        let mut v = Matrix::zeros(src.rows(), src.cols());
        for r in 0..src.rows() {
            v.row_mut(r).copy_from_slice(&softmax(src.row(r)));
        }
        self.owned(v, Op::SoftmaxRows(a))
    }

    /// Mean of rows `start..end` as a `1 x c` row.
    pub fn mean_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        assert!(start < end, "mean over an empty row range");
        let src = self.value(a);
        let n = (end - start) as f64;
        let mut v = vec![0.0; src.cols()];
        for r in start..end {
            for (acc, x) in v.iter_mut().zip(src.row(r)) {
                *acc += x;
            }
        }
        v.iter_mut().for_each(|x| *x /= n);
        self.owned(Matrix::row_vector(v), Op::MeanRows(a, start, end))
    }

    pub fn row(&mut self, a: NodeId, r: usize) -> NodeId {
        let v = Matrix::row_vector(self.value(a).row(r).to_vec());
        self.owned(v, Op::Row(a, r))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols(), cols, "concat_rows width mismatch");
            data.extend_from_slice(m.data());
            rows += m.rows();
        }
        self.owned(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// `-log softmax(logits)[gold]` for a `1 x k` logits row.
    pub fn cross_entropy(&mut self, logits: NodeId, gold: usize) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows(), 1, "cross_entropy expects a row of logits");
        let loss = log_sum_exp(l.data()) - l.data()[gold];
        self.owned(Matrix::row_vector(vec![loss]), Op::CrossEntropy(logits, gold))
    }

    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "mean of nothing");
        let sum: f64 = parts.iter().map(|&p| self.scalar(p)).sum();
        let v = sum / parts.len() as f64;
        self.owned(Matrix::row_vector(vec![v]), Op::MeanScalars(parts.to_vec()))
    }

    /// Back-propagates from the scalar `root`.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::row_vector(vec![1.0]));
        let mut out = Gradients::shaped_like(&self.stores);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => out.accumulate(p.store, p.index, &g),
                Op::Gather(p, ids) => {
                    let target = out.slot(p.store, p.index);
                    for (r, &row) in ids.iter().enumerate() {
                        for (t, x) in target.row_mut(row).iter_mut().zip(g.row(r)) {
                            *t += x;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    // c = a b^T: dA = g b, dB = g^T a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = vec![0.0; g.cols()];
                    for r in 0..g.rows() {
                        for (acc, x) in gb.iter_mut().zip(g.row(r)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *b, Matrix::row_vector(gb));
                    accumulate(&mut grads, *a, g);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let mut ga = g;
                    for (gx, yx) in ga.data_mut().iter_mut().zip(y.data()) {
                        *gx *= 1.0 - yx * yx;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, factor) => {
                    let f = *factor;
                    accumulate(&mut grads, *a, g.map(|x| x * f));
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for r in 0..g.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let inner: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for ((o, p), q) in ga.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = p * (q - inner);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::MeanRows(a, start, end) => {
                    let src = self.value(*a);
                    let n = (end - start) as f64;
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    for r in *start..*end {
                        for (o, x) in ga.row_mut(r).iter_mut().zip(g.data()) {
                            *o = x / n;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Row(a, r) => {
                    let src = self.value(*a);
                    let mut ga = Matrix::zeros(src.rows(), src.cols());
                    ga.row_mut(*r).copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        let cols = g.cols();
                        let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                        accumulate(&mut grads, p, Matrix::from_vec(rows, cols, slice));
                        offset += rows;
                    }
                }
                Op::CrossEntropy(logits, gold) => {
                    let upstream = g.get(0, 0);
                    let mut p = softmax(self.value(*logits).data());
                    p[*gold] -= 1.0;
                    p.iter_mut().for_each(|x| *x *= upstream);
                    accumulate(&mut grads, *logits, Matrix::row_vector(p));
                }
                Op::MeanScalars(parts) => {
                    let share = g.get(0, 0) / parts.len() as f64;
                    for &p in parts {
                        accumulate(&mut grads, p, Matrix::row_vector(vec![share]));
                    }
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Parameter gradients, one optional dense tensor per registered parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    stores: Vec<Vec<Option<Matrix>>>,
    shapes: Vec<Vec<(usize, usize)>>,
}

impl Gradients {
    fn shaped_like(stores: &[&ParamStore]) -> Self {
        Gradients {
            stores: stores.iter().map(|s| vec![None; s.len()]).collect(),
            shapes: stores
                .iter()
                .map(|s| s.tensors().iter().map(Matrix::shape).collect())
                .collect(),
        }
    }

    fn slot(&mut self, store: usize, index: usize) -> &mut Matrix {
        let (r, c) = self.shapes[store][index];
        self.stores[store][index].get_or_insert_with(|| Matrix::zeros(r, c))
    }

    fn accumulate(&mut self, store: usize, index: usize, g: &Matrix) {
        self.slot(store, index).add_assign(g);
    }

    /// Gradient of parameter `index` in `store`; `None` if it did not
    /// participate in the computation.
    pub fn get(&self, store: StoreId, index: usize) -> Option<&Matrix> {
        self.stores[store.0][index].as_ref()
    }

    pub fn store(&self, store: StoreId) -> &[Option<Matrix>] {
        &self.stores[store.0]
    }

    pub fn all_finite(&self) -> bool {
        self.stores
            .iter()
            .flatten()
            .flatten()
            .all(Matrix::all_finite)
    }
}
