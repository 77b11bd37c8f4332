//! Tape-based reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar output walks the tape in reverse and
//! returns gradients for every parameter leaf and every input created with
//! [`Graph::input`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{gemm_into, Matrix};

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Softplus(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    LayerNormRows(usize, Vec<f64>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    GroupMax(usize, Vec<usize>),
    Sum(usize),
    Abs(usize),
    SmoothL1(usize),
    BceLogits(usize, Matrix),
    Pick(usize, Vec<(usize, usize)>),
    CosineDistance(usize, usize),
    Dropout(usize, Matrix),
}

struct Node {
    value: Rc<Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Recording context for one forward/backward pass.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<usize, usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, 'p> {
    graph: &'g Graph<'p>,
    id: usize,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    params: Vec<Option<Matrix>>,
    inputs: HashMap<usize, Matrix>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    /// Gradient of a [`Graph::input`] leaf (zeros are omitted).
    pub fn input(&self, v: Var<'_, '_>) -> Option<&Matrix> {
        self.inputs.get(&v.id)
    }

    /// Dense per-parameter gradients in store order; absent entries are zero.
    pub fn into_dense(self, store: &ParamStore) -> Vec<Matrix> {
        self.params
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| {
                let (r, c) = store.value(ParamId::from_index(i)).shape();
                Matrix::zeros(r, c)
            }))
            .collect()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: RefCell::new(Vec::with_capacity(256)),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    fn push(&self, value: Matrix, op: Op, requires_grad: bool) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        nodes.len() - 1
    }

    fn var(&self, id: usize) -> Var<'_, 'p> {
        Var { graph: self, id }
    }

    fn value_of(&self, id: usize) -> Rc<Matrix> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    pub fn constant(&self, m: Matrix) -> Var<'_, 'p> {
        let id = self.push(m, Op::Constant, false);
        self.var(id)
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&self, m: Matrix) -> Var<'_, 'p> {
        let id = self.push(m, Op::Input, true);
        self.var(id)
    }

    /// The parameter `id` as a leaf; repeated calls share one node.
    pub fn param(&self, id: ParamId) -> Var<'_, 'p> {
        if let Some(&node) = self.params.borrow().get(&id.index()) {
            return self.var(node);
        }
        let value = self.store.value(id).clone();
        let node = self.push(value, Op::Param(id.index()), true);
        self.params.borrow_mut().insert(id.index(), node);
        self.var(node)
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Back-propagates from the scalar `out`.
    pub fn backward(&self, out: Var<'_, 'p>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[out.id].value.shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        grads[out.id] = Some(Matrix::scalar(1.0));
        let mut result = Gradients {
            params: vec![None; self.store.len()],
            inputs: HashMap::new(),
        };

        for id in (0..=out.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut acc = |target: usize, delta: Matrix| {
                if !nodes[target].requires_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            let val = |i: usize| -> &Matrix { &nodes[i].value };
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    result.inputs.insert(id, g);
                }
                Op::Param(p) => {
                    result.params[*p] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if nodes[a].requires_grad {
                        let mut da = Matrix::zeros(val(a).rows(), val(a).cols());
                        gemm_into(&g, false, val(b), true, &mut da, 0.0);
                        acc(a, da);
                    }
                    if nodes[b].requires_grad {
                        let mut db = Matrix::zeros(val(b).rows(), val(b).cols());
                        gemm_into(val(a), true, &g, false, &mut db, 0.0);
                        acc(b, db);
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.map(|x| -x));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(val(*b), |x, y| x * y);
                    let db = g.zip_map(val(*a), |x, y| x * y);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::AddRow(a, r) => {
                    acc(*r, column_sums(&g));
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let rv = val(*r);
                    let av = val(*a);
                    let mut dr = Matrix::zeros(1, g.cols());
                    let mut da = g.clone();
                    for i in 0..g.rows() {
                        for c in 0..g.cols() {
                            let gi = g.get(i, c);
                            dr.data_mut()[c] += gi * av.get(i, c);
                            da.set(i, c, gi * rv.get(0, c));
                        }
                    }
                    acc(*r, dr);
                    acc(*a, da);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(*a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let da = g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(*a, da);
                }
                Op::Softplus(a) => {
                    let da = g.zip_map(val(*a), |x, y| x * sigmoid(y));
                    acc(*a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(p, q)| p * q).sum();
                        for (c, out) in da.row_mut(i).iter_mut().enumerate() {
                            *out = y.get(i, c) * (g.get(i, c) - dot);
                        }
                    }
                    acc(*a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let gs: f64 = g.row(i).iter().sum();
                        for (c, out) in da.row_mut(i).iter_mut().enumerate() {
                            *out = g.get(i, c) - y.get(i, c).exp() * gs;
                        }
                    }
                    acc(*a, da);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let y = &node.value;
                    let n = y.cols() as f64;
                    let mut da = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let gsum: f64 = g.row(i).iter().sum();
                        let gy: f64 = g.row(i).iter().zip(y.row(i)).map(|(p, q)| p * q).sum();
                        for (c, out) in da.row_mut(i).iter_mut().enumerate() {
                            *out = inv_std[i] / n * (n * g.get(i, c) - gsum - y.get(i, c) * gy);
                        }
                    }
                    acc(*a, da);
                }
                Op::SliceRows(a, start) => {
                    let av = val(*a);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        da.row_mut(start + i).copy_from_slice(g.row(i));
                    }
                    acc(*a, da);
                }
                Op::SliceCols(a, start) => {
                    let av = val(*a);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(*a, da);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let r = val(p).rows();
                        let idx: Vec<usize> = (offset..offset + r).collect();
                        acc(p, g.select_rows(&idx));
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let c = val(p).cols();
                        let mut dp = Matrix::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            dp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        acc(p, dp);
                        offset += c;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let av = val(*a);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for (i, &src) in idx.iter().enumerate() {
                        for (d, s) in da.row_mut(src).iter_mut().zip(g.row(i)) {
                            *d += s;
                        }
                    }
                    acc(*a, da);
                }
                Op::GroupMax(a, argmax) => {
                    let av = val(*a);
                    let cols = av.cols();
                    let mut da = Matrix::zeros(av.rows(), cols);
                    for (flat, &src_row) in argmax.iter().enumerate() {
                        let (gi, c) = (flat / cols, flat % cols);
                        let cur = da.get(src_row, c);
                        da.set(src_row, c, cur + g.get(gi, c));
                    }
                    acc(*a, da);
                }
                Op::Sum(a) => {
                    let av = val(*a);
                    acc(*a, Matrix::filled(av.rows(), av.cols(), g.item()));
                }
                Op::Abs(a) => {
                    let da = g.zip_map(val(*a), |x, y| x * sign(y));
                    acc(*a, da);
                }
                Op::SmoothL1(a) => {
                    let da = g.zip_map(val(*a), |x, y| {
                        if y.abs() < 1.0 {
                            x * y
                        } else {
                            x * sign(y)
                        }
                    });
                    acc(*a, da);
                }
                Op::BceLogits(a, t) => {
                    let mut da = g.zip_map(val(*a), |x, y| x * sigmoid(y));
                    for (d, (gi, ti)) in da.data_mut().iter_mut().zip(g.data().iter().zip(t.data())) {
                        *d -= gi * ti;
                    }
                    acc(*a, da);
                }
                Op::Pick(a, picks) => {
                    let av = val(*a);
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    for (i, &(r, c)) in picks.iter().enumerate() {
                        let cur = da.get(r, c);
                        da.set(r, c, cur + g.get(i, 0));
                    }
                    acc(*a, da);
                }
                Op::CosineDistance(a, b) => {
                    let (u, v) = (val(*a), val(*b));
                    let (nu, nv) = (u.norm(), v.norm());
                    let dot: f64 = u.data().iter().zip(v.data()).map(|(x, y)| x * y).sum();
                    let gs = g.item();
                    let du = u.zip_map(v, |ui, vi| -gs * (vi / (nu * nv) - dot * ui / (nu.powi(3) * nv)));
                    let dv = v.zip_map(u, |vi, ui| -gs * (ui / (nu * nv) - dot * vi / (nv.powi(3) * nu)));
                    acc(*a, du);
                    acc(*b, dv);
                }
                Op::Dropout(a, mask) => acc(*a, g.zip_map(mask, |x, m| x * m)),
            }
        }
        result
    }
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, x) in out.data_mut().iter_mut().zip(g.row(i)) {
            *o += x;
        }
    }
    out
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

impl<'g, 'p> Var<'g, 'p> {
    pub fn value(&self) -> Rc<Matrix> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value().shape()
    }

    pub fn graph(&self) -> &'g Graph<'p> {
        self.graph
    }

    fn unary(self, value: Matrix, op: Op) -> Self {
        let rg = self.graph.rg(self.id);
        let id = self.graph.push(value, op, rg);
        self.graph.var(id)
    }

    fn binary(self, other: Self, value: Matrix, op: Op) -> Self {
        let rg = self.graph.rg(self.id) || self.graph.rg(other.id);
        let id = self.graph.push(value, op, rg);
        self.graph.var(id)
    }

    pub fn matmul(self, other: Self) -> Self {
        let v = self.value().matmul(&other.value());
        self.binary(other, v, Op::MatMul(self.id, other.id))
    }

    pub fn transpose(self) -> Self {
        let v = self.value().transpose();
        self.unary(v, Op::Transpose(self.id))
    }

    pub fn add(self, other: Self) -> Self {
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.binary(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Self) -> Self {
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.binary(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Self) -> Self {
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.binary(other, v, Op::Mul(self.id, other.id))
    }

    /// Adds the `1×c` row `row` to every row.
    pub fn add_row(self, row: Self) -> Self {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.rows(), 1);
        assert_eq!(r.cols(), a.cols(), "add_row width");
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.binary(row, v, Op::AddRow(self.id, row.id))
    }

    /// Multiplies every row elementwise by the `1×c` row `row`.
    pub fn mul_row(self, row: Self) -> Self {
        let a = self.value();
        let r = row.value();
        assert_eq!(r.cols(), a.cols(), "mul_row width");
        let mut v = (*a).clone();
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x *= b;
            }
        }
        self.binary(row, v, Op::MulRow(self.id, row.id))
    }

    pub fn scale(self, s: f64) -> Self {
        let v = self.value().map(|x| x * s);
        self.unary(v, Op::Scale(self.id, s))
    }

    pub fn relu(self) -> Self {
        let v = self.value().map(|x| x.max(0.0));
        self.unary(v, Op::Relu(self.id))
    }

    pub fn softplus(self) -> Self {
        let v = self.value().map(softplus);
        self.unary(v, Op::Softplus(self.id))
    }

    pub fn softmax_rows(self) -> Self {
        let a = self.value();
        let mut v = Matrix::zeros(a.rows(), a.cols());
        for i in 0..a.rows() {
            for (o, l) in v.row_mut(i).iter_mut().zip(log_softmax_row(a.row(i))) {
                *o = l.exp();
            }
        }
        self.unary(v, Op::SoftmaxRows(self.id))
    }

    pub fn log_softmax_rows(self) -> Self {
        let a = self.value();
        let mut v = Matrix::zeros(a.rows(), a.cols());
        for i in 0..a.rows() {
            v.row_mut(i).copy_from_slice(&log_softmax_row(a.row(i)));
        }
        self.unary(v, Op::LogSoftmaxRows(self.id))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(self, eps: f64) -> Self {
        let a = self.value();
        let n = a.cols() as f64;
        let mut v = Matrix::zeros(a.rows(), a.cols());
        let mut inv_std = Vec::with_capacity(a.rows());
        for i in 0..a.rows() {
            let row = a.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for (o, x) in v.row_mut(i).iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        self.unary(v, Op::LayerNormRows(self.id, inv_std))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Self {
        let idx: Vec<usize> = (start..start + len).collect();
        let v = self.value().select_rows(&idx);
        self.unary(v, Op::SliceRows(self.id, start))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Self {
        let a = self.value();
        let mut v = Matrix::zeros(a.rows(), len);
        for i in 0..a.rows() {
            v.row_mut(i).copy_from_slice(&a.row(i)[start..start + len]);
        }
        self.unary(v, Op::SliceCols(self.id, start))
    }

    pub fn row(self, i: usize) -> Self {
        self.slice_rows(i, 1)
    }

    pub fn gather_rows(self, idx: &[usize]) -> Self {
        let v = self.value().select_rows(idx);
        self.unary(v, Op::GatherRows(self.id, idx.to_vec()))
    }

    /// Max over consecutive groups of `group` rows: `(g·group)×c → g×c`.
    pub fn group_max(self, group: usize) -> Self {
        let a = self.value();
        assert!(group > 0 && a.rows().is_multiple_of(group), "group_max rows");
        let groups = a.rows() / group;
        let cols = a.cols();
        let mut v = Matrix::zeros(groups, cols);
        let mut argmax = vec![0usize; groups * cols];
        for gi in 0..groups {
            for c in 0..cols {
                let mut best = gi * group;
                for r in gi * group + 1..(gi + 1) * group {
                    if a.get(r, c) > a.get(best, c) {
                        best = r;
                    }
                }
                v.set(gi, c, a.get(best, c));
                argmax[gi * cols + c] = best;
            }
        }
        self.unary(v, Op::GroupMax(self.id, argmax))
    }

    pub fn sum(self) -> Self {
        let v = Matrix::scalar(self.value().sum());
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Self {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn abs(self) -> Self {
        let v = self.value().map(f64::abs);
        self.unary(v, Op::Abs(self.id))
    }

    /// Elementwise Huber loss with unit threshold.
    pub fn smooth_l1(self) -> Self {
        let v = self.value().map(|x| {
            if x.abs() < 1.0 {
                0.5 * x * x
            } else {
                x.abs() - 0.5
            }
        });
        self.unary(v, Op::SmoothL1(self.id))
    }

    /// Elementwise binary cross-entropy of logits against `targets`.
    pub fn bce_with_logits(self, targets: &Matrix) -> Self {
        let v = self
            .value()
            .zip_map(targets, |x, t| x.max(0.0) - x * t + (-x.abs()).exp().ln_1p());
        self.unary(v, Op::BceLogits(self.id, targets.clone()))
    }

    /// Gathers single entries into an `n×1` column.
    pub fn pick(self, picks: &[(usize, usize)]) -> Self {
        let a = self.value();
        let v = Matrix::from_vec(picks.len(), 1, picks.iter().map(|&(r, c)| a.get(r, c)).collect());
        self.unary(v, Op::Pick(self.id, picks.to_vec()))
    }

    /// `1 − u·v / (‖u‖‖v‖)` as a `1×1` value. Both operands must be nonzero.
    pub fn cosine_distance(self, other: Self) -> Self {
        let (u, w) = (self.value(), other.value());
        let dot: f64 = u.data().iter().zip(w.data()).map(|(x, y)| x * y).sum();
        let v = Matrix::scalar(1.0 - dot / (u.norm() * w.norm()));
        self.binary(other, v, Op::CosineDistance(self.id, other.id))
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn dropout_mask(self, mask: Matrix) -> Self {
        let v = self.value().zip_map(&mask, |x, m| x * m);
        self.unary(v, Op::Dropout(self.id, mask))
    }

    pub fn concat_rows(parts: &[Self]) -> Self {
        let g = parts[0].graph;
        let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let cols = values[0].cols();
        let rows = values.iter().map(|v| v.rows()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for v in &values {
            assert_eq!(v.cols(), cols, "concat_rows width");
            data.extend_from_slice(v.data());
        }
        let rg = parts.iter().any(|p| g.rg(p.id));
        let id = g.push(
            Matrix::from_vec(rows, cols, data),
            Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
            rg,
        );
        g.var(id)
    }

    pub fn concat_cols(parts: &[Self]) -> Self {
        let g = parts[0].graph;
        let values: Vec<Rc<Matrix>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        let cols: usize = values.iter().map(|v| v.cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for v in &values {
                assert_eq!(v.rows(), rows, "concat_cols height");
                out.row_mut(i)[off..off + v.cols()].copy_from_slice(v.row(i));
                off += v.cols();
            }
        }
        let rg = parts.iter().any(|p| g.rg(p.id));
        let id = g.push(out, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg);
        g.var(id)
    }
}
