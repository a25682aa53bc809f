//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Node ids grow
//! monotonically, so reverse id order is a valid reverse topological order and
//! [`Graph::backward`] is a single sweep.

use std::cell::RefCell;
use std::rc::Rc;

use super::scalar::Scalar;
use super::tensor::{dot, matmul_at_into, matmul_bt_into, Tensor};
use super::NumericsError;

type Result<T> = std::result::Result<T, NumericsError>;

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols(usize, usize, usize),
    SliceRows(usize, usize, usize),
    Softmax(usize),
    MaskedSoftmax(usize),
    MaskedLogSoftmax(usize, Rc<Vec<bool>>),
    RowMean(usize),
    RowVar(usize),
    MaskedRowMean(usize, Rc<Vec<bool>>),
    RowStandardize(usize, S),
    Sum(usize),
    Gather(usize, Rc<Vec<usize>>),
    Reshape(usize),
    Transpose(usize),
    PairTanhScore {
        frames: usize,
        words: usize,
        weight: usize,
        batch: usize,
    },
    GroupedWeightedSum {
        weights: usize,
        values: usize,
        batch: usize,
    },
}

impl<S> Op<S> {
    fn any_input(&self, mut f: impl FnMut(usize) -> bool) -> bool {
        use Op::*;
        match self {
            Leaf => false,
            MatMul(a, b) | Add(a, b) | AddRow(a, b) | Sub(a, b) | Mul(a, b) => f(*a) || f(*b),
            Scale(a, _)
            | Tanh(a)
            | Sigmoid(a)
            | Exp(a)
            | Log(a)
            | Softmax(a)
            | RowMean(a)
            | RowVar(a)
            | Sum(a)
            | Reshape(a)
            | Transpose(a)
            | RowStandardize(a, _) => f(*a),
            SliceCols(a, _, _) | SliceRows(a, _, _) => f(*a),
            MaskedSoftmax(a) | MaskedLogSoftmax(a, _) | MaskedRowMean(a, _) | Gather(a, _) => f(*a),
            ConcatCols(xs) | ConcatRows(xs) => xs.iter().any(|&i| f(i)),
            PairTanhScore {
                frames, words, weight, ..
            } => f(*frames) || f(*words) || f(*weight),
            GroupedWeightedSum { weights, values, .. } => f(*weights) || f(*values),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            Add(..) => "add",
            AddRow(..) => "add_row",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Scale(..) => "scale",
            Tanh(..) => "tanh",
            Sigmoid(..) => "sigmoid",
            Exp(..) => "exp",
            Log(..) => "log",
            ConcatCols(..) => "concat_cols",
            ConcatRows(..) => "concat_rows",
            SliceCols(..) => "slice_cols",
            SliceRows(..) => "slice_rows",
            Softmax(..) => "softmax",
            MaskedSoftmax(..) => "masked_softmax",
            MaskedLogSoftmax(..) => "masked_log_softmax",
            RowMean(..) => "row_mean",
            RowVar(..) => "row_var",
            MaskedRowMean(..) => "masked_row_mean",
            RowStandardize(..) => "row_standardize",
            Sum(..) => "sum",
            Gather(..) => "gather",
            Reshape(..) => "reshape",
            Transpose(..) => "transpose",
            PairTanhScore { .. } => "pair_tanh_score",
            GroupedWeightedSum { .. } => "grouped_weighted_sum",
        }
    }
}

struct Node<S> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    needs_grad: bool,
}

/// Recording of a computation. Confined to one thread.
pub struct Graph<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, S> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S> Copy for Var<'_, S> {}

impl<S> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

/// Gradients of a scalar loss with respect to every trainable leaf.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient for a leaf. Leaves the loss never touched get zeros.
    pub fn wrt(&self, var: Var<'_, S>) -> Tensor<S> {
        match self.grads.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(var.value().shape()),
        }
    }

    pub fn take(&mut self, var: Var<'_, S>) -> Tensor<S> {
        match self.grads.get_mut(var.id).and_then(|g| g.take()) {
            Some(g) => g,
            None => Tensor::zeros(var.value().shape()),
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_leaf(value, false)
    }

    fn push_leaf(&self, value: Tensor<S>, needs_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<S>> {
        self.nodes.borrow()[id].value.clone()
    }

    fn push(&self, value: Tensor<S>, op: Op<S>) -> Result<Var<'_, S>> {
        if !value.all_finite() {
            return Err(NumericsError::NonFinite { op: op.name() });
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.any_input(|i| nodes[i].needs_grad);
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(NumericsError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), S::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<S: Scalar>(nodes: &[Node<S>], grads: &mut [Option<Tensor<S>>], id: usize, g: Tensor<S>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn tensor_like<S: Scalar>(like: &Tensor<S>, data: Vec<S>) -> Tensor<S> {
    Tensor::new(like.shape().to_vec(), data).expect("gradient shape mirrors its input")
}

fn backprop_node<S: Scalar>(nodes: &[Node<S>], node: &Node<S>, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
    let val = |id: usize| -> &Tensor<S> { &nodes[id].value };
    let y = &*node.value;
    let gd = g.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
            if nodes[*a].needs_grad {
                let mut ga = vec![S::zero(); n * k];
                matmul_bt_into(gd, bv.data(), &mut ga, n, k, m);
                accumulate(nodes, grads, *a, tensor_like(av, ga));
            }
            if nodes[*b].needs_grad {
                let mut gb = vec![S::zero(); k * m];
                matmul_at_into(av.data(), gd, &mut gb, n, k, m);
                accumulate(nodes, grads, *b, tensor_like(bv, gb));
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.clone());
        }
        Op::AddRow(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            if nodes[*b].needs_grad {
                let cols = g.cols();
                let mut gb = vec![S::zero(); cols];
                for r in 0..g.rows() {
                    for (o, &x) in gb.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                accumulate(nodes, grads, *b, tensor_like(val(*b), gb));
            }
        }
        Op::Sub(a, b) => {
            accumulate(nodes, grads, *a, g.clone());
            accumulate(nodes, grads, *b, g.map(|x| -x));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                let d = gd.iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, *a, tensor_like(av, d));
            }
            if nodes[*b].needs_grad {
                let d = gd.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                accumulate(nodes, grads, *b, tensor_like(bv, d));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, g.map(|x| x * *c)),
        Op::Tanh(a) => {
            let d = gd.iter().zip(y.data()).map(|(&g, &y)| g * (S::one() - y * y)).collect();
            accumulate(nodes, grads, *a, tensor_like(y, d));
        }
        Op::Sigmoid(a) => {
            let d = gd.iter().zip(y.data()).map(|(&g, &y)| g * y * (S::one() - y)).collect();
            accumulate(nodes, grads, *a, tensor_like(y, d));
        }
        Op::Exp(a) => {
            let d = gd.iter().zip(y.data()).map(|(&g, &y)| g * y).collect();
            accumulate(nodes, grads, *a, tensor_like(y, d));
        }
        Op::Log(a) => {
            let x = val(*a);
            let d = gd.iter().zip(x.data()).map(|(&g, &x)| g / x).collect();
            accumulate(nodes, grads, *a, tensor_like(x, d));
        }
        Op::ConcatCols(parts) => {
            let rows = g.rows();
            let total = g.cols();
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let w = pv.cols();
                if nodes[p].needs_grad {
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(nodes, grads, p, tensor_like(pv, d));
                }
                offset += w;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let pv = val(p);
                let n = pv.len();
                if nodes[p].needs_grad {
                    accumulate(nodes, grads, p, tensor_like(pv, gd[offset..offset + n].to_vec()));
                }
                offset += n;
            }
        }
        Op::SliceCols(a, start, end) => {
            let av = val(*a);
            let cols = av.cols();
            let w = end - start;
            let mut d = vec![S::zero(); av.len()];
            for r in 0..av.rows() {
                d[r * cols + start..r * cols + end].copy_from_slice(&gd[r * w..(r + 1) * w]);
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::SliceRows(a, start, end) => {
            let av = val(*a);
            let cols = av.cols();
            let mut d = vec![S::zero(); av.len()];
            d[start * cols..end * cols].copy_from_slice(gd);
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::Softmax(a) | Op::MaskedSoftmax(a) => {
            let cols = y.cols();
            let mut d = vec![S::zero(); y.len()];
            for r in 0..y.rows() {
                let yr = y.row(r);
                let gr = &gd[r * cols..(r + 1) * cols];
                let inner = dot(gr, yr);
                for j in 0..cols {
                    d[r * cols + j] = yr[j] * (gr[j] - inner);
                }
            }
            accumulate(nodes, grads, *a, tensor_like(y, d));
        }
        Op::MaskedLogSoftmax(a, mask) => {
            let cols = y.cols();
            let mut d = vec![S::zero(); y.len()];
            for r in 0..y.rows() {
                let base = r * cols;
                let mut gsum = S::zero();
                for j in 0..cols {
                    if mask[base + j] {
                        gsum += gd[base + j];
                    }
                }
                for j in 0..cols {
                    if mask[base + j] {
                        d[base + j] = gd[base + j] - y.data()[base + j].exp() * gsum;
                    }
                }
            }
            accumulate(nodes, grads, *a, tensor_like(y, d));
        }
        Op::RowMean(a) => {
            let av = val(*a);
            let cols = av.cols();
            let inv = S::one() / S::of(cols as f64);
            let mut d = vec![S::zero(); av.len()];
            for r in 0..av.rows() {
                d[r * cols..(r + 1) * cols].fill(gd[r] * inv);
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::RowVar(a) => {
            let av = val(*a);
            let cols = av.cols();
            let n = S::of(cols as f64);
            let two = S::of(2.0);
            let mut d = vec![S::zero(); av.len()];
            for r in 0..av.rows() {
                let row = av.row(r);
                let mean = row.iter().copied().sum::<S>() / n;
                for j in 0..cols {
                    d[r * cols + j] = gd[r] * two * (row[j] - mean) / n;
                }
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::MaskedRowMean(a, mask) => {
            let av = val(*a);
            let cols = av.cols();
            let mut d = vec![S::zero(); av.len()];
            for r in 0..av.rows() {
                let m = &mask[r * cols..(r + 1) * cols];
                let count = m.iter().filter(|&&v| v).count();
                if count == 0 {
                    continue;
                }
                let share = gd[r] / S::of(count as f64);
                for j in 0..cols {
                    if m[j] {
                        d[r * cols + j] = share;
                    }
                }
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::RowStandardize(a, eps) => {
            let av = val(*a);
            let cols = av.cols();
            let n = S::of(cols as f64);
            let mut d = vec![S::zero(); av.len()];
            for r in 0..av.rows() {
                let row = av.row(r);
                let gr = &gd[r * cols..(r + 1) * cols];
                let mean = row.iter().copied().sum::<S>() / n;
                let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
                let sd = var.sqrt();
                let denom = sd + *eps;
                let gmean = gr.iter().copied().sum::<S>() / n;
                // dL/d(denom) = -sum(g * c) / denom^2, d(denom)/dx_j = c_j / (n * sd)
                let gc = gr.iter().zip(row).map(|(&g, &x)| g * (x - mean)).sum::<S>();
                let coef = if sd > S::zero() {
                    -gc / (denom * denom) / (n * sd)
                } else {
                    S::zero()
                };
                for j in 0..cols {
                    let c = row[j] - mean;
                    d[r * cols + j] = (gr[j] - gmean) / denom + coef * c;
                }
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::Sum(a) => {
            let av = val(*a);
            accumulate(nodes, grads, *a, Tensor::full(av.shape(), gd[0]));
        }
        Op::Gather(a, idx) => {
            let av = val(*a);
            let mut d = vec![S::zero(); av.len()];
            for (k, &i) in idx.iter().enumerate() {
                d[i] += gd[k];
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::Reshape(a) => {
            let av = val(*a);
            accumulate(nodes, grads, *a, tensor_like(av, gd.to_vec()));
        }
        Op::Transpose(a) => {
            let av = val(*a);
            let (r, c) = (av.shape()[0], av.shape()[1]);
            let mut d = vec![S::zero(); av.len()];
            for i in 0..r {
                for j in 0..c {
                    d[i * c + j] = gd[j * r + i];
                }
            }
            accumulate(nodes, grads, *a, tensor_like(av, d));
        }
        Op::PairTanhScore {
            frames,
            words,
            weight,
            batch,
        } => {
            let (fv, wv, w) = (val(*frames), val(*words), val(*weight));
            let width = fv.cols();
            let m = y.cols();
            let mut gf = vec![S::zero(); fv.len()];
            let mut gwords = vec![S::zero(); wv.len()];
            let mut gw = vec![S::zero(); width];
            for r in 0..fv.rows() {
                let b = r % batch;
                let frow = fv.row(r);
                for j in 0..m {
                    let up = gd[r * m + j];
                    if up == S::zero() {
                        continue;
                    }
                    let wr = j * batch + b;
                    let wrow = wv.row(wr);
                    for k in 0..width {
                        let u = (frow[k] + wrow[k]).tanh();
                        gw[k] += up * u;
                        let s = up * w.data()[k] * (S::one() - u * u);
                        gf[r * width + k] += s;
                        gwords[wr * width + k] += s;
                    }
                }
            }
            accumulate(nodes, grads, *frames, tensor_like(fv, gf));
            accumulate(nodes, grads, *words, tensor_like(wv, gwords));
            accumulate(nodes, grads, *weight, tensor_like(w, gw));
        }
        Op::GroupedWeightedSum { weights, values, batch } => {
            let (av, vv) = (val(*weights), val(*values));
            let m = av.cols();
            let dim = vv.cols();
            let mut ga = vec![S::zero(); av.len()];
            let mut gv = vec![S::zero(); vv.len()];
            for r in 0..av.rows() {
                let b = r % batch;
                let gr = &gd[r * dim..(r + 1) * dim];
                for j in 0..m {
                    let vr = j * batch + b;
                    ga[r * m + j] = dot(gr, vv.row(vr));
                    let a = av.at(r, j);
                    if a != S::zero() {
                        for (o, &x) in gv[vr * dim..(vr + 1) * dim].iter_mut().zip(gr) {
                            *o += a * x;
                        }
                    }
                }
            }
            accumulate(nodes, grads, *weights, tensor_like(av, ga));
            accumulate(nodes, grads, *values, tensor_like(vv, gv));
        }
    }
}

fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn check_mask<S: Scalar>(op: &'static str, x: &Tensor<S>, mask: &[bool]) -> Result<()> {
    if mask.len() != x.len() {
        return Err(NumericsError::shape(op, x.shape(), &[mask.len()]));
    }
    Ok(())
}

fn require_2d<S: Scalar>(op: &'static str, x: &Tensor<S>) -> Result<(usize, usize)> {
    if x.shape().len() != 2 {
        return Err(NumericsError::shape(op, x.shape(), &[]));
    }
    Ok((x.shape()[0], x.shape()[1]))
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn unary(self, op: Op<S>, f: impl Fn(S) -> S) -> Result<Self> {
        let out = self.value().map(f);
        self.graph.push(out, op)
    }

    fn zip_with(self, other: Self, name: &'static str, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        same_shape(name, &a, &b)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        self.graph.push(Tensor::new(a.shape().to_vec(), data)?, op)
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let out = self.value().matmul(&other.value())?;
        self.graph.push(out, Op::MatMul(self.id, other.id))
    }

    /// Elementwise sum. A 1-D right operand whose length matches the last
    /// axis is broadcast over every leading row.
    pub fn add(self, other: Self) -> Result<Self> {
        let (a, b) = (self.value(), other.value());
        if a.shape() == b.shape() {
            return self.zip_with(other, "add", Op::Add(self.id, other.id), |x, y| x + y);
        }
        if b.shape().len() == 1 && b.len() == a.cols() {
            let mut out = (*a).clone();
            for r in 0..out.rows() {
                for (o, &x) in out.row_mut(r).iter_mut().zip(b.data()) {
                    *o += x;
                }
            }
            return self.graph.push(out, Op::AddRow(self.id, other.id));
        }
        Err(NumericsError::shape("add", a.shape(), b.shape()))
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.zip_with(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.zip_with(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    pub fn scale(self, c: S) -> Result<Self> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Result<Self> {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(self) -> Result<Self> {
        if let Some(&bad) = self.value().data().iter().find(|&&x| x <= S::zero()) {
            return Err(NumericsError::NonPositiveLog(bad.to_f64_lossy()));
        }
        self.unary(Op::Log(self.id), |x| x.ln())
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Self> {
        let a = self.value();
        if start > end || end > a.cols() {
            return Err(NumericsError::shape("slice_cols", a.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(a.rows() * w);
        for r in 0..a.rows() {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        let mut shape = a.shape().to_vec();
        *shape.last_mut().unwrap() = w;
        self.graph
            .push(Tensor::new(shape, data)?, Op::SliceCols(self.id, start, end))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Self> {
        let a = self.value();
        let (rows, cols) = require_2d("slice_rows", &a)?;
        if start > end || end > rows {
            return Err(NumericsError::shape("slice_rows", a.shape(), &[start, end]));
        }
        let data = a.data()[start * cols..end * cols].to_vec();
        self.graph.push(
            Tensor::new(vec![end - start, cols], data)?,
            Op::SliceRows(self.id, start, end),
        )
    }

    pub fn softmax_rows(self) -> Result<Self> {
        let a = self.value();
        let mut out = (*a).clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r), None);
        }
        self.graph.push(out, Op::Softmax(self.id))
    }

    /// Row softmax restricted to `mask == true`; masked entries are exactly 0.
    pub fn masked_softmax_rows(self, mask: &[bool]) -> Result<Self> {
        let a = self.value();
        check_mask("masked_softmax", &a, mask)?;
        let mut out = (*a).clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r), Some(&mask[r * cols..(r + 1) * cols]));
        }
        self.graph.push(out, Op::MaskedSoftmax(self.id))
    }

    /// Row log-softmax restricted to `mask == true`; masked entries are 0.
    pub fn masked_log_softmax_rows(self, mask: &[bool]) -> Result<Self> {
        let a = self.value();
        check_mask("masked_log_softmax", &a, mask)?;
        let mut out = (*a).clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            log_softmax_in_place(out.row_mut(r), &mask[r * cols..(r + 1) * cols]);
        }
        self.graph
            .push(out, Op::MaskedLogSoftmax(self.id, Rc::new(mask.to_vec())))
    }

    /// Mean of each row, shape `[rows, 1]`.
    pub fn row_mean(self) -> Result<Self> {
        let a = self.value();
        let n = S::of(a.cols() as f64);
        let data = (0..a.rows()).map(|r| a.row(r).iter().copied().sum::<S>() / n).collect();
        self.graph
            .push(Tensor::new(vec![a.rows(), 1], data)?, Op::RowMean(self.id))
    }

    /// Population variance of each row, shape `[rows, 1]`.
    pub fn row_var(self) -> Result<Self> {
        let a = self.value();
        let n = S::of(a.cols() as f64);
        let data = (0..a.rows())
            .map(|r| {
                let row = a.row(r);
                let mean = row.iter().copied().sum::<S>() / n;
                row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n
            })
            .collect();
        self.graph
            .push(Tensor::new(vec![a.rows(), 1], data)?, Op::RowVar(self.id))
    }

    /// Mean over the unmasked entries of each row; all-masked rows give 0.
    pub fn masked_row_mean(self, mask: &[bool]) -> Result<Self> {
        let a = self.value();
        check_mask("masked_row_mean", &a, mask)?;
        let cols = a.cols();
        let data = (0..a.rows())
            .map(|r| {
                let m = &mask[r * cols..(r + 1) * cols];
                let count = m.iter().filter(|&&v| v).count();
                if count == 0 {
                    return S::zero();
                }
                let s: S = a.row(r).iter().zip(m).filter(|(_, &v)| v).map(|(&x, _)| x).sum();
                s / S::of(count as f64)
            })
            .collect();
        self.graph.push(
            Tensor::new(vec![a.rows(), 1], data)?,
            Op::MaskedRowMean(self.id, Rc::new(mask.to_vec())),
        )
    }

    /// Per-row `(x - mean) / (population_std + eps)`.
    pub fn row_standardize(self, eps: S) -> Result<Self> {
        let a = self.value();
        let mut out = (*a).clone();
        let n = S::of(a.cols() as f64);
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let mean = row.iter().copied().sum::<S>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
            let denom = var.sqrt() + eps;
            for x in row.iter_mut() {
                *x = (*x - mean) / denom;
            }
        }
        self.graph.push(out, Op::RowStandardize(self.id, eps))
    }

    pub fn sum(self) -> Result<Self> {
        let s = self.value().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    /// Picks flat (row-major) positions into a 1-D tensor.
    pub fn gather(self, positions: &[usize]) -> Result<Self> {
        let a = self.value();
        if let Some(&bad) = positions.iter().find(|&&p| p >= a.len()) {
            return Err(NumericsError::shape("gather", a.shape(), &[bad]));
        }
        let data = positions.iter().map(|&p| a.data()[p]).collect();
        self.graph
            .push(Tensor::vector(data), Op::Gather(self.id, Rc::new(positions.to_vec())))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let out = (*self.value()).clone().reshaped(shape)?;
        self.graph.push(out, Op::Reshape(self.id))
    }

    pub fn transpose(self) -> Result<Self> {
        let a = self.value();
        let (r, c) = require_2d("transpose", &a)?;
        let mut data = vec![S::zero(); a.len()];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.at(i, j);
            }
        }
        self.graph.push(Tensor::new(vec![c, r], data)?, Op::Transpose(self.id))
    }

    /// Additive frame-by-word scores.
    ///
    /// `self` holds one row per (frame, batch item), time-major
    /// (`row = t * batch + b`); `words` holds `row = j * batch + b`. Output
    /// `[rows, words/batch]` with `out[t*batch+b, j] = Σ_k w_k tanh(self[t*batch+b, k] + words[j*batch+b, k])`.
    pub fn pair_tanh_score(self, words: Self, weight: Self, batch: usize) -> Result<Self> {
        let (f, wd, w) = (self.value(), words.value(), weight.value());
        let (rows, width) = require_2d("pair_tanh_score", &f)?;
        let (wrows, wwidth) = require_2d("pair_tanh_score", &wd)?;
        if batch == 0 || wwidth != width || rows % batch != 0 || wrows % batch != 0 || wrows == 0 {
            return Err(NumericsError::shape("pair_tanh_score", f.shape(), wd.shape()));
        }
        if w.len() != width {
            return Err(NumericsError::shape("pair_tanh_score", f.shape(), w.shape()));
        }
        let m = wrows / batch;
        let mut out = vec![S::zero(); rows * m];
        for r in 0..rows {
            let b = r % batch;
            let frow = f.row(r);
            for j in 0..m {
                let wrow = wd.row(j * batch + b);
                let mut acc = S::zero();
                for k in 0..width {
                    acc += w.data()[k] * (frow[k] + wrow[k]).tanh();
                }
                out[r * m + j] = acc;
            }
        }
        self.graph.push(
            Tensor::new(vec![rows, m], out)?,
            Op::PairTanhScore {
                frames: self.id,
                words: words.id,
                weight: weight.id,
                batch,
            },
        )
    }

    /// `out[t*batch+b] = Σ_j self[t*batch+b, j] · values[j*batch+b]`.
    pub fn grouped_weighted_sum(self, values: Self, batch: usize) -> Result<Self> {
        let (a, v) = (self.value(), values.value());
        let (rows, m) = require_2d("grouped_weighted_sum", &a)?;
        let (vrows, dim) = require_2d("grouped_weighted_sum", &v)?;
        if batch == 0 || rows % batch != 0 || vrows != m * batch {
            return Err(NumericsError::shape("grouped_weighted_sum", a.shape(), v.shape()));
        }
        let mut out = vec![S::zero(); rows * dim];
        for r in 0..rows {
            let b = r % batch;
            let orow = &mut out[r * dim..(r + 1) * dim];
            for j in 0..m {
                let wgt = a.at(r, j);
                if wgt == S::zero() {
                    continue;
                }
                for (o, &x) in orow.iter_mut().zip(v.row(j * batch + b)) {
                    *o += wgt * x;
                }
            }
        }
        self.graph.push(
            Tensor::new(vec![rows, dim], out)?,
            Op::GroupedWeightedSum {
                weights: self.id,
                values: values.id,
                batch,
            },
        )
    }
}

/// Concatenates 2-D tensors with equal row counts along the last axis.
pub fn concat_cols<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let first = parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let rows = values[0].rows();
    for v in &values {
        if v.shape().len() != 2 || v.rows() != rows {
            return Err(NumericsError::shape("concat_cols", values[0].shape(), v.shape()));
        }
    }
    let total: usize = values.iter().map(|v| v.cols()).sum();
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for v in &values {
            data.extend_from_slice(v.row(r));
        }
    }
    first.graph.push(
        Tensor::new(vec![rows, total], data)?,
        Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
    )
}

/// Stacks 2-D tensors with equal column counts along the first axis.
pub fn concat_rows<'g, S: Scalar>(parts: &[Var<'g, S>]) -> Result<Var<'g, S>> {
    let first = parts.first().ok_or(NumericsError::Empty("concat_rows"))?;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let cols = values[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for v in &values {
        if v.shape().len() != 2 || v.cols() != cols {
            return Err(NumericsError::shape("concat_rows", values[0].shape(), v.shape()));
        }
        rows += v.rows();
        data.extend_from_slice(v.data());
    }
    first.graph.push(
        Tensor::new(vec![rows, cols], data)?,
        Op::ConcatRows(parts.iter().map(|p| p.id).collect()),
    )
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Max-subtracted softmax over `row`, optionally restricted to a mask.
pub fn softmax_in_place<S: Scalar>(row: &mut [S], mask: Option<&[bool]>) {
    let keep = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = S::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if keep(j) && x > max {
            max = x;
        }
    }
    if max == S::neg_infinity() {
        row.fill(S::zero());
        return;
    }
    let mut total = S::zero();
    for (j, x) in row.iter_mut().enumerate() {
        if keep(j) {
            *x = (*x - max).exp();
            total += *x;
        } else {
            *x = S::zero();
        }
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

fn log_softmax_in_place<S: Scalar>(row: &mut [S], mask: &[bool]) {
    let mut max = S::neg_infinity();
    for (j, &x) in row.iter().enumerate() {
        if mask[j] && x > max {
            max = x;
        }
    }
    if max == S::neg_infinity() {
        row.fill(S::zero());
        return;
    }
    let mut total = S::zero();
    for (j, &x) in row.iter().enumerate() {
        if mask[j] {
            total += (x - max).exp();
        }
    }
    let log_total = total.ln();
    for (j, x) in row.iter_mut().enumerate() {
        *x = if mask[j] { *x - max - log_total } else { S::zero() };
    }
}
