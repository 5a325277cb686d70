//! Reverse-mode differentiation over a linear tape.
//!
//! Every primitive appends one node holding its value and parent ids, so the
//! node vector is topologically ordered by construction. `backward` walks it
//! once in reverse.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Powf(usize, f64),
    Sum(usize),
    ColSums(usize),
    RowSums(usize),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    PickCols(usize, Rc<Vec<usize>>),
    GatherRows(usize, Rc<Vec<usize>>),
    EdgeAggregate { x: usize, w: usize, src: Rc<Vec<usize>>, dst: Rc<Vec<usize>> },
    ConcatCols(usize, usize),
    SliceCols(usize, usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records primitives for one forward pass. Not `Sync`; use one tape per thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients of a scalar output. Leaves created without `requires_grad` are absent.
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but panics for leaves that were not tracked.
    pub fn wrt(&self, v: Var<'_>) -> &Tensor {
        self.get(v).expect("gradient requested for an untracked variable")
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable or differentiable input.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, true)
    }

    /// A constant input; never appears in the gradient map.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    pub fn leaf(&self, t: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: t, op: Op::Leaf, needs_grad: requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push(&self, name: &'static str, value: Tensor, op: Op, parents: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node { value, op, needs_grad });
        Ok(Var { tape: self, id: nodes.len() - 1 })
    }

    fn val(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Reverse sweep from a 1×1 output.
    pub fn backward(&self, out: Var<'_>) -> Result<Grads> {
        let nodes = self.nodes.borrow();
        if nodes[out.id].value.shape() != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("output must be scalar, got {:?}", nodes[out.id].value.shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[out.id] = Some(Tensor::scalar(1.0));
        for i in (0..=out.id).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !nodes[i].needs_grad {
                continue;
            }
            let node = &nodes[i];
            let acc = |p: usize, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !nodes[p].needs_grad {
                    return;
                }
                match &mut grads[p] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            let v = |p: usize| &nodes[p].value;
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].needs_grad {
                        acc(*a, g.matmul(&v(*b).transpose())?, &mut grads);
                    }
                    if nodes[*b].needs_grad {
                        acc(*b, v(*a).transpose().matmul(&g)?, &mut grads);
                    }
                }
                Op::Transpose(a) => acc(*a, g.transpose(), &mut grads),
                Op::Add(a, b) => {
                    acc(*a, reduce_to(&g, v(*a).shape()), &mut grads);
                    acc(*b, reduce_to(&g, v(*b).shape()), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, reduce_to(&g, v(*a).shape()), &mut grads);
                    acc(*b, reduce_to(&g.map(|x| -x), v(*b).shape()), &mut grads);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (v(*a), v(*b));
                    if nodes[*a].needs_grad {
                        let ga = broadcast_zip(&g, vb, |g, b| g * b);
                        acc(*a, reduce_to(&ga, va.shape()), &mut grads);
                    }
                    if nodes[*b].needs_grad {
                        let gb = broadcast_zip(&g, va, |g, a| g * a);
                        acc(*b, reduce_to(&gb, vb.shape()), &mut grads);
                    }
                }
                Op::Div(a, b) => {
                    let (va, vb) = (v(*a), v(*b));
                    if nodes[*a].needs_grad {
                        let ga = broadcast_zip(&g, vb, |g, b| g / b);
                        acc(*a, reduce_to(&ga, va.shape()), &mut grads);
                    }
                    if nodes[*b].needs_grad {
                        // d(a/b)/db = -out/b
                        let t = broadcast_zip(&g, &node.value, |g, o| -g * o);
                        let gb = broadcast_zip(&t, vb, |t, b| t / b);
                        acc(*b, reduce_to(&gb, vb.shape()), &mut grads);
                    }
                }
                Op::Scale(a, s) => acc(*a, g.map(|x| x * s), &mut grads),
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::Relu(a) => {
                    let ga = g.zip_with(v(*a), |g, x| if x > 0.0 { g } else { 0.0 })?;
                    acc(*a, ga, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_with(&node.value, |g, y| g * y * (1.0 - y))?;
                    acc(*a, ga, &mut grads);
                }
                Op::Tanh(a) => {
                    let ga = g.zip_with(&node.value, |g, y| g * (1.0 - y * y))?;
                    acc(*a, ga, &mut grads);
                }
                Op::Exp(a) => acc(*a, g.zip_with(&node.value, |g, y| g * y)?, &mut grads),
                Op::Log(a) => acc(*a, g.zip_with(v(*a), |g, x| g / x)?, &mut grads),
                Op::Powf(a, p) => {
                    let ga = g.zip_with(v(*a), |g, x| g * p * x.powf(p - 1.0))?;
                    acc(*a, ga, &mut grads);
                }
                Op::Sum(a) => {
                    let [r, c] = v(*a).shape();
                    acc(*a, Tensor::full(r, c, g.get(0, 0)), &mut grads);
                }
                Op::ColSums(a) => {
                    let [r, c] = v(*a).shape();
                    acc(*a, Tensor::from_fn(r, c, |_, j| g.get(0, j)), &mut grads);
                }
                Op::RowSums(a) => {
                    let [r, c] = v(*a).shape();
                    acc(*a, Tensor::from_fn(r, c, |i, _| g.get(i, 0)), &mut grads);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in ga.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                        let gsum: f64 = gr.iter().sum();
                        for (o, (yv, gv)) in ga.row_slice_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = gv - yv.exp() * gsum;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::PickCols(a, idx) => {
                    let [r, c] = v(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (row, &j) in idx.iter().enumerate() {
                        ga.set(row, j, g.get(row, 0));
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::GatherRows(a, idx) => {
                    let [r, c] = v(*a).shape();
                    let mut ga = Tensor::zeros(r, c);
                    for (k, &src) in idx.iter().enumerate() {
                        for (o, gv) in ga.row_slice_mut(src).iter_mut().zip(g.row_slice(k)) {
                            *o += gv;
                        }
                    }
                    acc(*a, ga, &mut grads);
                }
                Op::EdgeAggregate { x, w, src, dst } => {
                    let (vx, vw) = (v(*x), v(*w));
                    if nodes[*x].needs_grad {
                        let mut gx = Tensor::zeros(vx.rows(), vx.cols());
                        for e in 0..src.len() {
                            let we = vw.data()[e];
                            for (o, gv) in gx.row_slice_mut(src[e]).iter_mut().zip(g.row_slice(dst[e])) {
                                *o += we * gv;
                            }
                        }
                        acc(*x, gx, &mut grads);
                    }
                    if nodes[*w].needs_grad {
                        let gw: Vec<f64> = (0..src.len())
                            .map(|e| {
                                g.row_slice(dst[e]).iter().zip(vx.row_slice(src[e])).map(|(a, b)| a * b).sum()
                            })
                            .collect();
                        acc(*w, Tensor::new(vw.rows(), vw.cols(), gw)?, &mut grads);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = v(*a).cols();
                    let r = g.rows();
                    acc(*a, Tensor::from_fn(r, ca, |i, j| g.get(i, j)), &mut grads);
                    let cb = v(*b).cols();
                    acc(*b, Tensor::from_fn(r, cb, |i, j| g.get(i, ca + j)), &mut grads);
                }
                Op::SliceCols(a, start) => {
                    let [r, c] = v(*a).shape();
                    let w = g.cols();
                    let ga = Tensor::from_fn(r, c, |i, j| {
                        if j >= *start && j < start + w {
                            g.get(i, j - start)
                        } else {
                            0.0
                        }
                    });
                    acc(*a, ga, &mut grads);
                }
            }
        }
        // Tracked leaves that the output does not depend on get explicit zeros.
        for (i, n) in nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.needs_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(n.value.rows(), n.value.cols()));
            } else if !matches!(n.op, Op::Leaf) || !n.needs_grad {
                grads[i] = None;
            }
        }
        Ok(Grads { grads })
    }
}

fn bshape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::Shape { op, detail: format!("cannot broadcast {a:?} with {b:?}") }),
    }
}

fn bget(t: &Tensor, i: usize, j: usize) -> f64 {
    let r = if t.rows() == 1 { 0 } else { i };
    let c = if t.cols() == 1 { 0 } else { j };
    t.get(r, c)
}

/// Elementwise op where `b` broadcasts against `a`'s full shape.
fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.rows(), a.cols(), |i, j| f(a.get(i, j), bget(b, i, j)))
}

fn reduce_to(g: &Tensor, shape: [usize; 2]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape[0], shape[1]);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let r = if shape[0] == 1 { 0 } else { i };
            let c = if shape[1] == 1 { 0 } else { j };
            let v = out.get(r, c) + g.get(i, j);
            out.set(r, c, v);
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.val(self.id).clone()
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.val(self.id).shape()
    }

    /// Value of a 1×1 variable.
    pub fn item(&self) -> f64 {
        self.tape.val(self.id).get(0, 0)
    }

    fn unary(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'t>> {
        let out = self.tape.val(self.id).map(f);
        self.tape.push(name, out, op, &[self.id])
    }

    fn binary(self, other: Var<'t>, name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.tape.val(self.id), self.tape.val(other.id));
            let [r, c] = bshape(name, a.shape(), b.shape())?;
            Tensor::from_fn(r, c, |i, j| f(bget(&a, i, j), bget(&b, i, j)))
        };
        self.tape.push(name, out, op, &[self.id, other.id])
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.tape.val(self.id).matmul(&self.tape.val(other.id))?;
        self.tape.push("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn t(self) -> Result<Var<'t>> {
        let out = self.tape.val(self.id).transpose();
        self.tape.push("transpose", out, Op::Transpose(self.id), &[self.id])
    }

    /// Broadcasting add; either operand may have unit rows or columns.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn scale(self, s: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(self, s: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar(self.id), |x| x + s)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh(self.id), f64::tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), f64::exp)
    }

    pub fn ln(self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), f64::ln)
    }

    pub fn powf(self, p: f64) -> Result<Var<'t>> {
        self.unary("powf", Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.tape.val(self.id).sum();
        self.tape.push("sum", Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.tape.val(self.id).len() as f64;
        self.sum()?.scale(1.0 / n)
    }

    /// Column sums as a 1×cols row.
    pub fn col_sums(self) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            let mut s = vec![0.0; a.cols()];
            for i in 0..a.rows() {
                for (o, v) in s.iter_mut().zip(a.row_slice(i)) {
                    *o += v;
                }
            }
            Tensor::row(s)
        };
        self.tape.push("col_sums", out, Op::ColSums(self.id), &[self.id])
    }

    /// Row sums as a rows×1 column.
    pub fn row_sums(self) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            Tensor::col((0..a.rows()).map(|i| a.row_slice(i).iter().sum()).collect())
        };
        self.tape.push("row_sums", out, Op::RowSums(self.id), &[self.id])
    }

    pub fn row_means(self) -> Result<Var<'t>> {
        let c = self.shape()[1] as f64;
        self.row_sums()?.scale(1.0 / c)
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            let mut out = a.clone();
            for r in 0..a.rows() {
                let row = out.row_slice_mut(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
            out
        };
        self.tape.push("softmax_rows", out, Op::SoftmaxRows(self.id), &[self.id])
    }

    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            let mut out = a.clone();
            for r in 0..a.rows() {
                let row = out.row_slice_mut(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v -= lse;
                }
            }
            out
        };
        self.tape.push("log_softmax_rows", out, Op::LogSoftmaxRows(self.id), &[self.id])
    }

    /// `out[i] = self[i, idx[i]]`, as a column.
    pub fn pick_cols(self, idx: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            if idx.len() != a.rows() || idx.iter().any(|&j| j >= a.cols()) {
                return Err(Error::Shape { op: "pick_cols", detail: "index out of range".into() });
            }
            Tensor::col(idx.iter().enumerate().map(|(i, &j)| a.get(i, j)).collect())
        };
        self.tape.push("pick_cols", out, Op::PickCols(self.id, Rc::new(idx.to_vec())), &[self.id])
    }

    pub fn gather_rows(self, idx: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            if idx.iter().any(|&i| i >= a.rows()) {
                return Err(Error::Shape { op: "gather_rows", detail: "row index out of range".into() });
            }
            let mut data = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx {
                data.extend_from_slice(a.row_slice(i));
            }
            Tensor::new(idx.len(), a.cols(), data)?
        };
        self.tape.push("gather_rows", out, Op::GatherRows(self.id, Rc::new(idx.to_vec())), &[self.id])
    }

    /// Sparse message passing: `out[dst[e]] += w[e] * self[src[e]]`.
    /// `w` is an E×1 column; `n_out` is the number of output rows.
    pub fn edge_aggregate(self, w: Var<'t>, src: &Rc<Vec<usize>>, dst: &Rc<Vec<usize>>, n_out: usize) -> Result<Var<'t>> {
        let out = {
            let (x, wv) = (self.tape.val(self.id), self.tape.val(w.id));
            if src.len() != dst.len() || wv.len() != src.len() {
                return Err(Error::Shape { op: "edge_aggregate", detail: "edge list lengths differ".into() });
            }
            if src.iter().any(|&s| s >= x.rows()) || dst.iter().any(|&d| d >= n_out) {
                return Err(Error::Shape { op: "edge_aggregate", detail: "edge endpoint out of range".into() });
            }
            let mut out = Tensor::zeros(n_out, x.cols());
            for e in 0..src.len() {
                let we = wv.data()[e];
                let xs = x.row_slice(src[e]);
                for (o, v) in out.row_slice_mut(dst[e]).iter_mut().zip(xs) {
                    *o += we * v;
                }
            }
            out
        };
        let op = Op::EdgeAggregate { x: self.id, w: w.id, src: Rc::clone(src), dst: Rc::clone(dst) };
        self.tape.push("edge_aggregate", out, op, &[self.id, w.id])
    }

    pub fn concat_cols(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.tape.val(self.id), self.tape.val(other.id));
            if a.rows() != b.rows() {
                return Err(Error::Shape { op: "concat_cols", detail: format!("{:?} vs {:?}", a.shape(), b.shape()) });
            }
            let ca = a.cols();
            Tensor::from_fn(a.rows(), ca + b.cols(), |i, j| if j < ca { a.get(i, j) } else { b.get(i, j - ca) })
        };
        self.tape.push("concat_cols", out, Op::ConcatCols(self.id, other.id), &[self.id, other.id])
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.tape.val(self.id);
            if start >= end || end > a.cols() {
                return Err(Error::Shape { op: "slice_cols", detail: format!("{start}..{end} of {}", a.cols()) });
            }
            Tensor::from_fn(a.rows(), end - start, |i, j| a.get(i, start + j))
        };
        self.tape.push("slice_cols", out, Op::SliceCols(self.id, start), &[self.id])
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
