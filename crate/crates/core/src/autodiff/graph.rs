//! Lazily evaluated computation graph with reverse-mode gradients.
//!
//! Nodes are appended in construction order, so every node only refers to
//! nodes with smaller ids and the node list is already a topological order.
//! [`Graph::forward`] evaluates the prefix of the list up to a root and
//! [`Graph::backward`] walks it in reverse.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Added to masked attention logits before the softmax.
pub const MASK_SENTINEL: f64 = -1e30;

/// Variance floor used by layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Gelu => {
                let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                0.5 * x * (1.0 + t)
            }
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative at `x`, given `y = apply(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let u = GELU_K * (x + GELU_C * x * x * x);
                let t = u.tanh();
                let du = GELU_K * (1.0 + 3.0 * GELU_C * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Op {
    Input,
    Parameter(ParamId),
    MatMul(NodeId, NodeId),
    /// Elementwise sum; the right operand may broadcast as a row, a column
    /// or a scalar.
    Add(NodeId, NodeId),
    /// Elementwise product with the same broadcasting rules as `Add`.
    Mul(NodeId, NodeId),
    Activation(NodeId, Activation),
    /// Row-wise normalization to zero mean and unit variance (no affine).
    LayerNorm(NodeId),
    /// Row-wise softmax. With `causal`, entry `(i, j)` is masked when
    /// `j > i + cols - rows`.
    MaskedSoftmax { input: NodeId, causal: bool },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { input: NodeId, start: usize, len: usize },
    SliceCols { input: NodeId, start: usize, len: usize },
    Transpose(NodeId),
    MeanSquaredError { prediction: NodeId, target: NodeId },
    SoftmaxCrossEntropy { logits: NodeId, labels: Vec<usize> },
    ScalarScale(NodeId, f64),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Parameter(_) => "parameter",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Activation(..) => "activation",
            Op::LayerNorm(_) => "layer-norm",
            Op::MaskedSoftmax { .. } => "masked-softmax",
            Op::ConcatRows(_) => "concat-rows",
            Op::ConcatCols(_) => "concat-cols",
            Op::SliceRows { .. } => "slice-rows",
            Op::SliceCols { .. } => "slice-cols",
            Op::Transpose(_) => "transpose",
            Op::MeanSquaredError { .. } => "mean-squared-error",
            Op::SoftmaxCrossEntropy { .. } => "softmax-cross-entropy",
            Op::ScalarScale(..) => "scalar-scale",
        }
    }

    fn is_leaf(&self) -> bool {
        matches!(self, Op::Input | Op::Parameter(_))
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Matrix>,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Matrix>,
    nodes: Option<Vec<Option<Matrix>>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Matrix> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    /// Gradient of a non-parameter node; only present when retained.
    pub fn node(&self, id: NodeId) -> Option<&Matrix> {
        self.nodes.as_ref()?.get(id.0)?.as_ref()
    }

    /// Adds `scale * other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (id, g) in &other.params {
            match self.params.get_mut(id) {
                Some(acc) => {
                    for (a, b) in acc.values_mut().iter_mut().zip(g.values()) {
                        *a += scale * b;
                    }
                }
                None => {
                    self.params.insert(*id, g.scale(scale));
                }
            }
        }
    }

    pub fn zero(&mut self) {
        for g in self.params.values_mut() {
            g.fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Matrix::is_finite)
    }

    #[cfg(test)]
    pub(crate) fn insert_param(&mut self, id: ParamId, g: Matrix) {
        self.params.insert(id, g);
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
    forwarded_to: Option<usize>,
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

    fn push(&mut self, op: Op, value: Option<Matrix>) -> NodeId {
        self.forwarded_to = None;
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Matrix) -> NodeId {
        self.push(Op::Input, Some(value))
    }

    /// Node holding a copy of a stored parameter; repeated calls with the
    /// same id return the same node so gradients accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let n = self.push(Op::Parameter(id), Some(store.get(id).clone()));
        self.param_nodes.insert(id, n);
        n
    }

    pub fn param_named(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        Ok(self.param(store, store.id(name)?))
    }

    /// Re-copies every parameter node from the store.
    pub fn refresh_params(&mut self, store: &ParamStore) {
        for (&id, &n) in &self.param_nodes {
            self.nodes[n.0].value = Some(store.get(id).clone());
        }
        self.forwarded_to = None;
    }

    pub fn parameter_nodes(&self) -> Vec<(ParamId, NodeId)> {
        let mut v: Vec<_> = self.param_nodes.iter().map(|(p, n)| (*p, *n)).collect();
        v.sort();
        v
    }

    pub fn op(&self, node: NodeId) -> &Op {
        &self.nodes[node.0].op
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b), None)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b), None)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b), None)
    }

    pub fn activation(&mut self, a: NodeId, f: Activation) -> NodeId {
        self.push(Op::Activation(a, f), None)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Relu)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Gelu)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.activation(a, Activation::Tanh)
    }

    pub fn layer_norm(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LayerNorm(a), None)
    }

    pub fn masked_softmax(&mut self, input: NodeId, causal: bool) -> NodeId {
        self.push(Op::MaskedSoftmax { input, causal }, None)
    }

    pub fn concat_rows(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatRows(parts), None)
    }

    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        self.push(Op::ConcatCols(parts), None)
    }

    pub fn slice_rows(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceRows { input, start, len }, None)
    }

    pub fn slice_cols(&mut self, input: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::SliceCols { input, start, len }, None)
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Transpose(a), None)
    }

    pub fn mse(&mut self, prediction: NodeId, target: NodeId) -> NodeId {
        self.push(Op::MeanSquaredError { prediction, target }, None)
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: Vec<usize>) -> NodeId {
        self.push(Op::SoftmaxCrossEntropy { logits, labels }, None)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::ScalarScale(a, s), None)
    }

    /// Replaces the value of an input or parameter node.
    pub fn set_value(&mut self, node: NodeId, value: Matrix) -> Result<()> {
        let n = &mut self.nodes[node.0];
        if !n.op.is_leaf() {
            return Err(Error::InvalidArgument(format!(
                "node {} is a {} node, only leaves can be assigned",
                node.0,
                n.op.name()
            )));
        }
        n.value = Some(value);
        self.forwarded_to = None;
        Ok(())
    }

    pub fn value(&self, node: NodeId) -> Option<&Matrix> {
        self.nodes.get(node.0)?.value.as_ref()
    }

    /// Evaluates every node up to and including `root`.
    pub fn forward(&mut self, root: NodeId) -> Result<&Matrix> {
        for i in 0..=root.0 {
            if self.nodes[i].op.is_leaf() {
                if self.nodes[i].value.is_none() {
                    return Err(Error::NotForwarded(i));
                }
                continue;
            }
            let v = eval_node(&self.nodes[..i], i, &self.nodes[i].op)?;
            self.nodes[i].value = Some(v);
        }
        self.forwarded_to = Some(root.0);
        Ok(self.nodes[root.0].value.as_ref().expect("just computed"))
    }

    /// Reverse pass from a scalar root; only parameter gradients are kept.
    pub fn backward(&mut self, root: NodeId) -> Result<Gradients> {
        self.backward_impl(root, false)
    }

    /// Reverse pass that also keeps the gradient of every node.
    pub fn backward_retain(&mut self, root: NodeId) -> Result<Gradients> {
        self.backward_impl(root, true)
    }

    fn backward_impl(&mut self, root: NodeId, retain: bool) -> Result<Gradients> {
        match self.forwarded_to {
            Some(r) if r >= root.0 => {}
            _ => return Err(Error::NotForwarded(root.0)),
        }
        let root_val = self.value(root).ok_or(Error::NotForwarded(root.0))?;
        if root_val.shape() != (1, 1) {
            return Err(Error::NonScalarRoot {
                node: root.0,
                shape: root_val.shape(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::default();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let val = |id: NodeId| nodes[id.0].value.as_ref().expect("forwarded");
            match &nodes[i].op {
                Op::Input => {}
                Op::Parameter(pid) => {
                    out.params.insert(*pid, g.clone());
                }
                Op::MatMul(a, b) => {
                    accum(&mut grads, *a, g.matmul_t(val(*b)));
                    accum(&mut grads, *b, val(*a).t_matmul(&g));
                }
                Op::Add(a, b) => {
                    let bshape = val(*b).shape();
                    accum(&mut grads, *b, reduce_to(&g, bshape));
                    accum(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let av = val(*a);
                    let bv = val(*b);
                    let mut ga = g.clone();
                    let mut gb_full = g.clone();
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            let gv = g.get(r, c);
                            ga.set(r, c, gv * bv.values()[bidx(bv.shape(), r, c)]);
                            gb_full.set(r, c, gv * av.get(r, c));
                        }
                    }
                    accum(&mut grads, *b, reduce_to(&gb_full, bv.shape()));
                    accum(&mut grads, *a, ga);
                }
                Op::Activation(a, f) => {
                    let x = val(*a);
                    let y = nodes[i].value.as_ref().expect("forwarded");
                    let mut ga = g.clone();
                    for ((gv, &xv), &yv) in ga.values_mut().iter_mut().zip(x.values()).zip(y.values()) {
                        *gv *= f.derivative(xv, yv);
                    }
                    accum(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let x = val(*a);
                    let y = nodes[i].value.as_ref().expect("forwarded");
                    accum(&mut grads, *a, layer_norm_backward(x, y, &g));
                }
                Op::MaskedSoftmax { input, .. } => {
                    let y = nodes[i].value.as_ref().expect("forwarded");
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accum(&mut grads, *input, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = val(*p).rows();
                        accum(&mut grads, *p, g.slice_rows(start, rows));
                        start += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let cols = val(*p).cols();
                        accum(&mut grads, *p, g.slice_cols(start, cols));
                        start += cols;
                    }
                }
                Op::SliceRows { input, start, len } => {
                    let (rows, cols) = val(*input).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..*len {
                        ga.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, *input, ga);
                }
                Op::SliceCols { input, start, len } => {
                    let (rows, cols) = val(*input).shape();
                    let mut ga = Matrix::zeros(rows, cols);
                    for r in 0..rows {
                        ga.row_mut(r)[*start..start + len].copy_from_slice(g.row(r));
                    }
                    accum(&mut grads, *input, ga);
                }
                Op::Transpose(a) => accum(&mut grads, *a, g.transpose()),
                Op::MeanSquaredError { prediction, target } => {
                    let p = val(*prediction);
                    let t = val(*target);
                    let s = g.values()[0] * 2.0 / p.len() as f64;
                    let gp = Matrix::from_vec(
                        p.rows(),
                        p.cols(),
                        p.values().iter().zip(t.values()).map(|(a, b)| s * (a - b)).collect(),
                    )?;
                    accum(&mut grads, *target, gp.scale(-1.0));
                    accum(&mut grads, *prediction, gp);
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    let z = val(*logits);
                    let s = g.values()[0] / z.rows() as f64;
                    let mut gz = softmax_rows(z, false);
                    for (r, &y) in labels.iter().enumerate() {
                        let v = gz.get(r, y);
                        gz.set(r, y, v - 1.0);
                    }
                    accum(&mut grads, *logits, gz.scale(s));
                }
                Op::ScalarScale(a, s) => accum(&mut grads, *a, g.scale(*s)),
            }
            if retain {
                grads[i] = Some(g);
            }
        }
        for &pid in self.param_nodes.keys() {
            out.params
                .entry(pid)
                .or_insert_with(|| {
                    let v = self.nodes[self.param_nodes[&pid].0].value.as_ref().expect("leaf");
                    Matrix::zeros(v.rows(), v.cols())
                });
        }
        if retain {
            out.nodes = Some(grads);
        }
        Ok(out)
    }
}

fn accum(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[inline]
fn bidx(bshape: (usize, usize), r: usize, c: usize) -> usize {
    match bshape {
        (1, 1) => 0,
        (1, _) => c,
        (_, 1) => r,
        (_, cols) => r * cols + c,
    }
}

fn broadcast_ok(a: (usize, usize), b: (usize, usize)) -> bool {
    b == a || b == (1, 1) || b == (1, a.1) || b == (a.0, 1)
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: &Matrix, shape: (usize, usize)) -> Matrix {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Matrix::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            out.values_mut()[bidx(shape, r, c)] += g.get(r, c);
        }
    }
    out
}

fn softmax_rows(x: &Matrix, causal: bool) -> Matrix {
    let (rows, cols) = x.shape();
    let offset = cols as isize - rows as isize;
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for (j, (o, &v)) in or.iter_mut().zip(xr).enumerate() {
            let masked = causal && (j as isize) > r as isize + offset;
            *o = if masked { v + MASK_SENTINEL } else { v };
        }
        let m = or.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for o in or.iter_mut() {
            *o = (*o - m).exp();
            sum += *o;
        }
        for o in or.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Row-wise `(x - mean) / sqrt(max(var, eps))`.
pub(crate) fn layer_norm_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..x.rows() {
        layer_norm_row(out.row_mut(r));
    }
    out
}

#[inline]
pub(crate) fn layer_norm_row(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
    for v in row.iter_mut() {
        *v = (*v - mean) * inv;
    }
}

fn layer_norm_backward(x: &Matrix, y: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let n = x.cols() as f64;
    for r in 0..x.rows() {
        let xr = x.row(r);
        let mean = xr.iter().sum::<f64>() / n;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
        let yr = y.row(r);
        let gr = g.row(r);
        let g_mean = gr.iter().sum::<f64>() / n;
        // below the variance floor the scale is constant, so no y-term
        let gy_mean = if var > LAYER_NORM_EPS {
            gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n
        } else {
            0.0
        };
        for ((o, &gv), &yv) in out.row_mut(r).iter_mut().zip(gr).zip(yr) {
            *o = inv * (gv - g_mean - yv * gy_mean);
        }
    }
    out
}

fn eval_node(prev: &[Node], at: usize, op: &Op) -> Result<Matrix> {
    let val = |id: NodeId| -> Result<&Matrix> {
        prev[id.0].value.as_ref().ok_or(Error::NotForwarded(id.0))
    };
    let mismatch = |op: &'static str, a: NodeId, am: &Matrix, b: NodeId, bm: &Matrix| Error::ShapeMismatch {
        op,
        node: at,
        lhs: a.0,
        lhs_shape: am.shape(),
        rhs: b.0,
        rhs_shape: bm.shape(),
    };
    let out = match op {
        Op::Input | Op::Parameter(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (am, bm) = (val(*a)?, val(*b)?);
            if am.cols() != bm.rows() {
                return Err(mismatch("matmul", *a, am, *b, bm));
            }
            am.matmul(bm)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (am, bm) = (val(*a)?, val(*b)?);
            let is_add = matches!(op, Op::Add(..));
            if !broadcast_ok(am.shape(), bm.shape()) {
                return Err(mismatch(if is_add { "add" } else { "mul" }, *a, am, *b, bm));
            }
            let mut out = am.clone();
            for r in 0..am.rows() {
                for c in 0..am.cols() {
                    let bv = bm.values()[bidx(bm.shape(), r, c)];
                    let o = &mut out.values_mut()[r * am.cols() + c];
                    if is_add {
                        *o += bv;
                    } else {
                        *o *= bv;
                    }
                }
            }
            out
        }
        Op::Activation(a, f) => val(*a)?.map(|x| f.apply(x)),
        Op::LayerNorm(a) => layer_norm_rows(val(*a)?),
        Op::MaskedSoftmax { input, causal } => {
            let x = val(*input)?;
            if *causal && x.rows() > x.cols() {
                return Err(mismatch("masked-softmax", *input, x, *input, x));
            }
            softmax_rows(x, *causal)
        }
        Op::ConcatRows(parts) | Op::ConcatCols(parts) => {
            let by_rows = matches!(op, Op::ConcatRows(_));
            let first = *parts.first().ok_or(Error::Empty("concat parts"))?;
            let fm = val(first)?;
            let mut values = Vec::new();
            let (mut rows, mut cols) = fm.shape();
            if by_rows {
                rows = 0;
                for p in parts {
                    let m = val(*p)?;
                    if m.cols() != fm.cols() {
                        return Err(mismatch("concat-rows", first, fm, *p, m));
                    }
                    rows += m.rows();
                    values.extend_from_slice(m.values());
                }
            } else {
                cols = 0;
                for p in parts {
                    let m = val(*p)?;
                    if m.rows() != fm.rows() {
                        return Err(mismatch("concat-cols", first, fm, *p, m));
                    }
                    cols += m.cols();
                }
                for r in 0..rows {
                    for p in parts {
                        values.extend_from_slice(val(*p)?.row(r));
                    }
                }
            }
            Matrix::from_vec(rows, cols, values)?
        }
        Op::SliceRows { input, start, len } => {
            let m = val(*input)?;
            if *len == 0 || start + len > m.rows() {
                return Err(mismatch("slice-rows", *input, m, *input, m));
            }
            m.slice_rows(*start, *len)
        }
        Op::SliceCols { input, start, len } => {
            let m = val(*input)?;
            if *len == 0 || start + len > m.cols() {
                return Err(mismatch("slice-cols", *input, m, *input, m));
            }
            m.slice_cols(*start, *len)
        }
        Op::Transpose(a) => val(*a)?.transpose(),
        Op::MeanSquaredError { prediction, target } => {
            let (p, t) = (val(*prediction)?, val(*target)?);
            if p.shape() != t.shape() {
                return Err(mismatch("mean-squared-error", *prediction, p, *target, t));
            }
            let sse: f64 = p.values().iter().zip(t.values()).map(|(a, b)| (a - b) * (a - b)).sum();
            Matrix::scalar(sse / p.len() as f64)
        }
        Op::SoftmaxCrossEntropy { logits, labels } => {
            let z = val(*logits)?;
            if labels.len() != z.rows() || labels.iter().any(|&y| y >= z.cols()) {
                return Err(Error::LengthMismatch {
                    what: "cross-entropy labels",
                    expected: z.rows(),
                    actual: labels.len(),
                });
            }
            let mut total = 0.0;
            for (r, &y) in labels.iter().enumerate() {
                let row = z.row(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                total += lse - row[y];
            }
            Matrix::scalar(total / z.rows() as f64)
        }
        Op::ScalarScale(a, s) => val(*a)?.scale(*s),
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let mut g = Graph::new();
        let x = g.input(Matrix::scalar(0.0));
        let y = g.sigmoid(x);
        assert_eq!(g.forward(y).unwrap().values(), &[0.5]);
        let grads = g.backward_retain(y).unwrap();
        assert_eq!(grads.node(x).unwrap().values(), &[0.25]);
    }

    #[test]
    fn mse_gradient_vanishes_at_target() {
        let mut store = ParamStore::new();
        let w = store.insert("x", Matrix::scalar(3.0));
        let mut g = Graph::new();
        let x = g.param(&store, w);
        let t = g.input(Matrix::scalar(3.0));
        let loss = g.mse(x, t);
        g.forward(loss).unwrap();
        assert_eq!(g.backward(loss).unwrap().param(w).unwrap().values(), &[0.0]);
    }

    #[test]
    fn constant_row_normalizes_to_zero() {
        let mut g = Graph::new();
        let x = g.input(Matrix::row_vector(vec![2.5; 6]));
        let y = g.layer_norm(x);
        assert!(g.forward(y).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_error_names_both_nodes() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 3));
        let b = g.input(Matrix::zeros(2, 3));
        let c = g.matmul(a, b);
        match g.forward(c) {
            Err(Error::ShapeMismatch { lhs, rhs, lhs_shape, rhs_shape, .. }) => {
                assert_eq!((lhs, rhs), (0, 1));
                assert_eq!((lhs_shape, rhs_shape), ((2, 3), (2, 3)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn backward_requires_forward_and_scalar_root() {
        let mut g = Graph::new();
        let a = g.input(Matrix::zeros(2, 2));
        let s = g.scale(a, 2.0);
        assert!(matches!(g.backward(s), Err(Error::NotForwarded(_))));
        g.forward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::NonScalarRoot { .. })));
    }

    #[test]
    fn causal_softmax_zeroes_future_positions() {
        let mut g = Graph::new();
        let x = g.input(Matrix::from_vec(3, 3, vec![0.1, 5.0, -2.0, 1.0, 0.3, 9.0, 0.2, 0.4, 0.6]).unwrap());
        let y = g.masked_softmax(x, true);
        let p = g.forward(y).unwrap().clone();
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(0, 2), 0.0);
        assert_eq!(p.get(1, 2), 0.0);
        assert_eq!(p.get(0, 0), 1.0);
        for r in 0..3 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_parameter_gets_exact_zero_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", Matrix::row_vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let _ = g.param(&store, w);
        let c = g.input(Matrix::scalar(4.0));
        let loss = g.scale(c, 3.0);
        g.forward(loss).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.param(w).unwrap().values(), &[0.0, 0.0]);
    }
}
