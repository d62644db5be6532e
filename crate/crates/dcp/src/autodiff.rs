//! Minimal reverse-mode automatic differentiation over `f64` vectors.
//!
//! A [`Tape`] is a flat list of nodes in construction order; each node is a
//! vector-valued operation whose inputs precede it, so one forward sweep
//! evaluates the graph and one backward sweep accumulates adjoints. Ops are
//! fused at the block level (one node per per-bus or per-branch formula),
//! which keeps tape length proportional to the number of formulas rather
//! than the number of scalar entries.
//!
//! Supported ops are exactly what the completion and the trunk-and-heads
//! network need: affine maps, elementwise max(0, .), softplus, sigmoid,
//! sin, cos, atan2, sqrt, square, division, and reductions. The derivative
//! of max(0, x) uses subgradient 0 at x = 0; sqrt backward floors its
//! denominator at 1e-12.
//!
//! Tapes are plain owned data: clone one per worker for parallel use.
//! Re-running forward and backward on identical inputs is bitwise
//! deterministic.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

/// Denominator floor for the sqrt backward rule.
const SQRT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    /// Leaf whose value the caller sets before `forward`.
    Input,
    /// Leaf with a fixed value.
    Const,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    /// value * scalar
    Scale(NodeId, f64),
    /// value + scalar
    Offset(NodeId, f64),
    /// Elementwise product with a fixed coefficient vector.
    MulCoeff(Arc<Vec<f64>>, NodeId),
    /// Dense affine map: out = W x + b, W row-major (rows x cols).
    Affine {
        w: NodeId,
        x: NodeId,
        b: NodeId,
        rows: usize,
        cols: usize,
    },
    Max0(NodeId),
    Softplus(NodeId),
    Sigmoid(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Atan2(NodeId, NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    /// Scalar sum of all entries.
    Sum(NodeId),
    /// Scalar dot product.
    Dot(NodeId, NodeId),
    /// out[k] = src[idx[k]]
    Gather(NodeId, Arc<Vec<usize>>),
    /// out[idx[k]] += src[k], out has fixed length
    ScatterSum(NodeId, Arc<Vec<usize>>),
    /// [a, b] end to end
    Concat(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Vec<f64>,
    adjoint: Vec<f64>,
}

/// A computation graph with cached primal values and adjoints.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    forward_done: bool,
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, len: usize) -> NodeId {
        self.nodes.push(Node {
            op,
            value: vec![0.0; len],
            adjoint: Vec::new(),
        });
        self.forward_done = false;
        NodeId(self.nodes.len() - 1)
    }

    fn len_of(&self, id: NodeId) -> usize {
        self.nodes[id.0].value.len()
    }

    fn assert_same_len(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.len_of(a),
            self.len_of(b),
            "{what}: operand lengths differ"
        );
    }

    /// Register an input leaf of the given length.
    pub fn input(&mut self, len: usize) -> NodeId {
        self.push(Op::Input, len)
    }

    /// Register a constant leaf.
    pub fn constant(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        let id = self.push(Op::Const, len);
        self.nodes[id.0].value = values;
        id
    }

    pub fn scalar_const(&mut self, v: f64) -> NodeId {
        self.constant(vec![v])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "add");
        let len = self.len_of(a);
        self.push(Op::Add(a, b), len)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "sub");
        let len = self.len_of(a);
        self.push(Op::Sub(a, b), len)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "mul");
        let len = self.len_of(a);
        self.push(Op::Mul(a, b), len)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "div");
        let len = self.len_of(a);
        self.push(Op::Div(a, b), len)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Neg(a), len)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Scale(a, s), len)
    }

    pub fn offset(&mut self, a: NodeId, s: f64) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Offset(a, s), len)
    }

    pub fn mul_coeff(&mut self, coeff: Arc<Vec<f64>>, a: NodeId) -> NodeId {
        assert_eq!(coeff.len(), self.len_of(a), "mul_coeff: length mismatch");
        let len = self.len_of(a);
        self.push(Op::MulCoeff(coeff, a), len)
    }

    /// Dense affine map `W x + b`; `w` holds `rows * cols` entries
    /// row-major, `b` holds `rows`.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize) -> NodeId {
        assert_eq!(self.len_of(w), rows * cols, "affine: W size");
        assert_eq!(self.len_of(x), cols, "affine: x size");
        assert_eq!(self.len_of(b), rows, "affine: b size");
        self.push(Op::Affine { w, x, b, rows, cols }, rows)
    }

    pub fn max0(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Max0(a), len)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Softplus(a), len)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Sigmoid(a), len)
    }

    pub fn sin(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Sin(a), len)
    }

    pub fn cos(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Cos(a), len)
    }

    pub fn atan2(&mut self, y: NodeId, x: NodeId) -> NodeId {
        self.assert_same_len(y, x, "atan2");
        let len = self.len_of(y);
        self.push(Op::Atan2(y, x), len)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Sqrt(a), len)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let len = self.len_of(a);
        self.push(Op::Square(a), len)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a), 1)
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.assert_same_len(a, b, "dot");
        self.push(Op::Dot(a, b), 1)
    }

    pub fn gather(&mut self, src: NodeId, idx: Arc<Vec<usize>>) -> NodeId {
        let len = idx.len();
        self.push(Op::Gather(src, idx), len)
    }

    pub fn scatter_sum(&mut self, src: NodeId, idx: Arc<Vec<usize>>, out_len: usize) -> NodeId {
        assert_eq!(idx.len(), self.len_of(src), "scatter_sum: index length");
        self.push(Op::ScatterSum(src, idx), out_len)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let len = self.len_of(a) + self.len_of(b);
        self.push(Op::Concat(a, b), len)
    }

    /// Overwrite an input leaf's value.
    pub fn set_input(&mut self, id: NodeId, values: &[f64]) {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Input), "set_input on non-input node");
        assert_eq!(node.value.len(), values.len(), "set_input: length mismatch");
        node.value.copy_from_slice(values);
        self.forward_done = false;
    }

    /// Read a node's primal value (valid after `forward`).
    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Read a node's adjoint (valid after `backward`).
    pub fn adjoint(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].adjoint
    }

    /// Evaluate every node in construction order, caching primal values.
    /// Fails on the first node that produces a non-finite entry.
    pub fn forward(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            // Split borrows: the node being written only reads earlier nodes.
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            match &node.op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] + b[k];
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] - b[k];
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] * b[k];
                    }
                }
                Op::Div(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] / b[k];
                    }
                }
                Op::Neg(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = -a[k];
                    }
                }
                Op::Scale(a, s) => {
                    let (a, s) = (&before[a.0].value, *s);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] * s;
                    }
                }
                Op::Offset(a, s) => {
                    let (a, s) = (&before[a.0].value, *s);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] + s;
                    }
                }
                Op::MulCoeff(c, a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = c[k] * a[k];
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let wv = &before[w.0].value;
                    let xv = &before[x.0].value;
                    let bv = &before[b.0].value;
                    for r in 0..*rows {
                        let row = &wv[r * cols..(r + 1) * cols];
                        let mut acc = bv[r];
                        for c in 0..*cols {
                            acc += row[c] * xv[c];
                        }
                        node.value[r] = acc;
                    }
                }
                Op::Max0(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k].max(0.0);
                    }
                }
                Op::Softplus(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = softplus(a[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = sigmoid(a[k]);
                    }
                }
                Op::Sin(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k].sin();
                    }
                }
                Op::Cos(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k].cos();
                    }
                }
                Op::Atan2(y, x) => {
                    let (y, x) = (&before[y.0].value, &before[x.0].value);
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = y[k].atan2(x[k]);
                    }
                }
                Op::Sqrt(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k].sqrt();
                    }
                }
                Op::Square(a) => {
                    let a = &before[a.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = a[k] * a[k];
                    }
                }
                Op::Sum(a) => {
                    node.value[0] = before[a.0].value.iter().sum();
                }
                Op::Dot(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    node.value[0] = a.iter().zip(b).map(|(x, y)| x * y).sum();
                }
                Op::Gather(src, idx) => {
                    let s = &before[src.0].value;
                    for (k, o) in node.value.iter_mut().enumerate() {
                        *o = s[idx[k]];
                    }
                }
                Op::ScatterSum(src, idx) => {
                    let s = &before[src.0].value;
                    node.value.fill(0.0);
                    for (k, &slot) in idx.iter().enumerate() {
                        node.value[slot] += s[k];
                    }
                }
                Op::Concat(a, b) => {
                    let (a, b) = (&before[a.0].value, &before[b.0].value);
                    node.value[..a.len()].copy_from_slice(a);
                    node.value[a.len()..].copy_from_slice(b);
                }
            }
            if node.value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tape node {i}")));
            }
        }
        self.forward_done = true;
        Ok(())
    }

    /// Accumulate adjoints of every node with respect to the scalar node
    /// `seed`. Requires a prior successful `forward`.
    pub fn backward(&mut self, seed: NodeId) -> Result<()> {
        if !self.forward_done {
            return Err(Error::TapeState("backward called before forward".into()));
        }
        if self.len_of(seed) != 1 {
            return Err(Error::TapeState("backward seed must be scalar".into()));
        }
        for node in &mut self.nodes {
            node.adjoint.clear();
            node.adjoint.resize(node.value.len(), 0.0);
        }
        self.nodes[seed.0].adjoint[0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if node.adjoint.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = node.adjoint.clone();
            match &node.op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk;
                        before[b.0].adjoint[k] += gk;
                    }
                }
                Op::Sub(a, b) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk;
                        before[b.0].adjoint[k] -= gk;
                    }
                }
                Op::Mul(a, b) => {
                    for k in 0..g.len() {
                        let (av, bv) = (before[a.0].value[k], before[b.0].value[k]);
                        before[a.0].adjoint[k] += g[k] * bv;
                        before[b.0].adjoint[k] += g[k] * av;
                    }
                }
                Op::Div(a, b) => {
                    for k in 0..g.len() {
                        let (av, bv) = (before[a.0].value[k], before[b.0].value[k]);
                        before[a.0].adjoint[k] += g[k] / bv;
                        before[b.0].adjoint[k] -= g[k] * av / (bv * bv);
                    }
                }
                Op::Neg(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] -= gk;
                    }
                }
                Op::Scale(a, s) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk * s;
                    }
                }
                Op::Offset(a, _) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk;
                    }
                }
                Op::MulCoeff(c, a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk * c[k];
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        before[b.0].adjoint[r] += gr;
                        for c in 0..*cols {
                            let xv = before[x.0].value[c];
                            before[w.0].adjoint[r * cols + c] += gr * xv;
                        }
                    }
                    // grad x = W^T g, done in a second pass for cache order
                    for c in 0..*cols {
                        let mut acc = 0.0;
                        for r in 0..*rows {
                            acc += before[w.0].value[r * cols + c] * g[r];
                        }
                        before[x.0].adjoint[c] += acc;
                    }
                }
                Op::Max0(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        if before[a.0].value[k] > 0.0 {
                            before[a.0].adjoint[k] += gk;
                        }
                    }
                }
                Op::Softplus(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk * sigmoid(before[a.0].value[k]);
                    }
                }
                Op::Sigmoid(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        let s = node.value[k];
                        before[a.0].adjoint[k] += gk * s * (1.0 - s);
                    }
                }
                Op::Sin(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk * before[a.0].value[k].cos();
                    }
                }
                Op::Cos(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] -= gk * before[a.0].value[k].sin();
                    }
                }
                Op::Atan2(y, x) => {
                    for (k, &gk) in g.iter().enumerate() {
                        let (yv, xv) = (before[y.0].value[k], before[x.0].value[k]);
                        let d = (xv * xv + yv * yv).max(SQRT_FLOOR);
                        before[y.0].adjoint[k] += gk * xv / d;
                        before[x.0].adjoint[k] -= gk * yv / d;
                    }
                }
                Op::Sqrt(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        let denom = (2.0 * node.value[k]).max(SQRT_FLOOR);
                        before[a.0].adjoint[k] += gk / denom;
                    }
                }
                Op::Square(a) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[a.0].adjoint[k] += gk * 2.0 * before[a.0].value[k];
                    }
                }
                Op::Sum(a) => {
                    let gk = g[0];
                    for slot in before[a.0].adjoint.iter_mut() {
                        *slot += gk;
                    }
                }
                Op::Dot(a, b) => {
                    let gk = g[0];
                    for k in 0..before[a.0].value.len() {
                        let (av, bv) = (before[a.0].value[k], before[b.0].value[k]);
                        before[a.0].adjoint[k] += gk * bv;
                        before[b.0].adjoint[k] += gk * av;
                    }
                }
                Op::Gather(src, idx) => {
                    for (k, &gk) in g.iter().enumerate() {
                        before[src.0].adjoint[idx[k]] += gk;
                    }
                }
                Op::ScatterSum(src, idx) => {
                    for (k, &slot) in idx.iter().enumerate() {
                        before[src.0].adjoint[k] += g[slot];
                    }
                }
                Op::Concat(a, b) => {
                    let split = before[a.0].value.len();
                    for (k, &gk) in g.iter().enumerate() {
                        if k < split {
                            before[a.0].adjoint[k] += gk;
                        } else {
                            before[b.0].adjoint[k - split] += gk;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Indices of max0 nodes whose inputs straddle zero between two cached
    /// sign patterns; used by the gradient checker to flag kinks.
    fn max0_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            if let Op::Max0(a) = node.op {
                for &v in &self.nodes[a.0].value {
                    signs.push(v > 0.0);
                }
            }
        }
        signs
    }
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// |analytic - numeric| / (1 + |analytic| + |numeric|)
    pub rel_error: f64,
    /// The central-difference segment crossed a kink; the comparison is
    /// one-sided there and excluded from the pass criterion.
    pub kink: bool,
}

/// Gradient-check report over a sampled coordinate subset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradReport {
    pub function: String,
    pub step: f64,
    pub entries: Vec<GradCheckEntry>,
    pub worst_rel_error: f64,
    pub worst_coordinate: usize,
    pub kinks: usize,
}

impl GradReport {
    pub fn max_smooth_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| !e.kink)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compare the tape's analytic gradient of `output` with central finite
/// differences over the given coordinates of `input`.
///
/// For each sampled coordinate the input is perturbed by +/- `h`; if the
/// sign pattern of any max(0, .) argument differs between the two
/// perturbed evaluations, the coordinate is flagged as a kink and excluded
/// from the pass criterion (the analytic value is one-sided there).
pub fn gradcheck(
    tape: &mut Tape,
    function: &str,
    input: NodeId,
    output: NodeId,
    coords: &[usize],
    h: f64,
) -> Result<GradReport> {
    if h <= 0.0 {
        return Err(Error::Domain(format!("step must be positive, got {h}")));
    }
    let base: Vec<f64> = tape.value(input).to_vec();
    tape.forward()?;
    tape.backward(output)?;
    let analytic: Vec<f64> = tape.adjoint(input).to_vec();

    let mut entries = Vec::with_capacity(coords.len());
    for &c in coords {
        let mut x = base.clone();
        x[c] = base[c] + h;
        tape.set_input(input, &x);
        tape.forward()?;
        let f_plus = tape.value(output)[0];
        let signs_plus = tape.max0_signs();

        x[c] = base[c] - h;
        tape.set_input(input, &x);
        tape.forward()?;
        let f_minus = tape.value(output)[0];
        let signs_minus = tape.max0_signs();

        let numeric = (f_plus - f_minus) / (2.0 * h);
        let a = analytic[c];
        let rel = (a - numeric).abs() / (1.0 + a.abs() + numeric.abs());
        entries.push(GradCheckEntry {
            coordinate: c,
            analytic: a,
            numeric,
            rel_error: rel,
            kink: signs_plus != signs_minus,
        });
    }
    // Restore the base point.
    tape.set_input(input, &base);
    tape.forward()?;

    let mut worst = 0.0;
    let mut worst_coord = coords.first().copied().unwrap_or(0);
    for e in &entries {
        if !e.kink && e.rel_error > worst {
            worst = e.rel_error;
            worst_coord = e.coordinate;
        }
    }
    Ok(GradReport {
        function: function.to_string(),
        step: h,
        kinks: entries.iter().filter(|e| e.kink).count(),
        entries,
        worst_rel_error: worst,
        worst_coordinate: worst_coord,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_forward_and_square_gradient() {
        let mut tape = Tape::new();
        let w = tape.constant(vec![2.0]);
        let x = tape.input(1);
        let b = tape.constant(vec![1.0]);
        let y = tape.affine(w, x, b, 1, 1);
        tape.set_input(x, &[3.0]);
        tape.forward().unwrap();
        assert_eq!(tape.value(y), &[7.0]);

        let mut tape = Tape::new();
        let x = tape.input(1);
        let y = tape.square(x);
        tape.set_input(x, &[3.0]);
        tape.forward().unwrap();
        tape.backward(y).unwrap();
        assert_eq!(tape.adjoint(x), &[6.0]);
    }

    #[test]
    fn sqrt_forward() {
        let mut tape = Tape::new();
        let x = tape.input(1);
        let y = tape.sqrt(x);
        tape.set_input(x, &[4.0]);
        tape.forward().unwrap();
        assert_eq!(tape.value(y), &[2.0]);
        tape.backward(y).unwrap();
        assert!((tape.adjoint(x)[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn max0_subgradient_is_zero_below_and_at_kink() {
        let mut tape = Tape::new();
        let x = tape.input(2);
        let m = tape.max0(x);
        let s = tape.sum(m);
        tape.set_input(x, &[-1.0, 0.0]);
        tape.forward().unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.adjoint(x), &[0.0, 0.0]);
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.input(1);
        let y = tape.square(x);
        assert!(matches!(tape.backward(y), Err(Error::TapeState(_))));
    }

    #[test]
    fn backward_of_sum_equals_sum_of_backwards() {
        // Linearity of adjoints: seed through a+b matches the sum of the
        // separate seeds.
        let mut tape = Tape::new();
        let x = tape.input(3);
        let sq = tape.square(x);
        let a = tape.sum(sq);
        let sn = tape.sin(x);
        let b = tape.sum(sn);
        let total = tape.add(a, b);
        tape.set_input(x, &[0.3, -1.2, 2.0]);
        tape.forward().unwrap();
        tape.backward(total).unwrap();
        let combined = tape.adjoint(x).to_vec();
        tape.backward(a).unwrap();
        let ga = tape.adjoint(x).to_vec();
        tape.backward(b).unwrap();
        let gb = tape.adjoint(x).to_vec();
        for k in 0..3 {
            assert!((combined[k] - (ga[k] + gb[k])).abs() <= 1e-12);
        }
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let mut tape = Tape::new();
        let x = tape.input(4);
        let s = tape.softplus(x);
        let q = tape.square(s);
        let z = tape.sum(q);
        tape.set_input(x, &[0.1, -0.7, 1.3, 2.4]);
        tape.forward().unwrap();
        tape.backward(z).unwrap();
        let v1 = tape.value(z).to_vec();
        let g1 = tape.adjoint(x).to_vec();
        tape.forward().unwrap();
        tape.backward(z).unwrap();
        assert_eq!(v1, tape.value(z));
        assert_eq!(g1, tape.adjoint(x));
    }

    #[test]
    fn gradcheck_flags_kinks_and_passes_linear_maps() {
        let mut tape = Tape::new();
        let x = tape.input(3);
        let c = tape.constant(vec![2.0, -3.0, 0.5]);
        let z = tape.dot(x, c);
        tape.set_input(x, &[1.0, 2.0, 3.0]);
        tape.forward().unwrap();
        let report = gradcheck(&mut tape, "linear", x, z, &[0, 1, 2], 1e-5).unwrap();
        assert!(report.max_smooth_error() <= 1e-10);
        assert_eq!(report.kinks, 0);

        // A coordinate sitting exactly on the max(0, .) kink gets flagged.
        let mut tape = Tape::new();
        let x = tape.input(2);
        let m = tape.max0(x);
        let z = tape.sum(m);
        tape.set_input(x, &[0.0, 5.0]);
        tape.forward().unwrap();
        let report = gradcheck(&mut tape, "kink", x, z, &[0, 1], 1e-5).unwrap();
        assert!(report.entries[0].kink);
        assert!(!report.entries[1].kink);
    }
}
