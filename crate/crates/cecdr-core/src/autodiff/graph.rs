//! Append-only computation tape with reverse-mode differentiation.
//!
//! A [`Graph`] records one forward pass as a list of operation nodes; node
//! ids are handed out in append order, so the implicit topological order is
//! the vector order and [`Graph::backward`] walks it strictly in reverse.
//! Graphs are rebuilt per training step (dynamic tape) and confined to one
//! worker at a time.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CecdrError, Result};

use super::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    /// matrix [m,d] + row vector [d], broadcast over rows
    AddRow(Var, Var),
    Mul(Var, Var),
    /// matrix [m,d] ⊙ row vector [d], broadcast over rows
    MulRow(Var, Var),
    /// tensor scaled by a scalar-shaped node
    MulScalar(Var, Var),
    MatMul(Var, Var),
    /// a · bᵀ with b stored as [n,k]
    MatMulNt(Var, Var),
    RowSum(Var),
    Sum(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Log(Var),
    LeakyRelu(Var),
    Clamp(Var, f64, f64),
    Softmax { x: Var, causal: bool },
    LayerNorm(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Gather { table: Var, ids: Vec<u32> },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SelectRow(Var, usize),
    StopGradient(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Mul(a, b)
            | Op::MulRow(a, b)
            | Op::MulScalar(a, b)
            | Op::MatMul(a, b)
            | Op::MatMulNt(a, b) => vec![*a, *b],
            Op::RowSum(x)
            | Op::Sum(x)
            | Op::Scale(x, _)
            | Op::Sigmoid(x)
            | Op::Log(x)
            | Op::LeakyRelu(x)
            | Op::Clamp(x, _, _)
            | Op::Softmax { x, .. }
            | Op::LayerNorm(x)
            | Op::Dropout { x, .. }
            | Op::Gather { table: x, .. }
            | Op::MaxPoolRows { x, .. }
            | Op::SelectRow(x, _)
            | Op::StopGradient(x) => vec![*x],
            Op::ConcatRows(parts) | Op::ConcatCols(parts) => parts.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const LEAKY_SLOPE: f64 = 0.01;
const LAYER_NORM_EPS: f64 = 1e-12;

fn shape_err(op: &'static str, detail: String) -> CecdrError {
    CecdrError::ShapeMismatch { op, detail }
}

/// Dense row-major matmul with optional transposes: op(a) · op(b).
#[allow(clippy::too_many_arguments)]
fn mm(
    a: &[f64],
    ar: usize,
    ac: usize,
    ta: bool,
    b: &[f64],
    br: usize,
    bc: usize,
    tb: bool,
) -> (Vec<f64>, usize, usize) {
    let (m, ka) = if ta { (ac, ar) } else { (ar, ac) };
    let (kb, n) = if tb { (bc, br) } else { (br, bc) };
    debug_assert_eq!(ka, kb);
    let k = ka;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let av = if ta { a[l * ac + i] } else { a[i * ac + l] };
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            if tb {
                for (j, o) in orow.iter_mut().enumerate() {
                    *o += av * b[j * bc + l];
                }
            } else {
                let brow = &b[l * bc..(l + 1) * bc];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
    (out, m, n)
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite forward value out of {op:?}");
        debug_assert!(
            op.inputs().iter().all(|v| v.0 < self.nodes.len()),
            "op input does not precede the node"
        );
        self.nodes.push(Node { op, value, grad: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass w.r.t. this node, if any.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let vals = ta.values().iter().zip(tb.values()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), t, rg))
    }

    pub fn add_row(&mut self, mat: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(mat), self.value(row));
        if tm.rank() != 2 || tr.rank() != 1 || tm.cols() != tr.len() {
            return Err(shape_err("add_row", format!("{:?} + {:?}", tm.shape(), tr.shape())));
        }
        let cols = tm.cols();
        let vals = tm
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x + tr.values()[i % cols])
            .collect();
        let t = Tensor::new(tm.shape().to_vec(), vals)?;
        let rg = self.requires(mat) || self.requires(row);
        Ok(self.push(Op::AddRow(mat, row), t, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let vals = ta.values().iter().zip(tb.values()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul(a, b), t, rg))
    }

    pub fn mul_row(&mut self, mat: Var, row: Var) -> Result<Var> {
        let (tm, tr) = (self.value(mat), self.value(row));
        if tm.rank() != 2 || tr.rank() != 1 || tm.cols() != tr.len() {
            return Err(shape_err("mul_row", format!("{:?} ⊙ {:?}", tm.shape(), tr.shape())));
        }
        let cols = tm.cols();
        let vals = tm
            .values()
            .iter()
            .enumerate()
            .map(|(i, x)| x * tr.values()[i % cols])
            .collect();
        let t = Tensor::new(tm.shape().to_vec(), vals)?;
        let rg = self.requires(mat) || self.requires(row);
        Ok(self.push(Op::MulRow(mat, row), t, rg))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        if !ts.is_scalar() {
            return Err(shape_err("mul_scalar", format!("scale has shape {:?}", ts.shape())));
        }
        let c = ts.values()[0];
        let vals = ta.values().iter().map(|x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals)?;
        let rg = self.requires(a) || self.requires(s);
        Ok(self.push(Op::MulScalar(a, s), t, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ta = self.value(a);
        let vals = ta.values().iter().map(|x| x * c).collect();
        let t = Tensor::new(ta.shape().to_vec(), vals)?;
        let rg = self.requires(a);
        Ok(self.push(Op::Scale(a, c), t, rg))
    }

    /// a - b, composed from scale and add.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0)?;
        self.add(a, nb)
    }

    /// 1 - x, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Result<Var> {
        let ones = self.constant(Tensor::filled(self.value(x).shape().to_vec(), 1.0));
        self.sub(ones, x)
    }

    // ---- matrix products -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ar, ac) = (ta.rows(), ta.cols());
        // rank-1 right operand acts as a column vector
        let (br, bc) = if tb.rank() == 1 { (tb.len(), 1) } else { (tb.rows(), tb.cols()) };
        if ac != br {
            return Err(shape_err("matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let (vals, m, n) = mm(ta.values(), ar, ac, false, tb.values(), br, bc, false);
        let out_shape = match (ta.rank(), tb.rank()) {
            (1, 1) => vec![1],
            (1, 2) => vec![n],
            (2, 1) => vec![m],
            _ => vec![m, n],
        };
        let t = Tensor::new(out_shape, vals)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul(a, b), t, rg))
    }

    /// a · bᵀ. `b` must be rank 2, stored as [n, k].
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if tb.rank() != 2 {
            return Err(shape_err("matmul_nt", format!("rhs must be rank 2, got {:?}", tb.shape())));
        }
        let (ar, ac) = (ta.rows(), ta.cols());
        let (br, bc) = (tb.rows(), tb.cols());
        if ac != bc {
            return Err(shape_err("matmul_nt", format!("{:?} · {:?}ᵀ", ta.shape(), tb.shape())));
        }
        let (vals, m, n) = mm(ta.values(), ar, ac, false, tb.values(), br, bc, true);
        let out_shape = if ta.rank() == 1 { vec![n] } else { vec![m, n] };
        let t = Tensor::new(out_shape, vals)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMulNt(a, b), t, rg))
    }

    // ---- reductions -------------------------------------------------------

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(shape_err("row_sum", format!("expected rank 2, got {:?}", tx.shape())));
        }
        let vals: Vec<f64> = (0..tx.rows()).map(|i| tx.row(i).iter().sum()).collect();
        let t = Tensor::vector(vals);
        let rg = self.requires(x);
        Ok(self.push(Op::RowSum(x), t, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.requires(x);
        Ok(self.push(Op::Sum(x), Tensor::scalar(total), rg))
    }

    /// Mean over all elements.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    // ---- nonlinearities ----------------------------------------------------

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let vals = self.value(x).values().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Sigmoid(x), t, rg))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.values().iter().any(|&v| v <= 0.0) {
            return Err(CecdrError::Invalid("log of a non-positive value".into()));
        }
        let vals = tx.values().iter().map(|v| v.ln()).collect();
        let t = Tensor::new(tx.shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Log(x), t, rg))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        let vals = self
            .value(x)
            .values()
            .iter()
            .map(|&v| if v >= 0.0 { v } else { LEAKY_SLOPE * v })
            .collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::LeakyRelu(x), t, rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let vals = self.value(x).values().iter().map(|v| v.clamp(lo, hi)).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Clamp(x, lo, hi), t, rg))
    }

    /// Softmax over the last axis. With `causal` set the input must be a
    /// square score matrix; row i distributes mass over columns 0..=i only.
    pub fn softmax(&mut self, x: Var, causal: bool) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        if causal && rows != cols {
            return Err(shape_err("softmax", format!("causal mask needs square input, got {:?}", tx.shape())));
        }
        let mut vals = vec![0.0; tx.len()];
        for i in 0..rows {
            let width = if causal { i + 1 } else { cols };
            let row = &tx.values()[i * cols..i * cols + width];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                vals[i * cols + j] = e;
                denom += e;
            }
            for v in &mut vals[i * cols..i * cols + width] {
                *v /= denom;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Softmax { x, causal }, t, rg))
    }

    /// Per-row normalization to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut vals = vec![0.0; tx.len()];
        for i in 0..rows {
            let row = &tx.values()[i * cols..(i + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (j, &v) in row.iter().enumerate() {
                vals[i * cols + j] = (v - mean) * inv;
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::LayerNorm(x), t, rg))
    }

    /// Inverted dropout with an explicit keep probability and RNG stream.
    /// `keep == 1.0` is the evaluation path and consumes no randomness.
    pub fn dropout(&mut self, x: Var, keep: f64, rng: &mut ChaCha8Rng) -> Result<Var> {
        if !(0.0 < keep && keep <= 1.0) {
            return Err(CecdrError::Invalid(format!("dropout keep probability {keep} outside (0, 1]")));
        }
        let n = self.value(x).len();
        let mask: Vec<f64> = if keep == 1.0 {
            vec![1.0; n]
        } else {
            (0..n)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect()
        };
        let vals = self.value(x).values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.value(x).shape().to_vec(), vals)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Dropout { x, mask }, t, rg))
    }

    // ---- structural --------------------------------------------------------

    /// Row lookup: `table` is [v, d], output is [ids.len(), d].
    /// Backward scatter-adds into the table rows.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tt = self.value(table);
        if tt.rank() != 2 {
            return Err(shape_err("gather", format!("table must be rank 2, got {:?}", tt.shape())));
        }
        if ids.is_empty() {
            return Err(shape_err("gather", "empty id list".into()));
        }
        let (rows, cols) = (tt.rows(), tt.cols());
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= rows) {
            return Err(shape_err("gather", format!("id {bad} out of range for table with {rows} rows")));
        }
        let mut vals = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            vals.extend_from_slice(tt.row(id as usize));
        }
        let t = Tensor::matrix(ids.len(), cols, vals)?;
        let rg = self.requires(table);
        Ok(self.push(Op::Gather { table, ids: ids.to_vec() }, t, rg))
    }

    /// Column-wise maximum over the row (sequence) axis: [m, d] → [d].
    /// Ties resolve to the earliest row.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 {
            return Err(shape_err("max_pool_rows", format!("expected rank 2, got {:?}", tx.shape())));
        }
        let (rows, cols) = (tx.rows(), tx.cols());
        let mut vals = tx.row(0).to_vec();
        let mut argmax = vec![0usize; cols];
        for i in 1..rows {
            for (j, &v) in tx.row(i).iter().enumerate() {
                if v > vals[j] {
                    vals[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let t = Tensor::vector(vals);
        let rg = self.requires(x);
        Ok(self.push(Op::MaxPoolRows { x, argmax }, t, rg))
    }

    /// Stack parts along the row axis; rank-1 parts contribute one row.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no parts".into()));
        }
        let cols = self.value(parts[0]).cols();
        let mut vals = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let tp = self.value(p);
            if tp.cols() != cols {
                return Err(shape_err("concat_rows", format!("column mismatch: {} vs {}", tp.cols(), cols)));
            }
            rows += tp.rows();
            vals.extend_from_slice(tp.values());
        }
        let t = Tensor::matrix(rows, cols, vals)?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatRows(parts.to_vec()), t, rg))
    }

    /// Concatenate along the last axis. Rank-1 parts yield a rank-1 output;
    /// rank-2 parts must agree on row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no parts".into()));
        }
        let rank = self.value(parts[0]).rank();
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rank() != rank || self.value(p).rows() != rows) {
            return Err(shape_err("concat_cols", "parts disagree on rank or rows".into()));
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut vals = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let tp = self.value(p);
                vals.extend_from_slice(&tp.values()[i * w..(i + 1) * w]);
            }
        }
        let t = if rank == 1 { Tensor::vector(vals) } else { Tensor::matrix(rows, total, vals)? };
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), t, rg))
    }

    /// Extract one row of a rank-2 tensor as a rank-1 vector.
    pub fn select_row(&mut self, x: Var, row: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.rank() != 2 || row >= tx.rows() {
            return Err(shape_err("select_row", format!("row {row} of {:?}", tx.shape())));
        }
        let t = Tensor::vector(tx.row(row).to_vec());
        let rg = self.requires(x);
        Ok(self.push(Op::SelectRow(x, row), t, rg))
    }

    /// Identity forward; exactly zero gradient flows into the input.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).clone();
        Ok(self.push(Op::StopGradient(x), t, false))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse accumulation from a scalar loss. Visits nodes in strict
    /// reverse append order; populates `grad` on every node reachable from
    /// the loss that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(CecdrError::NonScalarLoss { shape: self.value(loss).shape().to_vec() });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if self.nodes[idx].grad.is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let g = self.nodes[idx].grad.clone().unwrap();
            self.propagate(idx, &g);
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let grad = self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn accum_at(&mut self, v: Var, offset: usize, delta: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let grad = self.nodes[v.0].grad.get_or_insert_with(|| vec![0.0; len]);
        for (g, d) in grad[offset..offset + delta.len()].iter_mut().zip(delta) {
            *g += d;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[f64]) {
        // Ops are matched by moving cheap copies of the input handles out of
        // the node; saved buffers (masks, ids, argmax) are cloned on demand.
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accum(a, g);
                self.accum(b, g);
            }
            Op::AddRow(mat, row) => {
                let (mat, row) = (*mat, *row);
                self.accum(mat, g);
                let cols = self.nodes[row.0].value.len();
                let mut dr = vec![0.0; cols];
                for (i, &gv) in g.iter().enumerate() {
                    dr[i % cols] += gv;
                }
                self.accum(row, &dr);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let da: Vec<f64> =
                    g.iter().zip(self.nodes[b.0].value.values()).map(|(gv, bv)| gv * bv).collect();
                let db: Vec<f64> =
                    g.iter().zip(self.nodes[a.0].value.values()).map(|(gv, av)| gv * av).collect();
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::MulRow(mat, row) => {
                let (mat, row) = (*mat, *row);
                let cols = self.nodes[row.0].value.len();
                let rv = self.nodes[row.0].value.values().to_vec();
                let mv = self.nodes[mat.0].value.values().to_vec();
                let dm: Vec<f64> = g.iter().enumerate().map(|(i, gv)| gv * rv[i % cols]).collect();
                let mut dr = vec![0.0; cols];
                for (i, &gv) in g.iter().enumerate() {
                    dr[i % cols] += gv * mv[i];
                }
                self.accum(mat, &dm);
                self.accum(row, &dr);
            }
            Op::MulScalar(a, s) => {
                let (a, s) = (*a, *s);
                let c = self.nodes[s.0].value.values()[0];
                let da: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                let ds: f64 = g
                    .iter()
                    .zip(self.nodes[a.0].value.values())
                    .map(|(gv, av)| gv * av)
                    .sum();
                self.accum(a, &da);
                self.accum(s, &[ds]);
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (ar, ac) = (ta.rows(), ta.cols());
                let (br, bc) = if tb.rank() == 1 { (tb.len(), 1) } else { (tb.rows(), tb.cols()) };
                let (m, n) = (ar, bc);
                // dA = G · Bᵀ ; dB = Aᵀ · G
                let (da, _, _) =
                    mm(g, m, n, false, self.nodes[b.0].value.values(), br, bc, true);
                let (db, _, _) =
                    mm(self.nodes[a.0].value.values(), ar, ac, true, g, m, n, false);
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::MatMulNt(a, b) => {
                let (a, b) = (*a, *b);
                let ta = &self.nodes[a.0].value;
                let tb = &self.nodes[b.0].value;
                let (ar, ac) = (ta.rows(), ta.cols());
                let (br, bc) = (tb.rows(), tb.cols());
                let (m, n) = (ar, br);
                // C = A·Bᵀ: dA = G·B ; dB = Gᵀ·A
                let (da, _, _) = mm(g, m, n, false, tb.values(), br, bc, false);
                let (db, _, _) = mm(g, m, n, true, ta.values(), ar, ac, false);
                self.accum(a, &da);
                self.accum(b, &db);
            }
            Op::RowSum(x) => {
                let x = *x;
                let tx = &self.nodes[x.0].value;
                let (rows, cols) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        dx[i * cols + j] = g[i];
                    }
                }
                self.accum(x, &dx);
            }
            Op::Sum(x) => {
                let x = *x;
                let n = self.nodes[x.0].value.len();
                self.accum(x, &vec![g[0]; n]);
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                let dx: Vec<f64> = g.iter().map(|gv| gv * c).collect();
                self.accum(x, &dx);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let y = self.nodes[idx].value.values().to_vec();
                let dx: Vec<f64> = g.iter().zip(&y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect();
                self.accum(x, &dx);
            }
            Op::Log(x) => {
                let x = *x;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x.0].value.values())
                    .map(|(gv, xv)| gv / xv)
                    .collect();
                self.accum(x, &dx);
            }
            Op::LeakyRelu(x) => {
                let x = *x;
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x.0].value.values())
                    .map(|(gv, &xv)| if xv >= 0.0 { *gv } else { gv * LEAKY_SLOPE })
                    .collect();
                self.accum(x, &dx);
            }
            Op::Clamp(x, lo, hi) => {
                let (x, lo, hi) = (*x, *lo, *hi);
                let dx: Vec<f64> = g
                    .iter()
                    .zip(self.nodes[x.0].value.values())
                    .map(|(gv, &xv)| if xv > lo && xv < hi { *gv } else { 0.0 })
                    .collect();
                self.accum(x, &dx);
            }
            Op::Softmax { x, causal } => {
                let (x, causal) = (*x, *causal);
                let y = &self.nodes[idx].value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut dx = vec![0.0; y.len()];
                for i in 0..rows {
                    let width = if causal { i + 1 } else { cols };
                    let yr = &y.values()[i * cols..i * cols + width];
                    let gr = &g[i * cols..i * cols + width];
                    let dot: f64 = yr.iter().zip(gr).map(|(yv, gv)| yv * gv).sum();
                    for j in 0..width {
                        dx[i * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(x, &dx);
            }
            Op::LayerNorm(x) => {
                let x = *x;
                let y = self.nodes[idx].value.clone();
                let tx = &self.nodes[x.0].value;
                let (rows, cols) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; tx.len()];
                for i in 0..rows {
                    let xr = &tx.values()[i * cols..(i + 1) * cols];
                    let yr = &y.values()[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let mean = xr.iter().sum::<f64>() / cols as f64;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let gmean = gr.iter().sum::<f64>() / cols as f64;
                    let gymean =
                        gr.iter().zip(yr).map(|(gv, yv)| gv * yv).sum::<f64>() / cols as f64;
                    for j in 0..cols {
                        dx[i * cols + j] = inv * (gr[j] - gmean - yr[j] * gymean);
                    }
                }
                self.accum(x, &dx);
            }
            Op::Dropout { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                let dx: Vec<f64> = g.iter().zip(&mask).map(|(gv, m)| gv * m).collect();
                self.accum(x, &dx);
            }
            Op::Gather { table, ids } => {
                let table = *table;
                let ids = ids.clone();
                let cols = self.nodes[table.0].value.cols();
                for (i, &id) in ids.iter().enumerate() {
                    let slice = &g[i * cols..(i + 1) * cols].to_vec();
                    self.accum_at(table, id as usize * cols, slice);
                }
            }
            Op::MaxPoolRows { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let cols = self.nodes[x.0].value.cols();
                let mut dx = vec![0.0; self.nodes[x.0].value.len()];
                for (j, (&row, &gv)) in argmax.iter().zip(g).enumerate() {
                    dx[row * cols + j] = gv;
                }
                self.accum(x, &dx);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.nodes[p.0].value.len();
                    let slice = g[offset..offset + len].to_vec();
                    self.accum(p, &slice);
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let rows = self.nodes[parts[0].0].value.rows();
                let widths: Vec<usize> =
                    parts.iter().map(|p| self.nodes[p.0].value.cols()).collect();
                let total: usize = widths.iter().sum();
                for (pi, p) in parts.iter().enumerate() {
                    let w = widths[pi];
                    let before: usize = widths[..pi].iter().sum();
                    let mut dp = vec![0.0; rows * w];
                    for i in 0..rows {
                        dp[i * w..(i + 1) * w]
                            .copy_from_slice(&g[i * total + before..i * total + before + w]);
                    }
                    self.accum(*p, &dp);
                }
            }
            Op::SelectRow(x, row) => {
                let (x, row) = (*x, *row);
                let cols = self.nodes[x.0].value.cols();
                self.accum_at(x, row * cols, &g.to_vec());
            }
            Op::StopGradient(_) => {}
        }
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
