//! Reverse-mode differentiation over dense 2-D matrices.
//!
//! A [`Graph`] records every operation as a node in creation order, so node
//! indices are already a topological order and [`Graph::backward`] is a single
//! reverse sweep. Gradients accumulate additively, which handles fan-out.
//!
//! Leaves come in two kinds: [`Graph::leaf`] participates in differentiation,
//! [`Graph::constant`] does not (its gradient stays identically zero, and no
//! work is spent propagating into it).

mod check;

pub use check::{grad_check, GradCheckReport};

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction axis for [`Graph::pool`]. `Rows` collapses the row axis
/// (r×c → 1×c), `Cols` collapses the column axis (r×c → r×1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

/// Tag of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Leaf,
    Constant,
    MatMul,
    Transpose,
    Add,
    Scale,
    RowSoftmax,
    RowL2Normalize,
    Pool,
    ConcatCols,
    CrossEntropy,
    Mse,
    GatherRows,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Scale(usize, f64),
    RowSoftmax(usize),
    RowL2Normalize { input: usize, norms: Vec<f64> },
    Pool { input: usize, axis: Axis, kind: PoolKind, argmax: Vec<usize> },
    ConcatCols(usize, usize),
    CrossEntropy { logits: usize, target: usize, probs: Vec<f64> },
    Mse(usize, usize),
    GatherRows { table: usize, ids: Vec<usize> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Constant => OpKind::Constant,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Scale(..) => OpKind::Scale,
            Op::RowSoftmax(_) => OpKind::RowSoftmax,
            Op::RowL2Normalize { .. } => OpKind::RowL2Normalize,
            Op::Pool { .. } => OpKind::Pool,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Mse(..) => OpKind::Mse,
            Op::GatherRows { .. } => OpKind::GatherRows,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation with per-node gradients.
#[derive(Debug, Default, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    /// Test-only mutation: scales the backward contribution of one op kind.
    #[cfg(test)]
    fault: Option<OpKind>,
    #[cfg(test)]
    fault_scale: f64,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    #[cfg(test)]
    pub(crate) fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    /// Nodes that received no gradient (constants, unreachable nodes) read as zeros.
    pub fn grad(&self, v: Var) -> Matrix {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.nodes[v.0].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.needs(a.0);
        self.push(value, Op::Transpose(a.0), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::Add(a.0, b.0), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.needs(a.0);
        self.push(value, Op::Scale(a.0, factor), rg)
    }

    /// Softmax of each row, computed after subtracting the row maximum.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            softmax_in_place(value.row_mut(i));
        }
        let rg = self.needs(a.0);
        self.push(value, Op::RowSoftmax(a.0), rg)
    }

    /// Scales every row to unit L2 norm.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        let mut norms = Vec::with_capacity(value.rows());
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let norm = libm::sqrt(row.iter().map(|x| x * x).sum::<f64>());
            if !(norm >= 1e-12) {
                return Err(Error::DegenerateRow {
                    op: "row_l2_normalize",
                    row: i,
                });
            }
            for x in row.iter_mut() {
                *x /= norm;
            }
            norms.push(norm);
        }
        let rg = self.needs(a.0);
        Ok(self.push(value, Op::RowL2Normalize { input: a.0, norms }, rg))
    }

    /// Mean or max reduction along `axis`. Max routes its gradient to the first
    /// (lowest-index) maximiser.
    pub fn pool(&mut self, a: Var, axis: Axis, kind: PoolKind) -> Var {
        let x = self.value(a);
        let (r, c) = x.shape();
        let (out_r, out_c, lanes, span) = match axis {
            Axis::Rows => (1, c, c, r),
            Axis::Cols => (r, 1, r, c),
        };
        let at = |lane: usize, k: usize| match axis {
            Axis::Rows => x.get(k, lane),
            Axis::Cols => x.get(lane, k),
        };
        let mut out = Matrix::zeros(out_r, out_c);
        let mut argmax = Vec::new();
        for lane in 0..lanes {
            let v = match kind {
                PoolKind::Mean => {
                    let s: f64 = (0..span).map(|k| at(lane, k)).sum();
                    if span == 0 {
                        0.0
                    } else {
                        s / span as f64
                    }
                }
                PoolKind::Max => {
                    let mut best = 0usize;
                    for k in 1..span {
                        if at(lane, k) > at(lane, best) {
                            best = k;
                        }
                    }
                    argmax.push(best);
                    if span == 0 {
                        0.0
                    } else {
                        at(lane, best)
                    }
                }
            };
            out.as_mut_slice()[lane] = v;
        }
        let rg = self.needs(a.0);
        self.push(
            out,
            Op::Pool {
                input: a.0,
                axis,
                kind,
                argmax,
            },
            rg,
        )
    }

    /// `[a, b]` side by side.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let cols = x.cols() + y.cols();
        let mut data = Vec::with_capacity(x.rows() * cols);
        for i in 0..x.rows() {
            data.extend_from_slice(x.row(i));
            data.extend_from_slice(y.row(i));
        }
        let value = Matrix::from_vec(x.rows(), cols, data)?;
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(value, Op::ConcatCols(a.0, b.0), rg))
    }

    /// `-log softmax(logits)[target]` for a 1×c logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() != 1 || x.cols() == 0 {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: x.shape(),
                right: (1, x.cols().max(1)),
            });
        }
        if target >= x.cols() {
            return Err(Error::Index {
                what: "cross_entropy target",
                index: target,
                bound: x.cols(),
            });
        }
        let row = x.row(0);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = row.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(total);
        let probs: Vec<f64> = row.iter().map(|&v| libm::exp(v - lse)).collect();
        let loss = lse - row[target];
        let rg = self.needs(logits.0);
        Ok(self.push(
            Matrix::filled(1, 1, loss),
            Op::CrossEntropy {
                logits: logits.0,
                target,
                probs,
            },
            rg,
        ))
    }

    /// Mean over all entries of `(a - b)²`.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.value(a).zip_map(self.value(b), "mse", |x, y| x - y)?;
        let n = diff.len();
        let loss = if n == 0 {
            0.0
        } else {
            diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n as f64
        };
        let rg = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(Matrix::filled(1, 1, loss), Op::Mse(a.0, b.0), rg))
    }

    /// Embedding lookup: output row `i` is `table` row `ids[i]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::Index {
                    what: "gather_rows id",
                    index: id,
                    bound: t.rows(),
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let value = Matrix::from_vec(ids.len(), t.cols(), data)?;
        let rg = self.needs(table.0);
        Ok(self.push(
            value,
            Op::GatherRows {
                table: table.0,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Populates gradients of the scalar `output` with respect to every node.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        let shape = self.value(output).shape();
        if shape != (1, 1) {
            return Err(Error::Contract(alloc::format!(
                "backward requires a 1x1 output, got {}x{}",
                shape.0,
                shape.1
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[output.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, contribution: Matrix) {
        if !self.nodes[target].requires_grad {
            return;
        }
        #[cfg(test)]
        let contribution = if self.fault_scale != 1.0 {
            contribution.map(|x| self.fault_scale * x)
        } else {
            contribution
        };
        match &mut self.grads[target] {
            Some(g) => g.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, idx: usize, g: &Matrix) {
        #[cfg(test)]
        {
            self.fault_scale = if self.fault == Some(self.nodes[idx].op.kind()) {
                1.5
            } else {
                1.0
            };
        }
        let node = &self.nodes[idx];
        match node.op.clone() {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let ga = g.matmul_transposed(&self.nodes[b].value).expect("shape checked in forward");
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let gb = self.nodes[a].value.transposed_matmul(g).expect("shape checked in forward");
                    self.accumulate(b, gb);
                }
            }
            Op::Transpose(a) => self.accumulate(a, g.transpose()),
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Scale(a, factor) => self.accumulate(a, g.map(|x| x * factor)),
            Op::RowSoftmax(a) => {
                let y = &self.nodes[idx].value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                self.accumulate(a, ga);
            }
            Op::RowL2Normalize { input, norms } => {
                let y = &self.nodes[idx].value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for (i, norm) in norms.iter().enumerate() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (q - p * dot) / norm;
                    }
                }
                self.accumulate(input, ga);
            }
            Op::Pool {
                input,
                axis,
                kind,
                argmax,
            } => {
                let (r, c) = self.nodes[input].value.shape();
                let mut ga = Matrix::zeros(r, c);
                let span = match axis {
                    Axis::Rows => r,
                    Axis::Cols => c,
                };
                let lanes = g.len();
                for lane in 0..lanes {
                    let gl = g.as_slice()[lane];
                    let mut put = |k: usize, v: f64| match axis {
                        Axis::Rows => ga[(k, lane)] += v,
                        Axis::Cols => ga[(lane, k)] += v,
                    };
                    match kind {
                        PoolKind::Mean => {
                            for k in 0..span {
                                put(k, gl / span as f64);
                            }
                        }
                        PoolKind::Max => {
                            if span > 0 {
                                put(argmax[lane], gl);
                            }
                        }
                    }
                }
                self.accumulate(input, ga);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.nodes[a].value.cols();
                let cb = self.nodes[b].value.cols();
                let rows = g.rows();
                let mut ga = Matrix::zeros(rows, ca);
                let mut gb = Matrix::zeros(rows, cb);
                for i in 0..rows {
                    let gr = g.row(i);
                    ga.row_mut(i).copy_from_slice(&gr[..ca]);
                    gb.row_mut(i).copy_from_slice(&gr[ca..]);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::CrossEntropy {
                logits,
                target,
                probs,
            } => {
                let scale = g.as_slice()[0];
                let mut ga = Matrix::row_vector(&probs);
                ga.as_mut_slice()[target] -= 1.0;
                ga.scale_assign(scale);
                self.accumulate(logits, ga);
            }
            Op::Mse(a, b) => {
                let diff = self.nodes[a]
                    .value
                    .zip_map(&self.nodes[b].value, "mse", |x, y| x - y)
                    .expect("shape checked in forward");
                let n = diff.len().max(1) as f64;
                let ga = diff.map(|d| 2.0 * d * g.as_slice()[0] / n);
                let gb = ga.map(|x| -x);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::GatherRows { table, ids } => {
                let (r, c) = self.nodes[table].value.shape();
                let mut gt = Matrix::zeros(r, c);
                for (i, &id) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                self.accumulate(table, gt);
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = libm::exp(*x - max);
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
