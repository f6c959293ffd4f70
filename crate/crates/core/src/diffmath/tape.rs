//! Reverse-mode differentiation over an explicit tape.
//!
//! Every primitive appends one node holding its value and the handles of its
//! inputs. Nodes are appended in evaluation order, so the tape is already a
//! topological order and [`Tape::backward`] replays it back to front.

use alloc::vec;
use alloc::vec::Vec;

use super::array::{Array2, check_conv_sizes, same_padding, softmax_rows};
use crate::error::{Error, Result, contract};
#[allow(unused_imports)]
use num_traits::Float;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which primitive produced a node.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum OpTag {
    Parameter,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    MulCol,
    Scale,
    AddScalar,
    Transpose,
    Relu,
    Tanh,
    Exp,
    Powf,
    Square,
    Sum,
    Mean,
    RowSums,
    MeanRows,
    SoftmaxRows,
    ConcatCols,
    ConcatRows,
    Conv1d,
}

#[derive(Clone, Debug)]
enum Op {
    Parameter,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Powf(Var, f64),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSums(Var),
    MeanRows(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Conv1d {
        input: Var,
        kernels: Var,
        bias: Var,
        taps: usize,
    },
}

impl Op {
    fn tag(&self) -> OpTag {
        match self {
            Op::Parameter => OpTag::Parameter,
            Op::Constant => OpTag::Constant,
            Op::MatMul(..) => OpTag::MatMul,
            Op::Add(..) => OpTag::Add,
            Op::Sub(..) => OpTag::Sub,
            Op::Mul(..) => OpTag::Mul,
            Op::AddRow(..) => OpTag::AddRow,
            Op::MulCol(..) => OpTag::MulCol,
            Op::Scale(..) => OpTag::Scale,
            Op::AddScalar(..) => OpTag::AddScalar,
            Op::Transpose(..) => OpTag::Transpose,
            Op::Relu(..) => OpTag::Relu,
            Op::Tanh(..) => OpTag::Tanh,
            Op::Exp(..) => OpTag::Exp,
            Op::Powf(..) => OpTag::Powf,
            Op::Square(..) => OpTag::Square,
            Op::Sum(..) => OpTag::Sum,
            Op::Mean(..) => OpTag::Mean,
            Op::RowSums(..) => OpTag::RowSums,
            Op::MeanRows(..) => OpTag::MeanRows,
            Op::SoftmaxRows(..) => OpTag::SoftmaxRows,
            Op::ConcatCols(..) => OpTag::ConcatCols,
            Op::ConcatRows(..) => OpTag::ConcatRows,
            Op::Conv1d { .. } => OpTag::Conv1d,
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Parameter | Op::Constant => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Powf(a, _)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSums(a)
            | Op::MeanRows(a)
            | Op::SoftmaxRows(a) => vec![*a],
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.clone(),
            Op::Conv1d {
                input,
                kernels,
                bias,
                ..
            } => vec![*input, *kernels, *bias],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Array2,
    op: Op,
    requires_grad: bool,
}

/// A read-only view of one recorded node.
#[derive(Debug)]
pub struct DiffNode<'a> {
    pub value: &'a Array2,
    pub tag: OpTag,
    pub parents: Vec<Var>,
}

/// Computation graph recorded during a forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Array2> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a trainable leaf.
    pub fn parameter(&mut self, value: Array2) -> Var {
        self.push_raw(value, Op::Parameter, true)
    }

    /// Registers a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, var: Var) -> &Array2 {
        &self.nodes[var.0].value
    }

    pub fn node(&self, var: Var) -> DiffNode<'_> {
        let n = &self.nodes[var.0];
        DiffNode {
            value: &n.value,
            tag: n.op.tag(),
            parents: n.op.parents(),
        }
    }

    /// Number of recorded nodes of the given kind.
    pub fn count(&self, tag: OpTag) -> usize {
        self.nodes.iter().filter(|n| n.op.tag() == tag).count()
    }

    fn push_raw(&mut self, value: Array2, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Array2, op: Op) -> Var {
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.shape(row) != (1, c) {
            return Err(Error::Dimension {
                op: "add_row",
                left: (r, c),
                right: self.shape(row),
            });
        }
        let rv = self.value(row).data();
        let value = Array2::from_fn(r, c, |i, j| self.value(m).get(i, j) + rv[j]);
        Ok(self.push(value, Op::AddRow(m, row)))
    }

    /// Scales row `i` of an `r×c` matrix by entry `i` of an `r×1` column.
    pub fn mul_col(&mut self, m: Var, col: Var) -> Result<Var> {
        let (r, c) = self.shape(m);
        if self.shape(col) != (r, 1) {
            return Err(Error::Dimension {
                op: "mul_col",
                left: (r, c),
                right: self.shape(col),
            });
        }
        let cv = self.value(col).data();
        let value = Array2::from_fn(r, c, |i, j| self.value(m).get(i, j) * cv[i]);
        Ok(self.push(value, Op::MulCol(m, col)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::AddScalar(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(Float::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(Float::exp);
        self.push(value, Op::Exp(a))
    }

    /// Elementwise `x^p`.
    pub fn powf(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|x| x.powf(p));
        self.push(value, Op::Powf(a, p))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        self.push(value, Op::Square(a))
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::scalar(v.sum() / v.len().max(1) as f64);
        self.push(value, Op::Mean(a))
    }

    /// `r×c → r×1` row sums.
    pub fn row_sums(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Array2::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum());
        self.push(value, Op::RowSums(a))
    }

    /// `r×c → 1×c` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let r = v.rows().max(1) as f64;
        let value = Array2::from_fn(1, v.cols(), |_, j| {
            (0..v.rows()).map(|i| v.get(i, j)).sum::<f64>() / r
        });
        self.push(value, Op::MeanRows(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(contract("concat_cols of zero parts"));
        };
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: s,
                });
            }
            cols += s.1;
        }
        let mut value = Array2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            for i in 0..rows {
                for j in 0..v.cols() {
                    value.set(i, offset + j, v.get(i, j));
                }
            }
            offset += v.cols();
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(contract("concat_rows of zero parts"));
        };
        let cols = self.shape(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.cols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: v.shape(),
                });
            }
            data.extend_from_slice(v.data());
            rows += v.rows();
        }
        let value = Array2::from_vec(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec())))
    }

    /// Multi-channel "same" cross-correlation.
    ///
    /// `input` is `C×T` (one channel per row), `kernels` is `F×(C·taps)` with
    /// filter `f`, channel `c`, tap `m` at column `c·taps + m`, and `bias` is
    /// `1×F`. The result is `T×F`.
    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, taps: usize) -> Result<Var> {
        let (channels, len) = self.shape(input);
        check_conv_sizes(len, taps)?;
        let (filters, width) = self.shape(kernels);
        if width != channels * taps {
            return Err(Error::Dimension {
                op: "conv1d",
                left: (channels, len),
                right: (filters, width),
            });
        }
        if self.shape(bias) != (1, filters) {
            return Err(Error::Dimension {
                op: "conv1d bias",
                left: (filters, width),
                right: self.shape(bias),
            });
        }
        let x = self.value(input);
        let w = self.value(kernels);
        let b = self.value(bias);
        let (lead, _) = same_padding(taps);
        let mut value = Array2::zeros(len, filters);
        for j in 0..len {
            for f in 0..filters {
                let wf = w.row(f);
                let mut acc = b.get(0, f);
                for c in 0..channels {
                    let xc = x.row(c);
                    for m in 0..taps {
                        if let Some(&xv) = (j + m).checked_sub(lead).and_then(|p| xc.get(p)) {
                            acc += wf[c * taps + m] * xv;
                        }
                    }
                }
                value.set(j, f, acc);
            }
        }
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernels,
                bias,
                taps,
            },
        ))
    }

    /// Reverse pass from a 1×1 `loss`.
    ///
    /// Gradients of leaves used more than once are summed. Accumulation
    /// follows the reverse tape order, so repeated calls are bit-identical.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(contract(alloc::format!(
                "backward needs a scalar loss, got shape {shape:?}"
            )));
        }
        let mut grads: Vec<Option<Array2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2>], target: Var, contribution: Array2) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut grads[target.0] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Array2, grads: &mut [Option<Array2>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        match &node.op {
            Op::Parameter | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let d = zip(g, self.value(*b), |x, y| x * y);
                    self.accumulate(grads, *a, d);
                }
                if self.wants(*b) {
                    let d = zip(g, self.value(*a), |x, y| x * y);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddRow(m, row) => {
                self.accumulate(grads, *m, g.clone());
                if self.wants(*row) {
                    let d = Array2::from_fn(1, g.cols(), |_, j| {
                        (0..g.rows()).map(|i| g.get(i, j)).sum()
                    });
                    self.accumulate(grads, *row, d);
                }
            }
            Op::MulCol(m, col) => {
                let cv = self.value(*col);
                if self.wants(*m) {
                    let d = Array2::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * cv.get(i, 0));
                    self.accumulate(grads, *m, d);
                }
                if self.wants(*col) {
                    let mv = self.value(*m);
                    let d = Array2::from_fn(g.rows(), 1, |i, _| {
                        g.row(i).iter().zip(mv.row(i)).map(|(a, b)| a * b).sum()
                    });
                    self.accumulate(grads, *col, d);
                }
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Relu(a) => {
                let d = zip(g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = zip(g, out, |x, y| x * (1.0 - y * y));
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = zip(g, out, |x, y| x * y);
                self.accumulate(grads, *a, d);
            }
            Op::Powf(a, p) => {
                let p = *p;
                let d = zip(g, self.value(*a), |x, y| x * p * y.powf(p - 1.0));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => {
                let d = zip(g, self.value(*a), |x, y| 2.0 * x * y);
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Array2::filled(r, c, g.get(0, 0)));
            }
            Op::Mean(a) => {
                let (r, c) = self.shape(*a);
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *a, Array2::filled(r, c, g.get(0, 0) / n));
            }
            Op::RowSums(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Array2::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::MeanRows(a) => {
                let (r, c) = self.shape(*a);
                let n = r.max(1) as f64;
                self.accumulate(grads, *a, Array2::from_fn(r, c, |_, j| g.get(0, j) / n));
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = out.shape();
                let mut d = Array2::zeros(r, c);
                for i in 0..r {
                    let y = out.row(i);
                    let gi = g.row(i);
                    let dot: f64 = y.iter().zip(gi).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d.set(i, j, y[j] * (gi[j] - dot));
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.wants(p) {
                        let d = Array2::from_fn(r, c, |i, j| g.get(i, offset + j));
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    if self.wants(p) {
                        let d = Array2::from_fn(r, c, |i, j| g.get(offset + i, j));
                        self.accumulate(grads, p, d);
                    }
                    offset += r;
                }
            }
            Op::Conv1d {
                input,
                kernels,
                bias,
                taps,
            } => {
                let taps = *taps;
                let x = self.value(*input);
                let w = self.value(*kernels);
                let (channels, len) = x.shape();
                let filters = w.rows();
                let (lead, _) = same_padding(taps);
                let mut dx = Array2::zeros(channels, len);
                let mut dw = Array2::zeros(filters, channels * taps);
                for j in 0..len {
                    for f in 0..filters {
                        let gj = g.get(j, f);
                        if gj == 0.0 {
                            continue;
                        }
                        for c in 0..channels {
                            for m in 0..taps {
                                if let Some(p) = (j + m).checked_sub(lead).filter(|&p| p < len) {
                                    let col = c * taps + m;
                                    dw.set(f, col, dw.get(f, col) + gj * x.get(c, p));
                                    dx.set(c, p, dx.get(c, p) + gj * w.get(f, col));
                                }
                            }
                        }
                    }
                }
                if self.wants(*input) {
                    self.accumulate(grads, *input, dx);
                }
                if self.wants(*kernels) {
                    self.accumulate(grads, *kernels, dw);
                }
                if self.wants(*bias) {
                    let db =
                        Array2::from_fn(1, filters, |_, f| (0..len).map(|j| g.get(j, f)).sum());
                    self.accumulate(grads, *bias, db);
                }
            }
        }
    }
}

fn zip(a: &Array2, b: &Array2, f: impl Fn(f64, f64) -> f64) -> Array2 {
    Array2::from_fn(a.rows(), a.cols(), |i, j| f(a.get(i, j), b.get(i, j)))
}
