//! Reverse-mode automatic differentiation over dense 2-D tensors.
//!
//! The engine records every operation of a forward pass onto a [`Tape`] in
//! topological order (an operation's inputs are always created strictly
//! earlier). [`Tape::backward`] replays the recording in reverse, accumulating
//! vector-Jacobian products into the gradient of every tensor that requires
//! one. Gradient accumulation is additive: running backward twice without a
//! reset yields exactly twice the gradients, and callers reset (or simply use
//! a fresh tape) between optimization steps.
//!
//! A tape and its tensors are confined to one thread for a forward/backward
//! pair. Frozen values read out of the tape are plain [`Matrix`] data and may
//! be shared freely.

use std::cell::RefCell;
use std::fmt;

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: dimension mismatch ({detail})")]
    DimMismatch { op: &'static str, detail: String },
    #[error("masked softmax: row {row} has no unmasked entries")]
    EmptyNeighborhood { row: usize },
    #[error("backward requires a 1x1 loss, got {rows}x{cols}")]
    NonScalarLoss { rows: usize, cols: usize },
    #[error("tensor '{name}' contains a non-finite value")]
    NonFinite { name: String },
}

type Result<T> = std::result::Result<T, TensorError>;

/// Boolean mask with the same layout as the tensor it gates.
#[derive(Clone, Debug)]
pub struct Mask {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(rows: usize, cols: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), rows * cols, "mask buffer length");
        Mask { rows, cols, data }
    }

    pub fn all_true(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, data: vec![true; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mask { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    MulElem(usize, usize),
    Scale(usize, f64),
    /// Multiply every entry of `x` by the single entry of scalar tensor `s`.
    ScaleByVar { x: usize, s: usize },
    /// Add a 1 x n bias row to every row of an m x n tensor.
    AddBiasRow { x: usize, bias: usize },
    LeakyRelu { x: usize, slope: f64 },
    Elu(usize),
    Tanh(usize),
    MaskedSoftmax { x: usize, mask: Mask },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { x: usize, indices: Vec<usize> },
    RowMean(usize),
    WeightedRowSum { x: usize, weights: Vec<f64> },
    SumAll(usize),
    MeanAll(usize),
    LogSumExp(usize),
    SliceCols { x: usize, start: usize, len: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::MulElem(..) => "mul_elem",
            Op::Scale(..) => "scale",
            Op::ScaleByVar { .. } => "scale_by_var",
            Op::AddBiasRow { .. } => "add_bias_row",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Elu(..) => "elu",
            Op::Tanh(..) => "tanh",
            Op::MaskedSoftmax { .. } => "masked_softmax",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::GatherRows { .. } => "gather_rows",
            Op::RowMean(..) => "row_mean",
            Op::WeightedRowSum { .. } => "weighted_row_sum",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::LogSumExp(..) => "log_sum_exp",
            Op::SliceCols { .. } => "slice_cols",
        }
    }
}

struct Node {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op,
    label: Option<String>,
}

/// Recording tape. Owns every tensor created during a forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tensor on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (r, c) = self.shape();
        write!(f, "Var#{} [{}x{}]", self.id, r, c)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Matrix, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node { value, grad: None, requires_grad, op, label: None });
        Var { tape: self, id }
    }

    /// Constant input: participates in forward math, receives no gradient.
    pub fn constant(&self, value: Matrix) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    /// Learnable input: gradient is accumulated by [`Tape::backward`].
    pub fn param(&self, value: Matrix, label: impl Into<String>) -> Var<'_> {
        let var = self.push(value, true, Op::Leaf);
        self.nodes.borrow_mut()[var.id].label = Some(label.into());
        var
    }

    /// Identifier and label of the earliest tensor holding NaN or +-inf,
    /// if any. Used to produce the diagnostic for numeric aborts.
    pub fn first_non_finite(&self) -> Option<String> {
        let nodes = self.nodes.borrow();
        nodes.iter().enumerate().find(|(_, n)| !n.value.is_finite()).map(|(id, n)| {
            match &n.label {
                Some(l) => format!("{l} (#{id})"),
                None => format!("{} (#{id})", n.op.name()),
            }
        })
    }

    /// Clears all accumulated gradients.
    pub fn zero_grads(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Reverse sweep from a scalar loss. Accumulates dLoss/dTensor into the
    /// gradient of every tensor that requires one; tensors requiring a
    /// gradient but unreachable from the loss end up with zeros.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        assert!(std::ptr::eq(loss.tape, self), "loss belongs to a different tape");
        let mut nodes = self.nodes.borrow_mut();
        let (rows, cols) = nodes[loss.id].value.shape();
        if (rows, cols) != (1, 1) {
            return Err(TensorError::NonScalarLoss { rows, cols });
        }

        let mut adjoint: Vec<Option<Matrix>> = (0..nodes.len()).map(|_| None).collect();
        adjoint[loss.id] = Some(Matrix::filled(1, 1, 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = adjoint[id].take() else { continue };
            propagate(&nodes, id, &g, &mut adjoint);
            let node = &mut nodes[id];
            if node.requires_grad {
                match &mut node.grad {
                    Some(existing) => existing.add_assign(&g),
                    None => node.grad = Some(g),
                }
            }
        }

        // Unreachable but gradient-requiring tensors get explicit zeros.
        for node in nodes.iter_mut() {
            if node.requires_grad && node.grad.is_none() {
                let (r, c) = node.value.shape();
                node.grad = Some(Matrix::zeros(r, c));
            }
        }
        Ok(())
    }
}

/// Adds `g` into `adjoint[id]`, allocating on first touch.
fn accumulate(adjoint: &mut [Option<Matrix>], id: usize, g: Matrix) {
    match &mut adjoint[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Matrix, adjoint: &mut [Option<Matrix>]) {
    let needs = |i: usize| nodes[i].requires_grad;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            if needs(*a) {
                accumulate(adjoint, *a, g.matmul(&nodes[*b].value.transposed()));
            }
            if needs(*b) {
                accumulate(adjoint, *b, nodes[*a].value.transposed().matmul(g));
            }
        }
        Op::Transpose(x) => {
            if needs(*x) {
                accumulate(adjoint, *x, g.transposed());
            }
        }
        Op::Add(a, b) => {
            if needs(*a) {
                accumulate(adjoint, *a, g.clone());
            }
            if needs(*b) {
                accumulate(adjoint, *b, g.clone());
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(adjoint, *a, g.clone());
            }
            if needs(*b) {
                accumulate(adjoint, *b, g.scaled(-1.0));
            }
        }
        Op::MulElem(a, b) => {
            if needs(*a) {
                let mut d = g.clone();
                for (v, w) in d.data_mut().iter_mut().zip(nodes[*b].value.data()) {
                    *v *= w;
                }
                accumulate(adjoint, *a, d);
            }
            if needs(*b) {
                let mut d = g.clone();
                for (v, w) in d.data_mut().iter_mut().zip(nodes[*a].value.data()) {
                    *v *= w;
                }
                accumulate(adjoint, *b, d);
            }
        }
        Op::Scale(x, factor) => {
            if needs(*x) {
                accumulate(adjoint, *x, g.scaled(*factor));
            }
        }
        Op::ScaleByVar { x, s } => {
            let scale = nodes[*s].value.scalar();
            if needs(*x) {
                accumulate(adjoint, *x, g.scaled(scale));
            }
            if needs(*s) {
                let dot: f64 =
                    g.data().iter().zip(nodes[*x].value.data()).map(|(a, b)| a * b).sum();
                accumulate(adjoint, *s, Matrix::filled(1, 1, dot));
            }
        }
        Op::AddBiasRow { x, bias } => {
            if needs(*x) {
                accumulate(adjoint, *x, g.clone());
            }
            if needs(*bias) {
                let mut d = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        d.set(0, j, d.get(0, j) + g.get(i, j));
                    }
                }
                accumulate(adjoint, *bias, d);
            }
        }
        Op::LeakyRelu { x, slope } => {
            if needs(*x) {
                let mut d = g.clone();
                for (v, inp) in d.data_mut().iter_mut().zip(nodes[*x].value.data()) {
                    if *inp < 0.0 {
                        *v *= slope;
                    }
                }
                accumulate(adjoint, *x, d);
            }
        }
        Op::Elu(x) => {
            if needs(*x) {
                // d/dx elu(x) = 1 for x > 0, exp(x) = elu(x) + 1 otherwise.
                let mut d = g.clone();
                for (v, out) in d.data_mut().iter_mut().zip(nodes[id].value.data()) {
                    if *out < 0.0 {
                        *v *= out + 1.0;
                    }
                }
                accumulate(adjoint, *x, d);
            }
        }
        Op::Tanh(x) => {
            if needs(*x) {
                let mut d = g.clone();
                for (v, out) in d.data_mut().iter_mut().zip(nodes[id].value.data()) {
                    *v *= 1.0 - out * out;
                }
                accumulate(adjoint, *x, d);
            }
        }
        Op::MaskedSoftmax { x, mask } => {
            if needs(*x) {
                let out = &nodes[id].value;
                let (rows, cols) = out.shape();
                let mut d = Matrix::zeros(rows, cols);
                for i in 0..rows {
                    let mut dot = 0.0;
                    for j in 0..cols {
                        if mask.get(i, j) {
                            dot += g.get(i, j) * out.get(i, j);
                        }
                    }
                    for j in 0..cols {
                        if mask.get(i, j) {
                            d.set(i, j, out.get(i, j) * (g.get(i, j) - dot));
                        }
                    }
                }
                accumulate(adjoint, *x, d);
            }
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (r, c) = nodes[p].value.shape();
                if needs(p) {
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            d.set(i, j, g.get(i, offset + j));
                        }
                    }
                    accumulate(adjoint, p, d);
                }
                offset += c;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let (r, c) = nodes[p].value.shape();
                if needs(p) {
                    let mut d = Matrix::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            d.set(i, j, g.get(offset + i, j));
                        }
                    }
                    accumulate(adjoint, p, d);
                }
                offset += r;
            }
        }
        Op::GatherRows { x, indices } => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                let mut d = Matrix::zeros(r, c);
                for (out_row, &src_row) in indices.iter().enumerate() {
                    for j in 0..c {
                        d.set(src_row, j, d.get(src_row, j) + g.get(out_row, j));
                    }
                }
                accumulate(adjoint, *x, d);
            }
        }
        Op::RowMean(x) => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                let inv = 1.0 / r as f64;
                let d = Matrix::from_fn(r, c, |_, j| g.get(0, j) * inv);
                accumulate(adjoint, *x, d);
            }
        }
        Op::WeightedRowSum { x, weights } => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                let d = Matrix::from_fn(r, c, |i, j| g.get(0, j) * weights[i]);
                accumulate(adjoint, *x, d);
            }
        }
        Op::SumAll(x) => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                accumulate(adjoint, *x, Matrix::filled(r, c, g.scalar()));
            }
        }
        Op::MeanAll(x) => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                accumulate(adjoint, *x, Matrix::filled(r, c, g.scalar() / (r * c) as f64));
            }
        }
        Op::LogSumExp(x) => {
            if needs(*x) {
                let input = &nodes[*x].value;
                let max = input.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = input.data().iter().map(|v| (v - max).exp()).sum();
                let d = input.map(|v| (v - max).exp() / sum * g.scalar());
                accumulate(adjoint, *x, d);
            }
        }
        Op::SliceCols { x, start, len } => {
            if needs(*x) {
                let (r, c) = nodes[*x].value.shape();
                let mut d = Matrix::zeros(r, c);
                for i in 0..r {
                    for j in 0..*len {
                        d.set(i, start + j, g.get(i, j));
                    }
                }
                accumulate(adjoint, *x, d);
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Clones the current value out of the tape.
    pub fn value(&self) -> Matrix {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Reads the value in place without cloning.
    pub fn with_value<R>(&self, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    /// Accumulated gradient, if backward has touched this tensor.
    pub fn grad(&self) -> Option<Matrix> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(&self, value: Matrix, op: Op) -> Var<'t> {
        let requires = self.requires_grad();
        self.tape.push(value, requires, op)
    }

    fn binary(&self, other: Var<'t>, value: Matrix, op: Op) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
        let requires = self.requires_grad() || other.requires_grad();
        self.tape.push(value, requires, op)
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        let ((m, k1), (k2, n)) = (self.shape(), rhs.shape());
        if k1 != k2 {
            return Err(TensorError::DimMismatch {
                op: "matmul",
                detail: format!("{m}x{k1} * {k2}x{n}"),
            });
        }
        let value = self.with_value(|a| rhs.with_value(|b| a.matmul(b)));
        Ok(self.binary(rhs, value, Op::Matmul(self.id, rhs.id)))
    }

    pub fn transpose(&self) -> Var<'t> {
        let value = self.with_value(|a| a.transposed());
        self.unary(value, Op::Transpose(self.id))
    }

    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::DimMismatch {
                op: "add",
                detail: format!("{:?} + {:?}", self.shape(), rhs.shape()),
            });
        }
        let value = self.with_value(|a| {
            rhs.with_value(|b| {
                let mut out = a.clone();
                out.add_assign(b);
                out
            })
        });
        Ok(self.binary(rhs, value, Op::Add(self.id, rhs.id)))
    }

    pub fn sub(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::DimMismatch {
                op: "sub",
                detail: format!("{:?} - {:?}", self.shape(), rhs.shape()),
            });
        }
        let value = self.with_value(|a| {
            rhs.with_value(|b| {
                let mut out = a.clone();
                for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
                    *x -= y;
                }
                out
            })
        });
        Ok(self.binary(rhs, value, Op::Sub(self.id, rhs.id)))
    }

    pub fn mul_elem(&self, rhs: Var<'t>) -> Result<Var<'t>> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::DimMismatch {
                op: "mul_elem",
                detail: format!("{:?} * {:?}", self.shape(), rhs.shape()),
            });
        }
        let value = self.with_value(|a| {
            rhs.with_value(|b| {
                let mut out = a.clone();
                for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
                    *x *= y;
                }
                out
            })
        });
        Ok(self.binary(rhs, value, Op::MulElem(self.id, rhs.id)))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let value = self.with_value(|a| a.scaled(factor));
        self.unary(value, Op::Scale(self.id, factor))
    }

    /// Scales by a 1x1 tensor, differentiating through both operands.
    pub fn scale_by(&self, s: Var<'t>) -> Result<Var<'t>> {
        if s.shape() != (1, 1) {
            return Err(TensorError::DimMismatch {
                op: "scale_by_var",
                detail: format!("scale operand must be 1x1, got {:?}", s.shape()),
            });
        }
        let factor = s.with_value(|m| m.scalar());
        let value = self.with_value(|a| a.scaled(factor));
        Ok(self.binary(s, value, Op::ScaleByVar { x: self.id, s: s.id }))
    }

    /// Adds a 1 x n bias row to each row of an m x n tensor.
    pub fn add_bias_row(&self, bias: Var<'t>) -> Result<Var<'t>> {
        let ((m, n), (br, bc)) = (self.shape(), bias.shape());
        if br != 1 || bc != n {
            return Err(TensorError::DimMismatch {
                op: "add_bias_row",
                detail: format!("{m}x{n} + bias {br}x{bc}"),
            });
        }
        let value = self.with_value(|a| {
            bias.with_value(|b| Matrix::from_fn(m, n, |i, j| a.get(i, j) + b.get(0, j)))
        });
        Ok(self.binary(bias, value, Op::AddBiasRow { x: self.id, bias: bias.id }))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        let value = self.with_value(|a| a.map(|v| if v >= 0.0 { v } else { slope * v }));
        self.unary(value, Op::LeakyRelu { x: self.id, slope })
    }

    pub fn elu(&self) -> Var<'t> {
        let value = self.with_value(|a| a.map(|v| if v >= 0.0 { v } else { v.exp() - 1.0 }));
        self.unary(value, Op::Elu(self.id))
    }

    pub fn tanh(&self) -> Var<'t> {
        let value = self.with_value(|a| a.map(f64::tanh));
        self.unary(value, Op::Tanh(self.id))
    }

    /// Row-wise exp-normalization over the unmasked entries of each row.
    /// Masked-out positions are exactly zero in the output; each row's
    /// unmasked entries sum to one. Numerically stabilized by subtracting
    /// the row maximum before exponentiation.
    pub fn masked_softmax(&self, mask: &Mask) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if mask.shape() != (rows, cols) {
            return Err(TensorError::DimMismatch {
                op: "masked_softmax",
                detail: format!("logits {rows}x{cols}, mask {:?}", mask.shape()),
            });
        }
        let value = self.with_value(|a| -> Result<Matrix> {
            let mut out = Matrix::zeros(rows, cols);
            for i in 0..rows {
                let mut row_max = f64::NEG_INFINITY;
                let mut unmasked = 0usize;
                for j in 0..cols {
                    if mask.get(i, j) {
                        row_max = row_max.max(a.get(i, j));
                        unmasked += 1;
                    }
                }
                if unmasked == 0 {
                    return Err(TensorError::EmptyNeighborhood { row: i });
                }
                if row_max == f64::NEG_INFINITY {
                    // All unmasked entries are NaN; let it propagate so the
                    // non-finite diagnostics can name the culprit tensor.
                    row_max = 0.0;
                }
                let mut sum = 0.0;
                for j in 0..cols {
                    if mask.get(i, j) {
                        let e = (a.get(i, j) - row_max).exp();
                        out.set(i, j, e);
                        sum += e;
                    }
                }
                for j in 0..cols {
                    if mask.get(i, j) {
                        out.set(i, j, out.get(i, j) / sum);
                    }
                }
            }
            Ok(out)
        })?;
        Ok(self.unary(value, Op::MaskedSoftmax { x: self.id, mask: mask.clone() }))
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>> {
        assert!(!parts.is_empty(), "concat_cols of zero tensors");
        let tape = parts[0].tape;
        let rows = parts[0].shape().0;
        let mut cols = 0;
        for p in parts {
            if p.shape().0 != rows {
                return Err(TensorError::DimMismatch {
                    op: "concat_cols",
                    detail: format!("row counts {:?} vs {:?}", parts[0].shape(), p.shape()),
                });
            }
            cols += p.shape().1;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            p.with_value(|m| {
                for i in 0..rows {
                    for j in 0..m.cols() {
                        value.set(i, offset + j, m.get(i, j));
                    }
                }
                offset += m.cols();
            });
        }
        let requires = parts.iter().any(|p| p.requires_grad());
        Ok(tape.push(value, requires, Op::ConcatCols(parts.iter().map(|p| p.id).collect())))
    }

    pub fn concat_rows(parts: &[Var<'t>]) -> Result<Var<'t>> {
        assert!(!parts.is_empty(), "concat_rows of zero tensors");
        let tape = parts[0].tape;
        let cols = parts[0].shape().1;
        let mut rows = 0;
        for p in parts {
            if p.shape().1 != cols {
                return Err(TensorError::DimMismatch {
                    op: "concat_rows",
                    detail: format!("col counts {:?} vs {:?}", parts[0].shape(), p.shape()),
                });
            }
            rows += p.shape().0;
        }
        let mut value = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for p in parts {
            p.with_value(|m| {
                for i in 0..m.rows() {
                    for j in 0..cols {
                        value.set(offset + i, j, m.get(i, j));
                    }
                }
                offset += m.rows();
            });
        }
        let requires = parts.iter().any(|p| p.requires_grad());
        Ok(tape.push(value, requires, Op::ConcatRows(parts.iter().map(|p| p.id).collect())))
    }

    /// Selects rows by index; indices may repeat (backward scatter-adds).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(TensorError::DimMismatch {
                op: "gather_rows",
                detail: format!("row index {bad} out of range for {rows} rows"),
            });
        }
        let value = self.with_value(|a| {
            Matrix::from_fn(indices.len(), cols, |i, j| a.get(indices[i], j))
        });
        Ok(self.unary(value, Op::GatherRows { x: self.id, indices: indices.to_vec() }))
    }

    /// Column-wise mean across rows: m x n -> 1 x n.
    pub fn row_mean(&self) -> Var<'t> {
        let (rows, cols) = self.shape();
        let value = self.with_value(|a| {
            Matrix::from_fn(1, cols, |_, j| {
                (0..rows).map(|i| a.get(i, j)).sum::<f64>() / rows as f64
            })
        });
        self.unary(value, Op::RowMean(self.id))
    }

    /// Fixed-weight combination of rows: m x n with m weights -> 1 x n.
    /// The weights are data, not differentiated.
    pub fn weighted_row_sum(&self, weights: &[f64]) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if weights.len() != rows {
            return Err(TensorError::DimMismatch {
                op: "weighted_row_sum",
                detail: format!("{} weights for {rows} rows", weights.len()),
            });
        }
        let value = self.with_value(|a| {
            Matrix::from_fn(1, cols, |_, j| {
                (0..rows).map(|i| weights[i] * a.get(i, j)).sum::<f64>()
            })
        });
        Ok(self.unary(value, Op::WeightedRowSum { x: self.id, weights: weights.to_vec() }))
    }

    pub fn sum_all(&self) -> Var<'t> {
        let value = self.with_value(|a| Matrix::filled(1, 1, a.data().iter().sum()));
        self.unary(value, Op::SumAll(self.id))
    }

    pub fn mean_all(&self) -> Var<'t> {
        let value = self.with_value(|a| {
            Matrix::filled(1, 1, a.data().iter().sum::<f64>() / a.data().len() as f64)
        });
        self.unary(value, Op::MeanAll(self.id))
    }

    /// Stable log(sum(exp(x))) of a 1 x n tensor.
    pub fn log_sum_exp(&self) -> Result<Var<'t>> {
        let (rows, _) = self.shape();
        if rows != 1 {
            return Err(TensorError::DimMismatch {
                op: "log_sum_exp",
                detail: format!("expected a row vector, got {:?}", self.shape()),
            });
        }
        let value = self.with_value(|a| {
            let max = a.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = a.data().iter().map(|v| (v - max).exp()).sum();
            Matrix::filled(1, 1, max + sum.ln())
        });
        Ok(self.unary(value, Op::LogSumExp(self.id)))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let (rows, cols) = self.shape();
        if start + len > cols {
            return Err(TensorError::DimMismatch {
                op: "slice_cols",
                detail: format!("slice {start}..{} of {cols} columns", start + len),
            });
        }
        let value =
            self.with_value(|a| Matrix::from_fn(rows, len, |i, j| a.get(i, start + j)));
        Ok(self.unary(value, Op::SliceCols { x: self.id, start, len }))
    }
}
