//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every primitive called on a [`Tape`] evaluates eagerly and appends a node
//! holding its output. [`Tape::backward`] walks the nodes in reverse and
//! accumulates vector-Jacobian products. A tape is meant to live for one
//! forward pass and is dropped afterwards.
//!
//! Broadcasting is limited to the right-hand operand of the binary
//! elementwise ops: a `1 × c` row vector spread across rows, an `r × 1`
//! column vector spread across columns, or a single element.

use super::params::{ParamGrads, ParamId, ParamStore};
use super::Tensor;
use crate::error::{MmclError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a primitive in the catalog.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Constant,
    Param,
    MatMul,
    Transpose,
    Add,
    Sub,
    Mul,
    Div,
    ScalarMul,
    AddScalar,
    Concat,
    Slice,
    RowNorm,
    RowUnit,
    RowNormalizeSum,
    Softmax,
    LogSoftmax,
    Sigmoid,
    Relu,
    Exp,
    Ln,
    Abs,
    Square,
    Mean,
    Sum,
    SumAll,
    MeanAll,
    Minimum,
    Maximum,
    Clamp,
    Reshape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Col,
    Scalar,
}

/// Axis argument for reductions, concatenation and softmax.
///
/// `Rows` runs down the rows (axis 0, e.g. pooling over time), `Cols`
/// runs along each row (axis 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    ScalarMul(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    RowNorm(Var),
    RowUnit(Var),
    RowNormalizeSum(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    Abs(Var),
    Square(Var),
    Mean(Var, Axis),
    Sum(Var, Axis),
    SumAll(Var),
    MeanAll(Var),
    Minimum(Var, Var),
    Maximum(Var, Var),
    Clamp(Var, f64, f64),
    Reshape(Var),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Constant => OpKind::Constant,
            Op::Param(_) => OpKind::Param,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::Add(..) => OpKind::Add,
            Op::Sub(..) => OpKind::Sub,
            Op::Mul(..) => OpKind::Mul,
            Op::Div(..) => OpKind::Div,
            Op::ScalarMul(..) => OpKind::ScalarMul,
            Op::AddScalar(_) => OpKind::AddScalar,
            Op::Concat(..) => OpKind::Concat,
            Op::Slice(..) => OpKind::Slice,
            Op::RowNorm(_) => OpKind::RowNorm,
            Op::RowUnit(_) => OpKind::RowUnit,
            Op::RowNormalizeSum(_) => OpKind::RowNormalizeSum,
            Op::Softmax(..) => OpKind::Softmax,
            Op::LogSoftmax(..) => OpKind::LogSoftmax,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Relu(_) => OpKind::Relu,
            Op::Exp(_) => OpKind::Exp,
            Op::Ln(_) => OpKind::Ln,
            Op::Abs(_) => OpKind::Abs,
            Op::Square(_) => OpKind::Square,
            Op::Mean(..) => OpKind::Mean,
            Op::Sum(..) => OpKind::Sum,
            Op::SumAll(_) => OpKind::SumAll,
            Op::MeanAll(_) => OpKind::MeanAll,
            Op::Minimum(..) => OpKind::Minimum,
            Op::Maximum(..) => OpKind::Maximum,
            Op::Clamp(..) => OpKind::Clamp,
            Op::Reshape(_) => OpKind::Reshape,
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Norms below this are treated as zero by the row-normalizing primitives.
pub const NORM_FLOOR: f64 = 1e-12;

/// Records a single forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(MmclError::shape(
            op,
            format!("expected a matrix, got shape {:?}", t.shape()),
        ))
    }
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    if b.len() == 1 {
        return Ok(Bcast::Scalar);
    }
    if a.is_matrix() && b.is_matrix() {
        if b.rows() == 1 && b.cols() == a.cols() {
            return Ok(Bcast::Row);
        }
        if b.cols() == 1 && b.rows() == a.rows() {
            return Ok(Bcast::Col);
        }
    }
    Err(MmclError::shape(
        op,
        format!("cannot combine {:?} with {:?}", a.shape(), b.shape()),
    ))
}

/// Value of `b` at position `idx` of `a`'s layout.
#[inline]
fn bval(b: &Tensor, kind: Bcast, idx: usize, cols: usize) -> f64 {
    match kind {
        Bcast::Same => b.data()[idx],
        Bcast::Scalar => b.data()[0],
        Bcast::Row => b.data()[idx % cols],
        Bcast::Col => b.data()[idx / cols],
    }
}

fn binary(a: &Tensor, b: &Tensor, kind: Bcast, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let cols = a.cols();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, bval(b, kind, i, cols)))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("binary keeps lhs shape")
}

/// Folds a gradient in `a`'s layout back to `b`'s (possibly broadcast) shape.
fn reduce_to(grad: &Tensor, b: &Tensor, kind: Bcast) -> Tensor {
    match kind {
        Bcast::Same => grad.clone(),
        Bcast::Scalar => {
            let mut out = Tensor::zeros(b.shape());
            out.data_mut()[0] = grad.sum();
            out
        }
        Bcast::Row => {
            let cols = grad.cols();
            let mut out = Tensor::zeros(b.shape());
            for (i, &g) in grad.data().iter().enumerate() {
                out.data_mut()[i % cols] += g;
            }
            out
        }
        Bcast::Col => {
            let cols = grad.cols();
            let mut out = Tensor::zeros(b.shape());
            for (i, &g) in grad.data().iter().enumerate() {
                out.data_mut()[i / cols] += g;
            }
            out
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    for i in 0..r {
        let row = &mut out.data_mut()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn row_norms(x: &Tensor) -> Vec<f64> {
    (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Whether gradients can flow back from `v` to some parameter.
    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(op, value, needs_grad)
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Records a trainable leaf bound to `id`.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Var {
        self.push(Op::Param(id), value, true)
    }

    /// A leaf that requires gradients but is not tied to a stored parameter.
    /// Used when differentiating with respect to inputs.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, true)
    }

    /// Copies `v`'s value into a fresh constant, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Records every parameter of `store` and returns the bindings.
    pub fn bind(&mut self, store: &ParamStore) -> Bindings {
        let vars = store
            .iter()
            .map(|(id, p)| self.param(id, p.value.clone()))
            .collect();
        Bindings { vars }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_matrix("matmul", ta)?;
        require_matrix("matmul", tb)?;
        if ta.cols() != tb.rows() {
            return Err(MmclError::shape(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    ta.rows(),
                    ta.cols(),
                    tb.rows(),
                    tb.cols()
                ),
            ));
        }
        let out = ta.matmul(tb);
        Ok(self.push_op(Op::MatMul(a, b), out, &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("transpose", ta)?;
        let out = ta.transpose();
        Ok(self.push_op(Op::Transpose(a), out, &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("add", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), kind, |x, y| x + y);
        Ok(self.push_op(Op::Add(a, b, kind), out, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("sub", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), kind, |x, y| x - y);
        Ok(self.push_op(Op::Sub(a, b, kind), out, &[a, b]))
    }

    /// Elementwise product; `b` may be a row, column or single-element broadcast.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("mul", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), kind, |x, y| x * y);
        Ok(self.push_op(Op::Mul(a, b, kind), out, &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let kind = broadcast_kind("div", self.value(a), self.value(b))?;
        let out = binary(self.value(a), self.value(b), kind, |x, y| x / y);
        Ok(self.push_op(Op::Div(a, b, kind), out, &[a, b]))
    }

    pub fn scalar_mul(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).scale(c);
        self.push_op(Op::ScalarMul(a, c), out, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push_op(Op::AddScalar(a), out, &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scalar_mul(a, -1.0)
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| MmclError::shape("concat", "no inputs"))?;
        for &p in parts {
            require_matrix("concat", self.value(p))?;
        }
        let out = match axis {
            Axis::Cols => {
                let rows = self.value(first).rows();
                if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
                    return Err(MmclError::shape(
                        "concat",
                        format!("row count {} vs {}", self.value(bad).rows(), rows),
                    ));
                }
                let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut data = Vec::with_capacity(rows * total);
                for i in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::matrix(rows, total, data)?
            }
            Axis::Rows => {
                let cols = self.value(first).cols();
                if let Some(&bad) = parts.iter().find(|&&p| self.value(p).cols() != cols) {
                    return Err(MmclError::shape(
                        "concat",
                        format!("column count {} vs {}", self.value(bad).cols(), cols),
                    ));
                }
                let total: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
                let mut data = Vec::with_capacity(total * cols);
                for &p in parts {
                    data.extend_from_slice(self.value(p).data());
                }
                Tensor::matrix(total, cols, data)?
            }
        };
        Ok(self.push_op(Op::Concat(parts.to_vec(), axis), out, parts))
    }

    /// Half-open slice `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("slice", ta)?;
        let limit = match axis {
            Axis::Rows => ta.rows(),
            Axis::Cols => ta.cols(),
        };
        if start > end || end > limit {
            return Err(MmclError::shape(
                "slice",
                format!(
                    "range {}..{} out of bounds for {:?}",
                    start,
                    end,
                    ta.shape()
                ),
            ));
        }
        let out = match axis {
            Axis::Rows => ta.rows_range(start, end),
            Axis::Cols => ta.cols_range(start, end),
        };
        Ok(self.push_op(Op::Slice(a, axis, start), out, &[a]))
    }

    /// Splits along `axis` into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: Axis, sizes: &[usize]) -> Result<Vec<Var>> {
        let total = match axis {
            Axis::Rows => self.value(a).rows(),
            Axis::Cols => self.value(a).cols(),
        };
        if sizes.iter().sum::<usize>() != total {
            return Err(MmclError::shape(
                "split",
                format!("sizes {:?} do not sum to {}", sizes, total),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(a, axis, start, start + s)?);
            start += s;
        }
        Ok(out)
    }

    /// Euclidean norm of each row, as an `r × 1` column.
    pub fn row_l2_norm(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("row_l2_norm", ta)?;
        let out = Tensor::column_vector(&row_norms(ta));
        Ok(self.push_op(Op::RowNorm(a), out, &[a]))
    }

    /// Scales each row to unit length; rows with norm below [`NORM_FLOOR`] become zero.
    pub fn row_unit(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("row_unit", ta)?;
        let norms = row_norms(ta);
        let c = ta.cols();
        let mut out = ta.clone();
        for (i, n) in norms.iter().enumerate() {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            if *n < NORM_FLOOR {
                row.iter_mut().for_each(|v| *v = 0.0);
            } else {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(self.push_op(Op::RowUnit(a), out, &[a]))
    }

    /// Divides each row by its sum. A row whose sum is below [`NORM_FLOOR`]
    /// in magnitude becomes the uniform row `1/c` and passes no gradient.
    pub fn row_normalize_sum(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("row_normalize_sum", ta)?;
        let c = ta.cols();
        let mut out = ta.clone();
        for i in 0..ta.rows() {
            let row = &mut out.data_mut()[i * c..(i + 1) * c];
            // summing in sorted order makes the result independent of column order
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            let s: f64 = sorted.iter().sum();
            if s.abs() < NORM_FLOOR {
                row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            } else {
                row.iter_mut().for_each(|v| *v /= s);
            }
        }
        Ok(self.push_op(Op::RowNormalizeSum(a), out, &[a]))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("softmax", ta)?;
        let out = match axis {
            Axis::Cols => softmax_rows(ta),
            Axis::Rows => softmax_rows(&ta.transpose()).transpose(),
        };
        Ok(self.push_op(Op::Softmax(a, axis), out, &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("log_softmax", ta)?;
        let out = match axis {
            Axis::Cols => log_softmax_rows(ta),
            Axis::Rows => log_softmax_rows(&ta.transpose()).transpose(),
        };
        Ok(self.push_op(Op::LogSoftmax(a, axis), out, &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(Op::Sigmoid(a), out, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(Op::Relu(a), out, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push_op(Op::Exp(a), out, &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push_op(Op::Ln(a), out, &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push_op(Op::Abs(a), out, &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push_op(Op::Square(a), out, &[a])
    }

    /// Mean along `axis`, keeping the reduced dimension as size 1.
    pub fn mean(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("mean", ta)?;
        let n = match axis {
            Axis::Rows => ta.rows(),
            Axis::Cols => ta.cols(),
        };
        if n == 0 {
            return Err(MmclError::shape(
                "mean",
                format!("empty axis in {:?}", ta.shape()),
            ));
        }
        let out = reduce_axis(ta, axis).scale(1.0 / n as f64);
        Ok(self.push_op(Op::Mean(a, axis), out, &[a]))
    }

    pub fn sum(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let ta = self.value(a);
        require_matrix("sum", ta)?;
        let out = reduce_axis(ta, axis);
        Ok(self.push_op(Op::Sum(a, axis), out, &[a]))
    }

    /// Mean over time of an `L × d` sequence, giving `1 × d`.
    pub fn mean_pool_time(&mut self, a: Var) -> Result<Var> {
        self.mean(a, Axis::Rows)
    }

    /// Sum of all entries as a shape-`[]` scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push_op(Op::SumAll(a), out, &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(MmclError::shape("mean_all", "empty tensor"));
        }
        let out = Tensor::scalar(self.value(a).sum() / n as f64);
        Ok(self.push_op(Op::MeanAll(a), out, &[a]))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("minimum", a, b)?;
        let out = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push_op(Op::Minimum(a, b), out, &[a, b]))
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("maximum", a, b)?;
        let out = self.value(a).zip_map(self.value(b), f64::max);
        Ok(self.push_op(Op::Maximum(a, b), out, &[a, b]))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(Op::Clamp(a, lo, hi), out, &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshaped(shape).map_err(|_| {
            MmclError::shape(
                "reshape",
                format!("{:?} into {:?}", self.value(a).shape(), shape),
            )
        })?;
        Ok(self.push_op(Op::Reshape(a), out, &[a]))
    }

    /// `x·W + b` with `b` a `1 × out` row broadcast over the rows of `x`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add(xw, b)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(MmclError::shape(
                op,
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        Ok(())
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(MmclError::NotScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let send = |v: Var, contrib: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    send(*a, g.matmul(&tb.transpose()), grads);
                }
                if self.nodes[b.0].needs_grad {
                    send(*b, ta.transpose().matmul(g), grads);
                }
            }
            Op::Transpose(a) => send(*a, g.transpose(), grads),
            Op::Add(a, b, k) => {
                send(*a, g.clone(), grads);
                send(*b, reduce_to(g, self.value(*b), *k), grads);
            }
            Op::Sub(a, b, k) => {
                send(*a, g.clone(), grads);
                send(*b, reduce_to(&g.scale(-1.0), self.value(*b), *k), grads);
            }
            Op::Mul(a, b, k) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, binary(g, tb, *k, |x, y| x * y), grads);
                if self.nodes[b.0].needs_grad {
                    send(*b, reduce_to(&g.zip_map(ta, |x, y| x * y), tb, *k), grads);
                }
            }
            Op::Div(a, b, k) => {
                let tb = self.value(*b);
                send(*a, binary(g, tb, *k, |x, y| x / y), grads);
                if self.nodes[b.0].needs_grad {
                    let gy = g.zip_map(y, |x, yv| -x * yv);
                    let local = binary(&gy, tb, *k, |x, bv| x / bv);
                    send(*b, reduce_to(&local, tb, *k), grads);
                }
            }
            Op::ScalarMul(a, c) => send(*a, g.scale(*c), grads),
            Op::AddScalar(a) => send(*a, g.clone(), grads),
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = self.value(p);
                    let piece = match axis {
                        Axis::Cols => {
                            let w = tp.cols();
                            let piece = g.cols_range(offset, offset + w);
                            offset += w;
                            piece
                        }
                        Axis::Rows => {
                            let h = tp.rows();
                            let piece = g.rows_range(offset, offset + h);
                            offset += h;
                            piece
                        }
                    };
                    send(p, piece, grads);
                }
            }
            Op::Slice(a, axis, start) => {
                let ta = self.value(*a);
                let mut full = Tensor::zeros(ta.shape());
                let cols = ta.cols();
                match axis {
                    Axis::Rows => {
                        let s = start * cols;
                        full.data_mut()[s..s + g.len()].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        let w = g.cols();
                        for i in 0..g.rows() {
                            full.data_mut()[i * cols + start..i * cols + start + w]
                                .copy_from_slice(g.row(i));
                        }
                    }
                }
                send(*a, full, grads);
            }
            Op::RowNorm(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut out = Tensor::zeros(ta.shape());
                for i in 0..ta.rows() {
                    let n = y.data()[i];
                    if n < NORM_FLOOR {
                        continue;
                    }
                    let gi = g.data()[i];
                    for j in 0..c {
                        out.data_mut()[i * c + j] = gi * ta.data()[i * c + j] / n;
                    }
                }
                send(*a, out, grads);
            }
            Op::RowUnit(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let norms = row_norms(ta);
                let mut out = Tensor::zeros(ta.shape());
                for (i, &n) in norms.iter().enumerate() {
                    if n < NORM_FLOOR {
                        continue;
                    }
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out.data_mut()[i * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                send(*a, out, grads);
            }
            Op::RowNormalizeSum(a) => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut out = Tensor::zeros(ta.shape());
                for i in 0..ta.rows() {
                    let s: f64 = ta.row(i).iter().sum();
                    if s.abs() < NORM_FLOOR {
                        continue;
                    }
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, gj) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(gr) {
                        *o = (gj - dot) / s;
                    }
                }
                send(*a, out, grads);
            }
            Op::Softmax(a, axis) => {
                let local = match axis {
                    Axis::Cols => softmax_vjp_rows(y, g),
                    Axis::Rows => softmax_vjp_rows(&y.transpose(), &g.transpose()).transpose(),
                };
                send(*a, local, grads);
            }
            Op::LogSoftmax(a, axis) => {
                let local = match axis {
                    Axis::Cols => log_softmax_vjp_rows(y, g),
                    Axis::Rows => log_softmax_vjp_rows(&y.transpose(), &g.transpose()).transpose(),
                };
                send(*a, local, grads);
            }
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |gv, s| gv * s * (1.0 - s)), grads),
            Op::Relu(a) => {
                let ta = self.value(*a);
                send(
                    *a,
                    g.zip_map(ta, |gv, x| if x > 0.0 { gv } else { 0.0 }),
                    grads,
                )
            }
            Op::Exp(a) => send(*a, g.zip_map(y, |gv, e| gv * e), grads),
            Op::Ln(a) => send(*a, g.zip_map(self.value(*a), |gv, x| gv / x), grads),
            Op::Abs(a) => send(*a, g.zip_map(self.value(*a), |gv, x| gv * sign(x)), grads),
            Op::Square(a) => send(*a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x), grads),
            Op::Mean(a, axis) | Op::Sum(a, axis) => {
                let ta = self.value(*a);
                let scale = match (&node.op, axis) {
                    (Op::Mean(..), Axis::Rows) => 1.0 / ta.rows() as f64,
                    (Op::Mean(..), Axis::Cols) => 1.0 / ta.cols() as f64,
                    _ => 1.0,
                };
                let c = ta.cols();
                let mut out = Tensor::zeros(ta.shape());
                for (i, v) in out.data_mut().iter_mut().enumerate() {
                    let src = match axis {
                        Axis::Rows => g.data()[i % c],
                        Axis::Cols => g.data()[i / c],
                    };
                    *v = src * scale;
                }
                send(*a, out, grads);
            }
            Op::SumAll(a) => send(*a, Tensor::full(self.value(*a).shape(), g.item()), grads),
            Op::MeanAll(a) => {
                let ta = self.value(*a);
                send(
                    *a,
                    Tensor::full(ta.shape(), g.item() / ta.len() as f64),
                    grads,
                )
            }
            Op::Minimum(a, b) | Op::Maximum(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let pick_a = |x: f64, z: f64| match node.op {
                    Op::Minimum(..) => x <= z,
                    _ => x >= z,
                };
                let mut ga = Tensor::zeros(ta.shape());
                let mut gb = Tensor::zeros(tb.shape());
                for i in 0..ta.len() {
                    if pick_a(ta.data()[i], tb.data()[i]) {
                        ga.data_mut()[i] = g.data()[i];
                    } else {
                        gb.data_mut()[i] = g.data()[i];
                    }
                }
                send(*a, ga, grads);
                send(*b, gb, grads);
            }
            Op::Clamp(a, lo, hi) => {
                let ta = self.value(*a);
                send(
                    *a,
                    g.zip_map(ta, |gv, x| if x >= *lo && x <= *hi { gv } else { 0.0 }),
                    grads,
                )
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                send(
                    *a,
                    g.reshaped(&shape).expect("reshape preserves size"),
                    grads,
                )
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn reduce_axis(t: &Tensor, axis: Axis) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    match axis {
        Axis::Rows => {
            let mut out = vec![0.0; c];
            for i in 0..r {
                for (o, v) in out.iter_mut().zip(t.row(i)) {
                    *o += v;
                }
            }
            Tensor::row_vector(&out)
        }
        Axis::Cols => {
            let out: Vec<f64> = (0..r).map(|i| t.row(i).iter().sum()).collect();
            Tensor::column_vector(&out)
        }
    }
}

fn softmax_vjp_rows(y: &Tensor, g: &Tensor) -> Tensor {
    let c = y.cols();
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), g.row(i));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            out.data_mut()[i * c + j] = yr[j] * (gr[j] - dot);
        }
    }
    out
}

fn log_softmax_vjp_rows(y: &Tensor, g: &Tensor) -> Tensor {
    let c = y.cols();
    let mut out = Tensor::zeros(y.shape());
    for i in 0..y.rows() {
        let (yr, gr) = (y.row(i), g.row(i));
        let total: f64 = gr.iter().sum();
        for j in 0..c {
            out.data_mut()[i * c + j] = gr[j] - yr[j].exp() * total;
        }
    }
    out
}

/// Parameter leaves bound onto a tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for Bindings {
    type Output = Var;
    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or zeros shaped like `v` when `v` was
    /// not reached.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tape.value(v).shape()),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Collects gradients for every parameter leaf on `tape`.
    pub fn params(&self, tape: &Tape) -> ParamGrads {
        let mut out = ParamGrads::new();
        for (idx, node) in tape.nodes.iter().enumerate().take(self.grads.len()) {
            if let Op::Param(id) = node.op {
                if let Some(g) = &self.grads[idx] {
                    out.accumulate(id, g);
                }
            }
        }
        out
    }
}
