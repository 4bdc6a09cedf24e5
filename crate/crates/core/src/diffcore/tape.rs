use std::sync::Arc;

use super::array::gemm;
use super::{Array, DiffError};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise scalar functions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Exp,
    Sin,
    Cos,
    Tanh,
    Sqrt,
    Square,
    Powi(i32),
    Recip,
    Abs,
    Sigmoid,
    Silu,
    /// Smooth step: 1 below `on`, 0 above `off`, half-cosine in between.
    /// With `on = 0` this is the cosine cutoff envelope.
    Switch { on: f64, off: f64 },
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Unary {
    pub fn name(self) -> &'static str {
        match self {
            Unary::Exp => "exp",
            Unary::Sin => "sin",
            Unary::Cos => "cos",
            Unary::Tanh => "tanh",
            Unary::Sqrt => "sqrt",
            Unary::Square => "square",
            Unary::Powi(_) => "powi",
            Unary::Recip => "recip",
            Unary::Abs => "abs",
            Unary::Sigmoid => "sigmoid",
            Unary::Silu => "silu",
            Unary::Switch { .. } => "switch",
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::Tanh => x.tanh(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Powi(n) => x.powi(n),
            Unary::Recip => 1.0 / x,
            Unary::Abs => x.abs(),
            Unary::Sigmoid => sigmoid(x),
            Unary::Silu => x * sigmoid(x),
            Unary::Switch { on, off } => {
                if x <= on {
                    1.0
                } else if x >= off {
                    0.0
                } else {
                    let t = (x - on) / (off - on);
                    0.5 * ((std::f64::consts::PI * t).cos() + 1.0)
                }
            }
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::Tanh => 1.0 - y * y,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Powi(n) => n as f64 * x.powi(n - 1),
            Unary::Recip => -y * y,
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Silu => {
                let s = if x != 0.0 { y / x } else { 0.5 };
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Switch { on, off } => {
                if x <= on || x >= off {
                    0.0
                } else {
                    let w = off - on;
                    let t = (x - on) / w;
                    -0.5 * std::f64::consts::PI / w * (std::f64::consts::PI * t).sin()
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Unary(Var, Unary),
    Matmul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Sum(Var),
    SumSorted(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    Gather {
        x: Var,
        index: Arc<[usize]>,
    },
    SegmentSum {
        x: Var,
        segments: Arc<[usize]>,
    },
    RowNorm(Var),
    RowDot(Var, Var),
    Cross(Var, Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<f64>,
    },
    Rope {
        x: Var,
        angles: Var,
    },
    VecDot {
        axes: Var,
        x: Var,
    },
    VecOuter {
        axes: Var,
        coef: Var,
    },
    ChannelScale {
        x: Var,
        w: Var,
    },
    Reshape(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Unary(_, u) => u.name(),
            Op::Matmul { .. } => "matmul",
            Op::Sum(..) => "sum",
            Op::SumSorted(..) => "sum_sorted",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Gather { .. } => "gather",
            Op::SegmentSum { .. } => "segment_sum",
            Op::RowNorm(..) => "norm",
            Op::RowDot(..) => "dot",
            Op::Cross(..) => "cross",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Rope { .. } => "rope",
            Op::VecDot { .. } => "vec_dot",
            Op::VecOuter { .. } => "vec_outer",
            Op::ChannelScale { .. } => "channel_scale",
            Op::Reshape(..) => "reshape",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::MulCol(..) => "mul_col",
            Op::DivCol(..) => "div_col",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => Vec::new(),
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::RowDot(a, b)
            | Op::Cross(a, b)
            | Op::AddRow(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::DivCol(a, b)
            | Op::Matmul { a, b, .. } => vec![*a, *b],
            Op::Rope { x, angles } => vec![*x, *angles],
            Op::VecDot { axes, x } => vec![*axes, *x],
            Op::VecOuter { axes, coef } => vec![*axes, *coef],
            Op::ChannelScale { x, w } => vec![*x, *w],
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Unary(a, _)
            | Op::Sum(a)
            | Op::SumSorted(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::RowNorm(a)
            | Op::Softmax(a)
            | Op::Reshape(a) => vec![*a],
            Op::SliceCols { x, .. }
            | Op::Gather { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::LayerNorm { x, .. } => vec![*x],
            Op::ConcatCols(v) | Op::ConcatRows(v) => v.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Array,
    tracked: bool,
}

/// Append-only record of array operations for reverse-mode differentiation.
///
/// Nodes only reference earlier nodes, so the tape is acyclic by
/// construction. Every recorded value is checked for finiteness; the first
/// non-finite result aborts with the offending op name.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, lhs: &Array, rhs: &Array) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        lhs: lhs.shape().to_vec(),
        rhs: rhs.shape().to_vec(),
    }
}

fn dims(op: &'static str, a: &Array, expected: &[usize]) -> DiffError {
    DiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: expected.to_vec(),
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

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Name of the primitive that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Input nodes of `v`, in argument order.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            op: Op::Constant,
            value,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Array) -> Result<Var, DiffError> {
        if !value.is_finite() {
            return Err(DiffError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        let tracked = op.inputs().iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { op, value, tracked });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch(name, x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Ok(Array::from_parts(x.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip("add", a, b, |p, q| p + q)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip("sub", a, b, |p, q| p - q)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip("mul", a, b, |p, q| p * q)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.zip("div", a, b, |p, q| p / q)?;
        self.push(Op::Div(a, b), v)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x * factor);
        self.push(Op::Scale(a, factor), v)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, DiffError> {
        self.scale(a, -1.0)
    }

    /// `a + c` for a scalar constant `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| x + c);
        self.push(Op::Offset(a), v)
    }

    pub fn unary(&mut self, a: Var, f: Unary) -> Result<Var, DiffError> {
        let v = self.value(a).map(|x| f.eval(x));
        self.push(Op::Unary(a, f), v)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Exp)
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Sin)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Cos)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Tanh)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Sqrt)
    }

    pub fn square(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Square)
    }

    pub fn powi(&mut self, a: Var, n: i32) -> Result<Var, DiffError> {
        self.unary(a, Unary::Powi(n))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Silu)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, DiffError> {
        self.unary(a, Unary::Abs)
    }

    /// Matrix product of 2-D operands, each optionally transposed.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape().len() != 2 || y.shape().len() != 2 {
            return Err(mismatch("matmul", x, y));
        }
        let (m, k) = if ta {
            (x.shape()[1], x.shape()[0])
        } else {
            (x.shape()[0], x.shape()[1])
        };
        let (k2, n) = if tb {
            (y.shape()[1], y.shape()[0])
        } else {
            (y.shape()[0], y.shape()[1])
        };
        if k != k2 {
            return Err(mismatch("matmul", x, y));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, x.data(), ta, y.data(), tb, &mut out, 0.0);
        let v = Array::from_parts(vec![m, n], out);
        self.push(
            Op::Matmul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            },
            v,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.matmul_t(a, b, false, false)
    }

    /// Sum of all elements, in index order.
    pub fn sum(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Array::scalar(s))
    }

    /// Sum of all elements taken in ascending value order, so the result
    /// does not depend on how the elements are arranged.
    pub fn sum_sorted(&mut self, a: Var) -> Result<Var, DiffError> {
        let mut vals = self.value(a).data().to_vec();
        vals.sort_by(f64::total_cmp);
        let s = vals.iter().sum();
        self.push(Op::SumSorted(a), Array::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let n = self.value(a).len().max(1);
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Repeats a length-`n` array as each of `rows` rows: `[rows, n]`.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var, DiffError> {
        let x = self.value(a);
        let n = x.len();
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(x.data());
        }
        self.push(Op::BroadcastRows(a), Array::from_parts(vec![rows, n], data))
    }

    /// Repeats a length-`m` array across `cols` columns: `[m, cols]`.
    pub fn broadcast_cols(&mut self, a: Var, cols: usize) -> Result<Var, DiffError> {
        let x = self.value(a);
        let m = x.len();
        let mut data = Vec::with_capacity(m * cols);
        for &v in x.data() {
            data.extend(std::iter::repeat_n(v, cols));
        }
        self.push(Op::BroadcastCols(a), Array::from_parts(vec![m, cols], data))
    }

    /// `x + b` with `b` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, DiffError> {
        let v = self.rowwise("add_row", x, b, |p, q| p + q)?;
        self.push(Op::AddRow(x, b), v)
    }

    /// `x * r` with the row vector `r` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var, DiffError> {
        let v = self.rowwise("mul_row", x, r, |p, q| p * q)?;
        self.push(Op::MulRow(x, r), v)
    }

    /// `x * c` with the column `c` (one value per row) broadcast across columns.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var, DiffError> {
        let v = self.colwise("mul_col", x, c, |p, q| p * q)?;
        self.push(Op::MulCol(x, c), v)
    }

    /// `x / c` with the column `c` broadcast across columns.
    pub fn div_col(&mut self, x: Var, c: Var) -> Result<Var, DiffError> {
        let v = self.colwise("div_col", x, c, |p, q| p / q)?;
        self.push(Op::DivCol(x, c), v)
    }

    fn rowwise(
        &self,
        name: &'static str,
        x: Var,
        r: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array, DiffError> {
        let (a, b) = (self.value(x), self.value(r));
        if b.len() != a.cols() {
            return Err(mismatch(name, a, b));
        }
        Ok(Array::from_parts(a.shape().to_vec(), by_row(a.data(), b.data(), f)))
    }

    fn colwise(
        &self,
        name: &'static str,
        x: Var,
        c: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Array, DiffError> {
        let (a, b) = (self.value(x), self.value(c));
        if b.len() != a.rows() {
            return Err(mismatch(name, a, b));
        }
        Ok(Array::from_parts(a.shape().to_vec(), by_col(a.data(), b.data(), f)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::InvalidArgument("concat_cols of nothing".into()));
        };
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Array::from_parts(vec![rows, total], data),
        )
    }

    /// Columns `start..end` of a 2-D array.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let a = self.value(x);
        let (rows, cols) = (a.rows(), a.cols());
        if start > end || end > cols {
            return Err(dims("slice_cols", a, &[rows, end]));
        }
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        self.push(
            Op::SliceCols { x, start },
            Array::from_parts(vec![rows, end - start], data),
        )
    }

    /// Stacks arrays with equal row width on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let Some(&first) = parts.first() else {
            return Err(DiffError::InvalidArgument("concat_rows of nothing".into()));
        };
        let tail = self.shape(first).get(1..).unwrap_or(&[]).to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let a = self.value(p);
            if a.shape().get(1..).unwrap_or(&[]) != tail.as_slice() {
                return Err(mismatch("concat_rows", self.value(first), a));
            }
            rows += a.rows();
            data.extend_from_slice(a.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push(Op::ConcatRows(parts.to_vec()), Array::from_parts(shape, data))
    }

    /// Selects rows: `out[r] = x[index[r]]`.
    pub fn gather(&mut self, x: Var, index: Arc<[usize]>) -> Result<Var, DiffError> {
        let a = self.value(x);
        let (rows, cols) = (a.rows(), a.cols());
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            if i >= rows {
                return Err(DiffError::IndexOutOfRange {
                    op: "gather",
                    index: i,
                    len: rows,
                });
            }
            data.extend_from_slice(a.row(i));
        }
        let mut shape = vec![index.len()];
        shape.extend_from_slice(a.shape().get(1..).unwrap_or(&[]));
        self.push(Op::Gather { x, index }, Array::from_parts(shape, data))
    }

    /// Sums rows into `num_segments` buckets: `out[segments[r]] += x[r]`.
    /// Rows are accumulated in index order.
    pub fn segment_sum(
        &mut self,
        x: Var,
        segments: Arc<[usize]>,
        num_segments: usize,
    ) -> Result<Var, DiffError> {
        let a = self.value(x);
        if segments.len() != a.rows() {
            return Err(dims("segment_sum", a, &[segments.len()]));
        }
        let cols = a.cols();
        let mut data = vec![0.0; num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(DiffError::IndexOutOfRange {
                    op: "segment_sum",
                    index: s,
                    len: num_segments,
                });
            }
            let dst = &mut data[s * cols..(s + 1) * cols];
            for (d, v) in dst.iter_mut().zip(a.row(r)) {
                *d += v;
            }
        }
        let mut shape = vec![num_segments];
        shape.extend_from_slice(a.shape().get(1..).unwrap_or(&[]));
        self.push(Op::SegmentSum { x, segments }, Array::from_parts(shape, data))
    }

    /// Euclidean norm of every row.
    pub fn norm(&mut self, x: Var) -> Result<Var, DiffError> {
        let a = self.value(x);
        let data = (0..a.rows())
            .map(|r| a.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(Op::RowNorm(x), Array::vector(data))
    }

    /// Row-wise dot product.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(mismatch("dot", x, y));
        }
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Op::RowDot(a, b), Array::vector(data))
    }

    /// Row-wise cross product of `[m, 3]` arrays.
    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() || x.cols() != 3 {
            return Err(mismatch("cross", x, y));
        }
        let mut data = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            data.extend_from_slice(&cross3(x.row(r), y.row(r)));
        }
        self.push(Op::Cross(a, b), Array::from_parts(x.shape().to_vec(), data))
    }

    /// Softmax over each row.
    pub fn softmax(&mut self, x: Var) -> Result<Var, DiffError> {
        let a = self.value(x);
        let cols = a.cols();
        let mut data = Vec::with_capacity(a.len());
        for r in 0..a.rows() {
            let row = a.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - mx).exp()));
            let s: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= s);
        }
        let _ = cols;
        self.push(Op::Softmax(x), Array::from_parts(a.shape().to_vec(), data))
    }

    /// Normalizes every row to zero mean and unit variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var, DiffError> {
        let a = self.value(x);
        let cols = a.cols() as f64;
        let mut data = Vec::with_capacity(a.len());
        let mut inv_std = Vec::with_capacity(a.rows());
        for r in 0..a.rows() {
            let row = a.row(r);
            let mean = row.iter().sum::<f64>() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            data.extend(row.iter().map(|v| (v - mean) * is));
        }
        let v = Array::from_parts(a.shape().to_vec(), data);
        self.push(Op::LayerNorm { x, inv_std }, v)
    }

    /// Rotates adjacent channel pairs `(2k, 2k+1)` of each row by `angles[row, k]`.
    pub fn rope(&mut self, x: Var, angles: Var) -> Result<Var, DiffError> {
        let (a, t) = (self.value(x), self.value(angles));
        let d = a.cols();
        if d % 2 != 0 || t.rows() != a.rows() || t.cols() != d / 2 {
            return Err(mismatch("rope", a, t));
        }
        let mut data = vec![0.0; a.len()];
        for r in 0..a.rows() {
            let (row, ang) = (a.row(r), t.row(r));
            let out = &mut data[r * d..(r + 1) * d];
            for k in 0..d / 2 {
                let (s, c) = ang[k].sin_cos();
                let (x0, x1) = (row[2 * k], row[2 * k + 1]);
                out[2 * k] = x0 * c - x1 * s;
                out[2 * k + 1] = x0 * s + x1 * c;
            }
        }
        self.push(
            Op::Rope { x, angles },
            Array::from_parts(a.shape().to_vec(), data),
        )
    }

    /// Projects per-row vector channels on a per-row axis:
    /// `out[m, c] = sum_a axes[m, a] * x[m, a * d + c]` for `x: [m, 3d]`.
    pub fn vec_dot(&mut self, axes: Var, x: Var) -> Result<Var, DiffError> {
        let (e, v) = (self.value(axes), self.value(x));
        if e.cols() != 3 || v.cols() % 3 != 0 || e.rows() != v.rows() {
            return Err(mismatch("vec_dot", e, v));
        }
        let d = v.cols() / 3;
        let mut data = vec![0.0; v.rows() * d];
        for r in 0..v.rows() {
            let (ax, row) = (e.row(r), v.row(r));
            let out = &mut data[r * d..(r + 1) * d];
            for a in 0..3 {
                for (o, val) in out.iter_mut().zip(&row[a * d..(a + 1) * d]) {
                    *o += ax[a] * val;
                }
            }
        }
        self.push(Op::VecDot { axes, x }, Array::from_parts(vec![v.rows(), d], data))
    }

    /// Outer product of a per-row axis with per-row channel coefficients:
    /// `out[m, a * d + c] = axes[m, a] * coef[m, c]`.
    pub fn vec_outer(&mut self, axes: Var, coef: Var) -> Result<Var, DiffError> {
        let (e, w) = (self.value(axes), self.value(coef));
        if e.cols() != 3 || e.rows() != w.rows() {
            return Err(mismatch("vec_outer", e, w));
        }
        let d = w.cols();
        let mut data = vec![0.0; w.rows() * 3 * d];
        for r in 0..w.rows() {
            let (ax, row) = (e.row(r), w.row(r));
            let out = &mut data[r * 3 * d..(r + 1) * 3 * d];
            for a in 0..3 {
                for (o, val) in out[a * d..(a + 1) * d].iter_mut().zip(row) {
                    *o = ax[a] * val;
                }
            }
        }
        self.push(
            Op::VecOuter { axes, coef },
            Array::from_parts(vec![w.rows(), 3 * d], data),
        )
    }

    /// Scales each channel of every vector block: `out[m, a * d + c] = x[m, a * d + c] * w[m, c]`.
    pub fn channel_scale(&mut self, x: Var, w: Var) -> Result<Var, DiffError> {
        let (v, s) = (self.value(x), self.value(w));
        let d = s.cols();
        if v.rows() != s.rows() || d == 0 || v.cols() % d != 0 {
            return Err(mismatch("channel_scale", v, s));
        }
        let blocks = v.cols() / d;
        let mut data = Vec::with_capacity(v.len());
        for r in 0..v.rows() {
            let (row, ws) = (v.row(r), s.row(r));
            for b in 0..blocks {
                data.extend(row[b * d..(b + 1) * d].iter().zip(ws).map(|(p, q)| p * q));
            }
        }
        self.push(
            Op::ChannelScale { x, w },
            Array::from_parts(v.shape().to_vec(), data),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, DiffError> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.push(Op::Reshape(x), v)
    }

    /// Reverse-mode gradients of the scalar `output` with respect to `wrt`.
    ///
    /// Nodes without a path to `output` (including constants) get zeros.
    pub fn gradient(&self, output: Var, wrt: &[Var]) -> Result<Vec<Array>, DiffError> {
        let out = &self.nodes[output.0].value;
        if out.len() != 1 {
            return Err(DiffError::NonScalarOutput(out.shape().to_vec()));
        }
        let n = output.0 + 1;
        // A node needs a gradient only if some requested variable feeds it.
        let mut needs = vec![false; n];
        for w in wrt {
            if w.0 < n && self.nodes[w.0].tracked {
                needs[w.0] = true;
            }
        }
        for i in 0..n {
            if !needs[i] && self.nodes[i].tracked {
                needs[i] = self.nodes[i].op.inputs().iter().any(|v| needs[v.0]);
            }
        }
        let mut grads: Vec<Option<Array>> = (0..n).map(|_| None).collect();
        if needs[output.0] {
            grads[output.0] = Some(Array::full(out.shape(), 1.0));
        }
        for i in (0..n).rev() {
            if !needs[i] {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let is_wrt = wrt.iter().any(|w| w.0 == i);
            self.backward_node(i, &g, &needs, &mut grads);
            if is_wrt {
                grads[i] = Some(g);
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                grads
                    .get(w.0)
                    .and_then(|g| g.as_ref().cloned())
                    .unwrap_or_else(|| Array::zeros(self.nodes[w.0].value.shape()))
            })
            .collect())
    }

    fn backward_node(&self, i: usize, g: &Array, needs: &[bool], grads: &mut [Option<Array>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contribution: Array| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contribution),
                slot @ None => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(Array::from_parts(shape, contribution.into_data()));
                }
            }
        };
        let need = |v: Var| needs[v.0];
        let like = |v: Var, data: Vec<f64>| Array::from_parts(val(v).shape().to_vec(), data);
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => {
                if need(*a) {
                    acc(*a, g.clone());
                }
                if need(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if need(*a) {
                    acc(*a, g.clone());
                }
                if need(*b) {
                    acc(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    let d = g.data().iter().zip(val(*b).data()).map(|(p, q)| p * q).collect();
                    acc(*a, like(*a, d));
                }
                if need(*b) {
                    let d = g.data().iter().zip(val(*a).data()).map(|(p, q)| p * q).collect();
                    acc(*b, like(*b, d));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b).data();
                if need(*a) {
                    let d = g.data().iter().zip(bv).map(|(p, q)| p / q).collect();
                    acc(*a, like(*a, d));
                }
                if need(*b) {
                    let d = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .zip(bv)
                        .map(|((gi, yi), bi)| -gi * yi / bi)
                        .collect();
                    acc(*b, like(*b, d));
                }
            }
            Op::Scale(a, f) => {
                if need(*a) {
                    acc(*a, g.map(|v| v * f));
                }
            }
            Op::Offset(a) => {
                if need(*a) {
                    acc(*a, g.clone());
                }
            }
            Op::Unary(a, f) => {
                if need(*a) {
                    let x = val(*a).data();
                    let d = g
                        .data()
                        .iter()
                        .zip(x)
                        .zip(y.data())
                        .map(|((gi, xi), yi)| gi * f.deriv(*xi, *yi))
                        .collect();
                    acc(*a, like(*a, d));
                }
            }
            Op::Matmul {
                a,
                b,
                ta,
                tb,
                m,
                k,
                n,
            } => {
                let (av, bv) = (val(*a).data(), val(*b).data());
                if need(*a) {
                    let mut d = vec![0.0; m * k];
                    if *ta {
                        gemm(*k, *n, *m, bv, *tb, g.data(), true, &mut d, 0.0);
                    } else {
                        gemm(*m, *n, *k, g.data(), false, bv, !*tb, &mut d, 0.0);
                    }
                    acc(*a, like(*a, d));
                }
                if need(*b) {
                    let mut d = vec![0.0; k * n];
                    if *tb {
                        gemm(*n, *m, *k, g.data(), true, av, *ta, &mut d, 0.0);
                    } else {
                        gemm(*k, *m, *n, av, !*ta, g.data(), false, &mut d, 0.0);
                    }
                    acc(*b, like(*b, d));
                }
            }
            Op::Sum(a) | Op::SumSorted(a) => {
                if need(*a) {
                    acc(*a, Array::full(val(*a).shape(), g.item()));
                }
            }
            Op::BroadcastRows(a) => {
                if need(*a) {
                    let n = val(*a).len();
                    let mut d = vec![0.0; n];
                    for r in 0..g.rows() {
                        for (o, v) in d.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*a, like(*a, d));
                }
            }
            Op::BroadcastCols(a) => {
                if need(*a) {
                    let d = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
                    acc(*a, like(*a, d));
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if need(p) {
                        let mut d = Vec::with_capacity(val(p).len());
                        for r in 0..g.rows() {
                            d.extend_from_slice(&g.row(r)[offset..offset + w]);
                        }
                        acc(p, like(p, d));
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                if need(*x) {
                    let cols = val(*x).cols();
                    let w = g.cols();
                    let mut d = vec![0.0; val(*x).len()];
                    for r in 0..g.rows() {
                        d[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                    }
                    acc(*x, like(*x, d));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).len();
                    if need(p) {
                        acc(p, like(p, g.data()[offset..offset + len].to_vec()));
                    }
                    offset += len;
                }
            }
            Op::Gather { x, index } => {
                if need(*x) {
                    let cols = val(*x).cols();
                    let mut d = vec![0.0; val(*x).len()];
                    for (r, &src) in index.iter().enumerate() {
                        let dst = &mut d[src * cols..(src + 1) * cols];
                        for (o, v) in dst.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*x, like(*x, d));
                }
            }
            Op::SegmentSum { x, segments } => {
                if need(*x) {
                    let cols = val(*x).cols();
                    let mut d = Vec::with_capacity(val(*x).len());
                    for &s in segments.iter() {
                        d.extend_from_slice(&g.data()[s * cols..(s + 1) * cols]);
                    }
                    acc(*x, like(*x, d));
                }
            }
            Op::RowNorm(x) => {
                if need(*x) {
                    let a = val(*x);
                    let cols = a.cols();
                    let mut d = Vec::with_capacity(a.len());
                    for r in 0..a.rows() {
                        let nr = y.data()[r];
                        let s = if nr > 0.0 { g.data()[r] / nr } else { 0.0 };
                        d.extend(a.row(r).iter().map(|v| v * s));
                    }
                    let _ = cols;
                    acc(*x, like(*x, d));
                }
            }
            Op::RowDot(a, b) => {
                let (x, z) = (val(*a), val(*b));
                let cols = x.cols();
                let grad_for = |other: &Array| {
                    let mut d = Vec::with_capacity(other.len());
                    for r in 0..other.rows() {
                        let gr = g.data()[r];
                        d.extend(other.row(r).iter().map(|v| v * gr));
                    }
                    d
                };
                let _ = cols;
                if need(*a) {
                    acc(*a, like(*a, grad_for(z)));
                }
                if need(*b) {
                    acc(*b, like(*b, grad_for(x)));
                }
            }
            Op::Cross(a, b) => {
                let (x, z) = (val(*a), val(*b));
                if need(*a) {
                    let mut d = Vec::with_capacity(x.len());
                    for r in 0..x.rows() {
                        d.extend_from_slice(&cross3(z.row(r), g.row(r)));
                    }
                    acc(*a, like(*a, d));
                }
                if need(*b) {
                    let mut d = Vec::with_capacity(z.len());
                    for r in 0..z.rows() {
                        d.extend_from_slice(&cross3(g.row(r), x.row(r)));
                    }
                    acc(*b, like(*b, d));
                }
            }
            Op::Softmax(x) => {
                if need(*x) {
                    let mut d = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let s: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        d.extend(yr.iter().zip(gr).map(|(p, q)| p * (q - s)));
                    }
                    acc(*x, like(*x, d));
                }
            }
            Op::LayerNorm { x, inv_std } => {
                if need(*x) {
                    let cols = y.cols() as f64;
                    let mut d = Vec::with_capacity(y.len());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let mg = gr.iter().sum::<f64>() / cols;
                        let mgy = yr.iter().zip(gr).map(|(p, q)| p * q).sum::<f64>() / cols;
                        let is = inv_std[r];
                        d.extend(yr.iter().zip(gr).map(|(p, q)| is * (q - mg - p * mgy)));
                    }
                    acc(*x, like(*x, d));
                }
            }
            Op::Rope { x, angles } => {
                let t = val(*angles);
                let dcols = y.cols();
                if need(*x) {
                    let mut d = vec![0.0; y.len()];
                    for r in 0..y.rows() {
                        let (gr, ang) = (g.row(r), t.row(r));
                        let out = &mut d[r * dcols..(r + 1) * dcols];
                        for k in 0..dcols / 2 {
                            let (s, c) = ang[k].sin_cos();
                            let (g0, g1) = (gr[2 * k], gr[2 * k + 1]);
                            out[2 * k] = g0 * c + g1 * s;
                            out[2 * k + 1] = -g0 * s + g1 * c;
                        }
                    }
                    acc(*x, like(*x, d));
                }
                if need(*angles) {
                    let mut d = Vec::with_capacity(t.len());
                    for r in 0..y.rows() {
                        let (gr, yr) = (g.row(r), y.row(r));
                        for k in 0..dcols / 2 {
                            d.push(-gr[2 * k] * yr[2 * k + 1] + gr[2 * k + 1] * yr[2 * k]);
                        }
                    }
                    acc(*angles, like(*angles, d));
                }
            }
            Op::VecDot { axes, x } => {
                let (e, v) = (val(*axes), val(*x));
                let d = g.cols();
                if need(*axes) {
                    let mut out = Vec::with_capacity(e.len());
                    for r in 0..v.rows() {
                        let (row, gr) = (v.row(r), g.row(r));
                        for a in 0..3 {
                            out.push(row[a * d..(a + 1) * d].iter().zip(gr).map(|(p, q)| p * q).sum());
                        }
                    }
                    acc(*axes, like(*axes, out));
                }
                if need(*x) {
                    let mut out = Vec::with_capacity(v.len());
                    for r in 0..v.rows() {
                        let (ax, gr) = (e.row(r), g.row(r));
                        for a in ax.iter().take(3) {
                            out.extend(gr.iter().map(|q| a * q));
                        }
                    }
                    acc(*x, like(*x, out));
                }
            }
            Op::VecOuter { axes, coef } => {
                let (e, w) = (val(*axes), val(*coef));
                let d = w.cols();
                if need(*axes) {
                    let mut out = Vec::with_capacity(e.len());
                    for r in 0..w.rows() {
                        let (gr, wr) = (g.row(r), w.row(r));
                        for a in 0..3 {
                            out.push(gr[a * d..(a + 1) * d].iter().zip(wr).map(|(p, q)| p * q).sum());
                        }
                    }
                    acc(*axes, like(*axes, out));
                }
                if need(*coef) {
                    let mut out = vec![0.0; w.len()];
                    for r in 0..w.rows() {
                        let (gr, ax) = (g.row(r), e.row(r));
                        let o = &mut out[r * d..(r + 1) * d];
                        for a in 0..3 {
                            for (oc, gv) in o.iter_mut().zip(&gr[a * d..(a + 1) * d]) {
                                *oc += gv * ax[a];
                            }
                        }
                    }
                    acc(*coef, like(*coef, out));
                }
            }
            Op::ChannelScale { x, w } => {
                let (v, s) = (val(*x), val(*w));
                let d = s.cols();
                let blocks = v.cols() / d;
                if need(*x) {
                    let mut out = Vec::with_capacity(v.len());
                    for r in 0..v.rows() {
                        let (gr, ws) = (g.row(r), s.row(r));
                        for b in 0..blocks {
                            out.extend(gr[b * d..(b + 1) * d].iter().zip(ws).map(|(p, q)| p * q));
                        }
                    }
                    acc(*x, like(*x, out));
                }
                if need(*w) {
                    let mut out = vec![0.0; s.len()];
                    for r in 0..v.rows() {
                        let (gr, row) = (g.row(r), v.row(r));
                        let o = &mut out[r * d..(r + 1) * d];
                        for b in 0..blocks {
                            for ((oc, gv), xv) in o
                                .iter_mut()
                                .zip(&gr[b * d..(b + 1) * d])
                                .zip(&row[b * d..(b + 1) * d])
                            {
                                *oc += gv * xv;
                            }
                        }
                    }
                    acc(*w, like(*w, out));
                }
            }
            Op::AddRow(x, b) => {
                if need(*x) {
                    acc(*x, g.clone());
                }
                if need(*b) {
                    let cols = val(*x).cols();
                    let mut d = vec![0.0; cols];
                    for row in g.data().chunks_exact(cols.max(1)) {
                        d.iter_mut().zip(row).for_each(|(o, gv)| *o += gv);
                    }
                    acc(*b, like(*b, d));
                }
            }
            Op::MulRow(x, r) => {
                let (xv, rv) = (val(*x), val(*r));
                let cols = xv.cols().max(1);
                if need(*x) {
                    acc(*x, like(*x, by_row(g.data(), rv.data(), |gv, q| gv * q)));
                }
                if need(*r) {
                    let mut d = vec![0.0; cols];
                    for (gr, xr) in g.data().chunks_exact(cols).zip(xv.data().chunks_exact(cols)) {
                        for ((o, gv), xk) in d.iter_mut().zip(gr).zip(xr) {
                            *o += gv * xk;
                        }
                    }
                    acc(*r, like(*r, d));
                }
            }
            Op::MulCol(x, c) => {
                let (xv, cv) = (val(*x), val(*c));
                let cols = xv.cols().max(1);
                if need(*x) {
                    acc(*x, like(*x, by_col(g.data(), cv.data(), |gv, q| gv * q)));
                }
                if need(*c) {
                    let d = g
                        .data()
                        .chunks_exact(cols)
                        .zip(xv.data().chunks_exact(cols))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(p, q)| p * q).sum())
                        .collect();
                    acc(*c, like(*c, d));
                }
            }
            Op::DivCol(x, c) => {
                let cv = val(*c);
                let cols = val(*x).cols().max(1);
                if need(*x) {
                    acc(*x, like(*x, by_col(g.data(), cv.data(), |gv, q| gv / q)));
                }
                if need(*c) {
                    let d = g
                        .data()
                        .chunks_exact(cols)
                        .zip(y.data().chunks_exact(cols))
                        .zip(cv.data())
                        .map(|((gr, yr), q)| -gr.iter().zip(yr).map(|(p, v)| p * v).sum::<f64>() / q)
                        .collect();
                    acc(*c, like(*c, d));
                }
            }
            Op::Reshape(x) => {
                if need(*x) {
                    acc(*x, like(*x, g.data().to_vec()));
                }
            }
        }
    }
}

pub(crate) fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// `f(x[r][c], v[c])` for a row-major `x` with `v.len()` columns.
fn by_row(x: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(v.len().max(1)) {
        out.extend(row.iter().zip(v).map(|(&p, &q)| f(p, q)));
    }
    out
}

/// `f(x[r][c], v[r])` for a row-major `x` with `v.len()` rows.
fn by_col(x: &[f64], v: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let cols = x.len() / v.len();
    let mut out = Vec::with_capacity(x.len());
    for (row, &q) in x.chunks_exact(cols.max(1)).zip(v) {
        out.extend(row.iter().map(|&p| f(p, q)));
    }
    out
}
