//! Dense tensors and a tape-based reverse-mode autodiff engine.
//!
//! A [`Tensor`] is an immutable row-major value of rank 0, 1 or 2. Rank-1
//! tensors behave as a single row and scalars as `1×1` when an op needs a
//! matrix view. A [`Tape`] records every operation applied to its [`Var`]
//! handles; [`Tape::backward`] walks the record in reverse creation order and
//! accumulates `dL/dx` for every node that depends on a trainable leaf.
//!
//! All loops run in a fixed order so repeated runs are bitwise identical.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense `f64` tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::contract(format!(
                "tensors of rank {} are not supported",
                shape.len()
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(shape.len() <= 2, "tensors of rank > 2 are not supported");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// `(rows, cols)` of the matrix view.
    pub fn dims(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [] => (1, 1),
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("rank checked at construction"),
        }
    }

    pub fn rows(&self) -> usize {
        self.dims().0
    }

    pub fn cols(&self) -> usize {
        self.dims().1
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows()).map(|r| self.row(r).to_vec()).collect()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = self.dims();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Dense product `a (m×k) · b (k×n)`, accumulated in `k`-inner order.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (m×n) · bᵀ` where `b` is `k×n`; result `m×k`.
fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · g` where `a` is `m×k` and `g` is `m×n`; result `k×n`.
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weighted sparse propagation `out[dst] += w · x[src]`.
pub type Propagation = Arc<Vec<(usize, usize, f64)>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Rows,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Div(Var, Var, Bcast),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Sqrt(Var),
    Scale(Var, f64),
    AddScalar(Var),
    SoftmaxRows(Var),
    L1NormCols(Var, Vec<f64>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum(Var),
    RowSum(Var),
    Diag(Var),
    SegmentMean {
        x: Var,
        segment: Arc<Vec<usize>>,
        counts: Vec<usize>,
    },
    Propagate(Var, Propagation),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// Leaves created with [`Tape::param`] are trainable; [`Tape::constant`]
/// leaves never receive gradients. Gradients accumulate across repeated
/// [`Tape::backward`] calls until [`Tape::zero_grad`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims()
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0].as_ref().map(|g| Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape.len() != 2 || bv.shape.len() != 2 || av.cols() != bv.rows() {
            return Err(Error::Shape {
                op: "matmul",
                left: av.shape.clone(),
                right: bv.shape.clone(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let data = matmul_raw(&av.data, &bv.data, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(
            Tensor {
                shape: vec![m, n],
                data,
            },
            Op::MatMul(a, b),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape == bv.shape {
            return Ok(Bcast::Same);
        }
        let (_, ac) = av.dims();
        let (br, bc) = bv.dims();
        if av.shape.len() == 2 && br == 1 && bc == ac && !bv.shape.is_empty() {
            return Ok(Bcast::Rows);
        }
        Err(Error::Shape {
            op,
            left: av.shape.clone(),
            right: bv.shape.clone(),
        })
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let mode = self.bcast(op, a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = match mode {
            Bcast::Same => av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect(),
            Bcast::Rows => {
                let c = av.cols();
                av.data.iter().enumerate().map(|(i, x)| f(*x, bv.data[i % c])).collect()
            }
        };
        Ok((
            Tensor {
                shape: av.shape.clone(),
                data,
            },
            mode,
        ))
    }

    /// Elementwise `a + b`; `b` may be a single row broadcast over `a`'s rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b, mode), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b, mode), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, mode) = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b, mode), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if let Some(pos) = self.value(b).data.iter().position(|x| *x == 0.0) {
            return Err(Error::Domain {
                op: "div",
                detail: format!("zero divisor at flat index {pos}"),
            });
        }
        let (value, mode) = self.binary("div", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Div(a, b, mode), rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let src = self.value(a);
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|x| f(*x)).collect(),
        };
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data.iter().find(|x| !(**x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive operand {x}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data.iter().find(|x| **x < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative operand {x}"),
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt(a)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Row-wise softmax, stabilised by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if src.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain {
                op: "softmax_rows",
                detail: "non-finite input".into(),
            });
        }
        let (r, c) = src.dims();
        let mut data = src.data.clone();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let value = Tensor {
            shape: src.shape.clone(),
            data,
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Divides every column by its sum. All-zero columns pass through.
    pub fn l1_normalize_cols(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        if let Some(x) = src.data.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::contract(format!(
                "l1_normalize_cols requires non-negative entries, found {x}"
            )));
        }
        let (r, c) = src.dims();
        let mut sums = vec![0.0; c];
        for i in 0..r {
            for (s, x) in sums.iter_mut().zip(&src.data[i * c..(i + 1) * c]) {
                *s += x;
            }
        }
        let mut data = src.data.clone();
        for i in 0..r {
            for (x, s) in data[i * c..(i + 1) * c].iter_mut().zip(&sums) {
                if *s > 0.0 {
                    *x /= s;
                }
            }
        }
        let value = Tensor {
            shape: src.shape.clone(),
            data,
        };
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::L1NormCols(a, sums), rg))
    }

    /// Per-row layer normalisation with affine `gamma`/`beta` of width `d`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (r, d) = self.dims(x);
        for p in [gamma, beta] {
            if self.value(p).numel() != d {
                return Err(Error::Shape {
                    op: "layer_norm",
                    left: self.shape(x).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
        }
        if d == 0 {
            return Err(Error::contract("layer_norm over zero-width rows"));
        }
        let src = &self.value(x).data;
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        let mut xhat = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut data = vec![0.0; r * d];
        for i in 0..r {
            let row = &src[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                data[i * d + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Sum of all entries as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// `m×n → m×1` row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let src = &self.value(a).data;
        let data = (0..r).map(|i| src[i * c..(i + 1) * c].iter().sum()).collect();
        let rg = self.rg(&[a]);
        self.push(
            Tensor {
                shape: vec![r, 1],
                data,
            },
            Op::RowSum(a),
            rg,
        )
    }

    /// Main diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if r != c {
            return Err(Error::Shape {
                op: "diag",
                left: vec![r, c],
                right: vec![c, r],
            });
        }
        let src = &self.value(a).data;
        let data = (0..r).map(|i| src[i * c + i]).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor {
                shape: vec![r, 1],
                data,
            },
            Op::Diag(a),
            rg,
        ))
    }

    /// Mean of rows grouped by `segment[row]`, yielding `segments × cols`.
    pub fn segment_mean(&mut self, x: Var, segment: Arc<Vec<usize>>, segments: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if segment.len() != r {
            return Err(Error::Shape {
                op: "segment_mean",
                left: vec![r, c],
                right: vec![segment.len()],
            });
        }
        let mut counts = vec![0usize; segments];
        for &s in segment.iter() {
            if s >= segments {
                return Err(Error::contract(format!(
                    "segment id {s} out of range for {segments} segments"
                )));
            }
            counts[s] += 1;
        }
        if let Some(empty) = counts.iter().position(|&n| n == 0) {
            return Err(Error::contract(format!("segment {empty} has no rows")));
        }
        let src = &self.value(x).data;
        let mut data = vec![0.0; segments * c];
        for (i, &s) in segment.iter().enumerate() {
            for j in 0..c {
                data[s * c + j] += src[i * c + j];
            }
        }
        for s in 0..segments {
            for j in 0..c {
                data[s * c + j] /= counts[s] as f64;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![segments, c],
                data,
            },
            Op::SegmentMean { x, segment, counts },
            rg,
        ))
    }

    /// Sparse message passing: `out[dst] = Σ w · x[src]` over `(dst, src, w)`.
    pub fn propagate(&mut self, x: Var, prop: Propagation) -> Result<Var> {
        let (r, c) = self.dims(x);
        let src = &self.value(x).data;
        let mut data = vec![0.0; r * c];
        for &(dst, s, w) in prop.iter() {
            if dst >= r || s >= r {
                return Err(Error::contract(format!(
                    "propagation edge ({dst}, {s}) outside {r} rows"
                )));
            }
            for j in 0..c {
                data[dst * c + j] += w * src[s * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![r, c],
                data,
            },
            Op::Propagate(x, prop),
            rg,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, c) = self.dims(x);
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in &rows {
            if i >= r {
                return Err(Error::contract(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(
            Tensor {
                shape: vec![rows.len(), c],
                data,
            },
            Op::GatherRows(x, rows),
            rg,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::contract("concat_rows of nothing"));
        };
        let c = self.dims(*first).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = self.value(*p);
            if v.cols() != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(*first).to_vec(),
                    right: v.shape.clone(),
                });
            }
            rows += v.rows();
            data.extend_from_slice(&v.data);
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor {
                shape: vec![rows, c],
                data,
            },
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    /// Back-propagates from a scalar `loss`, adding into stored gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        local[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = local[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate_grad(i, &g, &mut local);
            }
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate_grad(&self, i: usize, g: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = local[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                acc(*a, &|s| {
                    let ga = matmul_nt(g, &bv.data, m, n, k);
                    s.iter_mut().zip(ga).for_each(|(x, y)| *x += y);
                });
                acc(*b, &|s| {
                    let gb = matmul_tn(&av.data, g, m, k, n);
                    s.iter_mut().zip(gb).for_each(|(x, y)| *x += y);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = out.dims();
                acc(*a, &|s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[j * r + i] += g[i * c + j];
                        }
                    }
                });
            }
            Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                let c = out.cols();
                acc(*b, &|s| match mode {
                    Bcast::Same => s.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y),
                    Bcast::Rows => g.iter().enumerate().for_each(|(k, y)| s[k % c] += sign * y),
                });
            }
            Op::Mul(a, b, mode) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let c = out.cols();
                let bi = |k: usize| if *mode == Bcast::Rows { k % c } else { k };
                acc(*a, &|s| {
                    for k in 0..g.len() {
                        s[k] += g[k] * bv[bi(k)];
                    }
                });
                acc(*b, &|s| {
                    for k in 0..g.len() {
                        s[bi(k)] += g[k] * av[k];
                    }
                });
            }
            Op::Div(a, b, mode) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                let c = out.cols();
                let bi = |k: usize| if *mode == Bcast::Rows { k % c } else { k };
                acc(*a, &|s| {
                    for k in 0..g.len() {
                        s[k] += g[k] / bv[bi(k)];
                    }
                });
                acc(*b, &|s| {
                    for k in 0..g.len() {
                        let d = bv[bi(k)];
                        s[bi(k)] -= g[k] * av[k] / (d * d);
                    }
                });
            }
            Op::Exp(a) => acc(*a, &|s| {
                for k in 0..g.len() {
                    s[k] += g[k] * out.data[k];
                }
            }),
            Op::Log(a) => {
                let av = &self.value(*a).data;
                acc(*a, &|s| {
                    for k in 0..g.len() {
                        s[k] += g[k] / av[k];
                    }
                });
            }
            Op::Relu(a) => {
                let av = &self.value(*a).data;
                acc(*a, &|s| {
                    for k in 0..g.len() {
                        if av[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Sqrt(a) => acc(*a, &|s| {
                for k in 0..g.len() {
                    if out.data[k] > 0.0 {
                        s[k] += g[k] / (2.0 * out.data[k]);
                    }
                }
            }),
            Op::Scale(a, c) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::AddScalar(a) => acc(*a, &|s| s.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::SoftmaxRows(a) => {
                let (r, c) = out.dims();
                acc(*a, &|s| {
                    for i in 0..r {
                        let y = &out.data[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dot: f64 = y.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for j in 0..c {
                            s[i * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::L1NormCols(a, sums) => {
                let (r, c) = out.dims();
                acc(*a, &|s| {
                    let mut dots = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dots[j] += g[i * c + j] * out.data[i * c + j];
                        }
                    }
                    for i in 0..r {
                        for j in 0..c {
                            let k = i * c + j;
                            if sums[j] > 0.0 {
                                s[k] += (g[k] - dots[j]) / sums[j];
                            } else {
                                s[k] += g[k];
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (r, d) = out.dims();
                let gv = &self.value(*gamma).data;
                acc(*gamma, &|s| {
                    for k in 0..g.len() {
                        s[k % d] += g[k] * xhat[k];
                    }
                });
                acc(*beta, &|s| {
                    for k in 0..g.len() {
                        s[k % d] += g[k];
                    }
                });
                acc(*x, &|s| {
                    let df = d as f64;
                    for i in 0..r {
                        let base = i * d;
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[base + j];
                        }
                        for j in 0..d {
                            let dh = g[base + j] * gv[j];
                            s[base + j] += inv_std[i] / df * (df * dh - sum_dh - xhat[base + j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|s| s.iter_mut().for_each(|x| *x += g[0])),
            Op::RowSum(a) => {
                let c = self.value(*a).cols();
                acc(*a, &|s| {
                    for (k, x) in s.iter_mut().enumerate() {
                        *x += g[k / c];
                    }
                });
            }
            Op::Diag(a) => {
                let n = out.rows();
                acc(*a, &|s| {
                    for i in 0..n {
                        s[i * n + i] += g[i];
                    }
                });
            }
            Op::SegmentMean { x, segment, counts } => {
                let c = out.cols();
                acc(*x, &|s| {
                    for (i, &seg) in segment.iter().enumerate() {
                        let w = 1.0 / counts[seg] as f64;
                        for j in 0..c {
                            s[i * c + j] += w * g[seg * c + j];
                        }
                    }
                });
            }
            Op::Propagate(x, prop) => {
                let c = out.cols();
                acc(*x, &|s| {
                    for &(dst, src, w) in prop.iter() {
                        for j in 0..c {
                            s[src * c + j] += w * g[dst * c + j];
                        }
                    }
                });
            }
            Op::GatherRows(x, rows) => {
                let c = out.cols();
                acc(*x, &|s| {
                    for (k, &i) in rows.iter().enumerate() {
                        for j in 0..c {
                            s[i * c + j] += g[k * c + j];
                        }
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    acc(*p, &|s| {
                        s.iter_mut().zip(&g[offset..offset + n]).for_each(|(x, y)| *x += y)
                    });
                    offset += n;
                }
            }
        }
    }
}
