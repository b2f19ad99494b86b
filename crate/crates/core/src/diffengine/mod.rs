//! Reverse-mode differentiation over real matrices.
//!
//! A [`Graph`] is the computation record: nodes are appended in evaluation
//! order, so the node list is already topologically sorted and
//! [`Graph::backward`] walks it in exact reverse. Every tensor is a 2-D
//! row-major matrix; complex quantities travel as `(re, im)` pairs of nodes.
//!
//! Leaves are either constants (no gradient) or parameters. Gradients are only
//! propagated through nodes that depend on at least one parameter.

mod adam;
pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::linops::{bessel::ratio_unchecked, bessel_ratio_derivative};

pub use adam::{clip_grad_norm, Adam, AdamState};

/// `|y|` below this is clamped in the phase primitive.
pub const PHASE_CLAMP: f64 = 1e-12;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pair(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Part {
    Re,
    Im,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { input: Var, start: usize },
    SliceRows { input: Var, start: usize },
    Affine { input: Var, scale: f64 },
    ScaleBy { input: Var, scalar: Var },
    AddRow { input: Var, row: Var },
    MulRow { input: Var, row: Var },
    Exp(Var),
    Log1p(Var),
    Sigmoid(Var),
    Gelu(Var),
    Relu(Var),
    Square(Var),
    SoftmaxRows(Var),
    LayerNormRows { input: Var, inv_std: Vec<f64> },
    Magnitude { re: Var, im: Var },
    PhaseApply { z: Var, re: Var, im: Var, part: Part },
    Sum(Var),
    Mean(Var),
    BesselRatio(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Shape,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// The computation record.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn mismatch(op: &'static str, a: Shape, b: Shape) -> Error {
    Error::ShapeMismatch { op, left: a.pair(), right: b.pair() }
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

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.shape(v).len(), 1);
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { shape: Shape { rows, cols }, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>, param: bool) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "graph.leaf",
                format!("{rows}x{cols} leaf needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, param))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, data, false)
    }

    pub fn parameter(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        self.leaf(rows, cols, data, true)
    }

    pub fn scalar_constant(&mut self, v: f64) -> Var {
        self.push(1, 1, vec![v], Op::Leaf, false)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let s = self.shape(x);
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let rg = self.rg(&[x]);
        self.push(s.rows, s.cols, value, op, rg)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch(name, sa, sb));
        }
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(sa.rows, sa.cols, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("hadamard", a, b, |x, y| x * y, Op::Hadamard(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.cols != sb.rows {
            return Err(mismatch("matmul", sa, sb));
        }
        let value = kernels::matmul(self.value(a), self.value(b), sa.rows, sa.cols, sb.cols);
        let rg = self.rg(&[a, b]);
        Ok(self.push(sa.rows, sb.cols, value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let value = kernels::transpose(self.value(x), s.rows, s.cols);
        let rg = self.rg(&[x]);
        self.push(s.cols, s.rows, value, Op::Transpose(x), rg)
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != rows * cols {
            return Err(mismatch("reshape", s, Shape { rows, cols }));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(rows, cols, value, Op::Reshape(x), rg))
    }

    /// Side-by-side concatenation (all inputs share the row count).
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let rows = self.shape(first).rows;
        let mut cols = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.rows != rows {
                return Err(mismatch("concat_cols", self.shape(first), s));
            }
            cols += s.cols;
        }
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let c = self.shape(p).cols;
                value.extend_from_slice(&self.value(p)[r * c..(r + 1) * c]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, value, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Stacked concatenation (all inputs share the column count).
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let cols = self.shape(first).cols;
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.cols != cols {
                return Err(mismatch("concat_rows", self.shape(first), s));
            }
            rows += s.rows;
            value.extend_from_slice(self.value(p));
        }
        let rg = self.rg(parts);
        Ok(self.push(rows, cols, value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + width > s.cols || width == 0 {
            return Err(mismatch("slice_cols", s, Shape { rows: s.rows, cols: start + width }));
        }
        let src = self.value(x);
        let mut value = Vec::with_capacity(s.rows * width);
        for r in 0..s.rows {
            value.extend_from_slice(&src[r * s.cols + start..r * s.cols + start + width]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(s.rows, width, value, Op::SliceCols { input: x, start }, rg))
    }

    /// Rows `start..start + height`.
    pub fn slice_rows(&mut self, x: Var, start: usize, height: usize) -> Result<Var> {
        let s = self.shape(x);
        if start + height > s.rows || height == 0 {
            return Err(mismatch("slice_rows", s, Shape { rows: start + height, cols: s.cols }));
        }
        let value = self.value(x)[start * s.cols..(start + height) * s.cols].to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(height, s.cols, value, Op::SliceRows { input: x, start }, rg))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { input: x, scale })
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Multiplies every entry of `x` by the `1 x 1` node `scalar`.
    pub fn scale_by(&mut self, x: Var, scalar: Var) -> Result<Var> {
        let ss = self.shape(scalar);
        if ss.len() != 1 {
            return Err(mismatch("scale_by", self.shape(x), ss));
        }
        let s = self.shape(x);
        let c = self.scalar(scalar);
        let value = self.value(x).iter().map(|v| v * c).collect();
        let rg = self.rg(&[x, scalar]);
        Ok(self.push(s.rows, s.cols, value, Op::ScaleBy { input: x, scalar }, rg))
    }

    fn row_broadcast(&mut self, name: &'static str, x: Var, row: Var, mul: bool) -> Result<Var> {
        let (s, sr) = (self.shape(x), self.shape(row));
        if sr.rows != 1 || sr.cols != s.cols {
            return Err(mismatch(name, s, sr));
        }
        let r = self.value(row);
        let value = self
            .value(x)
            .chunks(s.cols)
            .flat_map(|chunk| chunk.iter().zip(r).map(|(a, b)| if mul { a * b } else { a + b }))
            .collect();
        let rg = self.rg(&[x, row]);
        let op = if mul { Op::MulRow { input: x, row } } else { Op::AddRow { input: x, row } };
        Ok(self.push(s.rows, s.cols, value, op, rg))
    }

    /// Adds the `1 x cols` node `row` to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", x, row, false)
    }

    /// Multiplies every row of `x` entrywise by the `1 x cols` node `row`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", x, row, true)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log1p(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln_1p, Op::Log1p(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, kernels::gelu, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Entrywise `I₁(x)/I₀(x)`; inputs must be nonnegative.
    pub fn bessel_ratio(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::invalid("bessel_ratio", format!("argument {bad} outside [0, inf)")));
        }
        Ok(self.unary(x, ratio_unchecked, Op::BesselRatio(x)))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(s.cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(&[x]);
        self.push(s.rows, s.cols, value, Op::SoftmaxRows(x), rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm_rows(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let mut value = self.value(x).to_vec();
        let mut inv_std = Vec::with_capacity(s.rows);
        let n = s.cols as f64;
        for row in value.chunks_mut(s.cols) {
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(&[x]);
        self.push(s.rows, s.cols, value, Op::LayerNormRows { input: x, inv_std }, rg)
    }

    /// Entrywise `|re + i im|`. The gradient at the origin is taken as 0.
    pub fn magnitude(&mut self, re: Var, im: Var) -> Result<Var> {
        self.binary_same("magnitude", re, im, f64::hypot, Op::Magnitude { re, im })
    }

    /// `z ∘ y / |y|` for `y = re + i im`, returned as `(re, im)`.
    ///
    /// `|y|` is clamped below at [`PHASE_CLAMP`]; an exactly zero `y` takes
    /// phase 0 (output `z + 0i`) with zero gradient towards `y`.
    pub fn phase_apply(&mut self, z: Var, re: Var, im: Var) -> Result<(Var, Var)> {
        let (sz, sr, si) = (self.shape(z), self.shape(re), self.shape(im));
        if sz != sr {
            return Err(mismatch("phase_apply", sz, sr));
        }
        if sr != si {
            return Err(mismatch("phase_apply", sr, si));
        }
        let n = sz.len();
        let (mut out_re, mut out_im) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for idx in 0..n {
            let (zv, a, b) = (self.value(z)[idx], self.value(re)[idx], self.value(im)[idx]);
            let (u, v) = unit_phase(a, b);
            out_re.push(zv * u);
            out_im.push(zv * v);
        }
        let rg = self.rg(&[z, re, im]);
        let r = self.push(sz.rows, sz.cols, out_re, Op::PhaseApply { z, re, im, part: Part::Re }, rg);
        let i = self.push(sz.rows, sz.cols, out_im, Op::PhaseApply { z, re, im, part: Part::Im }, rg);
        Ok((r, i))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(1, 1, vec![total], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.shape(x).len() as f64;
        let total: f64 = self.value(x).iter().sum();
        let rg = self.rg(&[x]);
        self.push(1, 1, vec![total / n], Op::Mean(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let s = self.shape(loss);
        if s.len() != 1 {
            return Err(Error::NonScalarLoss { rows: s.rows, cols: s.cols });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn slot<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.shape.len()]))
    }

    fn acc_map(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64], f: impl Fn(usize, f64) -> f64) {
        if let Some(slot) = self.slot(grads, v) {
            for (i, (s, &gv)) in slot.iter_mut().zip(g).enumerate() {
                *s += f(i, gv);
            }
        }
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let shape = node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| gv);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, g, |_, gv| gv);
                self.acc_map(grads, *b, g, |_, gv| -gv);
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc_map(grads, *a, g, |i, gv| gv * vb[i]);
                self.acc_map(grads, *b, g, |i, gv| gv * va[i]);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa.rows, sa.cols, sb.cols);
                let vb = self.value(*b);
                if let Some(slot) = self.slot(grads, *a) {
                    kernels::matmul_nt_acc(slot, g, vb, n, m, k);
                }
                let va = self.value(*a);
                if let Some(slot) = self.slot(grads, *b) {
                    kernels::matmul_tn_acc(slot, va, g, n, k, m);
                }
            }
            Op::Transpose(x) => {
                let gt = kernels::transpose(g, shape.rows, shape.cols);
                self.acc_map(grads, *x, &gt, |_, gv| gv);
            }
            Op::Reshape(x) => self.acc_map(grads, *x, g, |_, gv| gv),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).cols;
                    if let Some(slot) = self.slot(grads, p) {
                        for r in 0..shape.rows {
                            for j in 0..c {
                                slot[r * c + j] += g[r * shape.cols + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.shape(p).len();
                    self.acc_map(grads, p, &g[offset..offset + len], |_, gv| gv);
                    offset += len;
                }
            }
            Op::SliceCols { input, start } => {
                let src_cols = self.shape(*input).cols;
                if let Some(slot) = self.slot(grads, *input) {
                    for r in 0..shape.rows {
                        for j in 0..shape.cols {
                            slot[r * src_cols + start + j] += g[r * shape.cols + j];
                        }
                    }
                }
            }
            Op::SliceRows { input, start } => {
                let offset = start * shape.cols;
                if let Some(slot) = self.slot(grads, *input) {
                    for (s, gv) in slot[offset..offset + g.len()].iter_mut().zip(g) {
                        *s += gv;
                    }
                }
            }
            Op::Affine { input, scale } => self.acc_map(grads, *input, g, |_, gv| gv * scale),
            Op::ScaleBy { input, scalar } => {
                let c = self.scalar(*scalar);
                self.acc_map(grads, *input, g, |_, gv| gv * c);
                let vx = self.value(*input);
                let dot: f64 = g.iter().zip(vx).map(|(a, b)| a * b).sum();
                self.acc_map(grads, *scalar, &[dot], |_, gv| gv);
            }
            Op::AddRow { input, row } => {
                self.acc_map(grads, *input, g, |_, gv| gv);
                let mut col_sums = vec![0.0; shape.cols];
                for chunk in g.chunks(shape.cols) {
                    col_sums.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                }
                self.acc_map(grads, *row, &col_sums, |_, gv| gv);
            }
            Op::MulRow { input, row } => {
                let r = self.value(*row);
                let cols = shape.cols;
                self.acc_map(grads, *input, g, |i, gv| gv * r[i % cols]);
                let vx = self.value(*input);
                let mut col_sums = vec![0.0; cols];
                for (i, (gv, xv)) in g.iter().zip(vx).enumerate() {
                    col_sums[i % cols] += gv * xv;
                }
                self.acc_map(grads, *row, &col_sums, |_, gv| gv);
            }
            Op::Exp(x) => self.acc_map(grads, *x, g, |i, gv| gv * out[i]),
            Op::Log1p(x) => {
                let vx = self.value(*x);
                self.acc_map(grads, *x, g, |i, gv| gv / (1.0 + vx[i]));
            }
            Op::Sigmoid(x) => self.acc_map(grads, *x, g, |i, gv| gv * out[i] * (1.0 - out[i])),
            Op::Gelu(x) => {
                let vx = self.value(*x);
                self.acc_map(grads, *x, g, |i, gv| gv * kernels::gelu_grad(vx[i]));
            }
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.acc_map(grads, *x, g, |i, gv| if vx[i] > 0.0 { gv } else { 0.0 });
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                self.acc_map(grads, *x, g, |i, gv| 2.0 * vx[i] * gv);
            }
            Op::BesselRatio(x) => {
                let vx = self.value(*x);
                self.acc_map(grads, *x, g, |i, gv| gv * bessel_ratio_derivative(vx[i]));
            }
            Op::SoftmaxRows(x) => {
                let cols = shape.cols;
                let mut dx = vec![0.0; g.len()];
                for r in 0..shape.rows {
                    let (gr, yr) = (&g[r * cols..(r + 1) * cols], &out[r * cols..(r + 1) * cols]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        dx[r * cols + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc_map(grads, *x, &dx, |_, gv| gv);
            }
            Op::LayerNormRows { input, inv_std } => {
                let cols = shape.cols;
                let n = cols as f64;
                let mut dx = vec![0.0; g.len()];
                for r in 0..shape.rows {
                    let (gr, yr) = (&g[r * cols..(r + 1) * cols], &out[r * cols..(r + 1) * cols]);
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for j in 0..cols {
                        dx[r * cols + j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.acc_map(grads, *input, &dx, |_, gv| gv);
            }
            Op::Magnitude { re, im } => {
                let (vr, vi) = (self.value(*re), self.value(*im));
                let ratio = |i: usize, num: f64| if out[i] > 0.0 { num / out[i] } else { 0.0 };
                self.acc_map(grads, *re, g, |i, gv| gv * ratio(i, vr[i]));
                self.acc_map(grads, *im, g, |i, gv| gv * ratio(i, vi[i]));
            }
            Op::PhaseApply { z, re, im, part } => {
                let (vz, vr, vi) = (self.value(*z), self.value(*re), self.value(*im));
                let n = g.len();
                let (mut dz, mut dre, mut dim) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
                for i in 0..n {
                    let (u, v) = unit_phase(vr[i], vi[i]);
                    let j = unit_phase_jacobian(vr[i], vi[i]);
                    let (own, d_re, d_im) = match part {
                        Part::Re => (u, j[0][0], j[0][1]),
                        Part::Im => (v, j[1][0], j[1][1]),
                    };
                    dz[i] = g[i] * own;
                    dre[i] = g[i] * vz[i] * d_re;
                    dim[i] = g[i] * vz[i] * d_im;
                }
                self.acc_map(grads, *z, &dz, |_, gv| gv);
                self.acc_map(grads, *re, &dre, |_, gv| gv);
                self.acc_map(grads, *im, &dim, |_, gv| gv);
            }
            Op::Sum(x) => {
                let gv = g[0];
                self.acc_map(grads, *x, &vec![gv; self.shape(*x).len()], |_, v| v);
            }
            Op::Mean(x) => {
                let n = self.shape(*x).len();
                let gv = g[0] / n as f64;
                self.acc_map(grads, *x, &vec![gv; n], |_, v| v);
            }
        }
    }
}

/// `y / max(|y|, clamp)`, with `(1, 0)` at the origin.
#[inline]
fn unit_phase(re: f64, im: f64) -> (f64, f64) {
    let r = re.hypot(im);
    if r == 0.0 {
        (1.0, 0.0)
    } else {
        let rc = r.max(PHASE_CLAMP);
        (re / rc, im / rc)
    }
}

/// `∂(u, v)/∂(re, im)` of [`unit_phase`].
#[inline]
fn unit_phase_jacobian(re: f64, im: f64) -> [[f64; 2]; 2] {
    let r = re.hypot(im);
    if r == 0.0 {
        [[0.0, 0.0], [0.0, 0.0]]
    } else if r < PHASE_CLAMP {
        let inv = 1.0 / PHASE_CLAMP;
        [[inv, 0.0], [0.0, inv]]
    } else {
        let r3 = r * r * r;
        [[im * im / r3, -re * im / r3], [-re * im / r3, re * re / r3]]
    }
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss through a parameter.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when absent.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

#[cfg(test)]
mod tests;
