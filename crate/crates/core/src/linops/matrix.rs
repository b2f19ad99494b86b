use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major complex matrix stored as two real planes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn check_same(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            op,
            left: a,
            right: b,
        });
    }
    Ok(())
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            re: vec![0.0; rows * cols],
            im: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut out = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                out.re[i * cols + j] = v.re;
                out.im[i * cols + j] = v.im;
            }
        }
        out
    }

    pub fn from_parts(rows: usize, cols: usize, re: Vec<f64>, im: Vec<f64>) -> Result<Self> {
        if re.len() != rows * cols || im.len() != rows * cols {
            return Err(Error::invalid(
                "ComplexMatrix::from_parts",
                format!(
                    "{rows}x{cols} needs {} entries per plane, got {} and {}",
                    rows * cols,
                    re.len(),
                    im.len()
                ),
            ));
        }
        Ok(Self { rows, cols, re, im })
    }

    /// Builds a real-valued complex matrix (zero imaginary part).
    pub fn from_real(m: &RealMatrix) -> Self {
        Self {
            rows: m.rows,
            cols: m.cols,
            re: m.data.clone(),
            im: vec![0.0; m.data.len()],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn into_parts(self) -> (Vec<f64>, Vec<f64>) {
        (self.re, self.im)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let idx = i * self.cols + j;
        Complex64::new(self.re[idx], self.im[idx])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        let idx = i * self.cols + j;
        self.re[idx] = v.re;
        self.im[idx] = v.im;
    }

    pub fn iter(&self) -> impl Iterator<Item = Complex64> + '_ {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(&r, &i)| Complex64::new(r, i))
    }

    pub fn column(&self, j: usize) -> ComplexMatrix {
        Self::from_fn(self.rows, 1, |i, _| self.get(i, j))
    }

    /// Plain transpose (no conjugation).
    pub fn transpose(&self) -> ComplexMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn conj(&self) -> ComplexMatrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.clone(),
            im: self.im.iter().map(|v| -v).collect(),
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> ComplexMatrix {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let (n, inner, m) = (self.rows, self.cols, rhs.cols);
        let mut out = ComplexMatrix::zeros(n, m);
        for i in 0..n {
            let out_re = &mut out.re[i * m..(i + 1) * m];
            let out_im = &mut out.im[i * m..(i + 1) * m];
            for k in 0..inner {
                let ar = self.re[i * inner + k];
                let ai = self.im[i * inner + k];
                let br = &rhs.re[k * m..(k + 1) * m];
                let bi = &rhs.im[k * m..(k + 1) * m];
                for j in 0..m {
                    out_re[j] += ar * br[j] - ai * bi[j];
                    out_im[j] += ar * bi[j] + ai * br[j];
                }
            }
        }
        Ok(out)
    }

    fn zip_with(
        &self,
        rhs: &ComplexMatrix,
        op: &'static str,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexMatrix> {
        check_same(op, self.shape(), rhs.shape())?;
        Ok(Self::from_fn(self.rows, self.cols, |i, j| {
            f(self.get(i, j), rhs.get(i, j))
        }))
    }

    pub fn checked_add(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn checked_sub(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    /// Entrywise (Hadamard) product.
    pub fn hadamard(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        self.zip_with(rhs, "hadamard", |a, b| a * b)
    }

    /// Entrywise product with a real matrix of the same shape.
    pub fn scale_entries(&self, weights: &RealMatrix) -> Result<ComplexMatrix> {
        check_same("scale_entries", self.shape(), weights.shape())?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            re: self.re.iter().zip(&weights.data).map(|(a, w)| a * w).collect(),
            im: self.im.iter().zip(&weights.data).map(|(a, w)| a * w).collect(),
        })
    }

    pub fn scale(&self, s: Complex64) -> ComplexMatrix {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) * s)
    }

    /// Entrywise modulus.
    pub fn magnitude(&self) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .re
                .iter()
                .zip(&self.im)
                .map(|(r, i)| r.hypot(*i))
                .collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.re.iter().chain(&self.im).all(|v| v.is_finite())
    }

    /// Largest entrywise modulus of `self - other`, relative to the largest
    /// modulus in `other`.
    pub fn max_rel_diff(&self, other: &ComplexMatrix) -> f64 {
        let scale = other.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
            / scale
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<Complex64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j))
    }

    pub(crate) fn from_nalgebra(m: &nalgebra::DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(
                "RealMatrix::from_vec",
                format!("{rows}x{cols} needs {} entries, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealMatrix {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn hadamard(&self, rhs: &RealMatrix) -> Result<RealMatrix> {
        check_same("hadamard", self.shape(), rhs.shape())?;
        Ok(RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Entrywise magnitude `z` with the phase of `y`: `z ∘ exp(i∠y)`.
///
/// Where `y` is exactly zero the phase is taken as 0, so the entry becomes
/// `z + 0i`.
pub fn phase_project(z: &RealMatrix, y: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same("phase_project", z.shape(), y.shape())?;
    if let Some(bad) = z.data.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(
            "phase_project",
            format!("magnitudes must be nonnegative, found {bad}"),
        ));
    }
    let mut out = ComplexMatrix::zeros(y.rows, y.cols);
    for idx in 0..z.data.len() {
        let (yr, yi) = (y.re[idx], y.im[idx]);
        let r = yr.hypot(yi);
        if r == 0.0 {
            out.re[idx] = z.data[idx];
        } else {
            out.re[idx] = z.data[idx] * (yr / r);
            out.im[idx] = z.data[idx] * (yi / r);
        }
    }
    Ok(out)
}
