use super::ComplexMatrix;
use crate::error::{Error, Result};

/// Thin singular value decomposition `A = U diag(s) Vᴴ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: ComplexMatrix,
    pub singular_values: Vec<f64>,
    pub v_adjoint: ComplexMatrix,
}

impl Svd {
    pub fn new(a: &ComplexMatrix) -> Result<Self> {
        if a.rows() == 0 || a.cols() == 0 {
            return Err(Error::invalid("svd", "empty matrix"));
        }
        if !a.is_finite() {
            return Err(Error::invalid("svd", "non-finite entries"));
        }
        let svd = a.to_nalgebra().svd(true, true);
        let u = svd.u.as_ref().expect("u requested");
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        Ok(Self {
            u: ComplexMatrix::from_nalgebra(u),
            singular_values: svd.singular_values.iter().copied().collect(),
            v_adjoint: ComplexMatrix::from_nalgebra(v_t),
        })
    }

    pub fn max_singular_value(&self) -> f64 {
        self.singular_values.iter().copied().fold(0.0, f64::max)
    }

    /// Cutoff below which singular values are treated as zero:
    /// `eps * max(rows, cols) * sigma_max`.
    pub fn rank_tolerance(&self) -> f64 {
        let dim = self.u.rows().max(self.v_adjoint.cols()) as f64;
        f64::EPSILON * dim * self.max_singular_value()
    }

    pub fn rank(&self) -> usize {
        let tol = self.rank_tolerance();
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

pub fn singular_values(a: &ComplexMatrix) -> Result<Vec<f64>> {
    Ok(Svd::new(a)?.singular_values)
}

/// Ratio of the largest to the smallest singular value (infinite when the
/// smallest is zero).
pub fn condition_number(a: &ComplexMatrix) -> Result<f64> {
    let s = singular_values(a)?;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Moore-Penrose pseudo-inverse via SVD.
///
/// Singular values at or below `eps * max(rows, cols) * sigma_max` are
/// dropped. The all-zero matrix maps to the zero matrix of transposed shape.
pub fn pseudo_inverse(a: &ComplexMatrix) -> Result<ComplexMatrix> {
    let svd = Svd::new(a)?;
    let tol = svd.rank_tolerance();
    let (rows, cols) = a.shape();
    let rank = svd.singular_values.len();
    // A⁺ = V diag(1/s) Uᴴ, accumulated one singular triplet at a time.
    let mut out = ComplexMatrix::zeros(cols, rows);
    for (r, &s) in svd.singular_values.iter().enumerate().take(rank) {
        if s <= tol || s == 0.0 {
            continue;
        }
        let inv = 1.0 / s;
        for i in 0..cols {
            let v = svd.v_adjoint.get(r, i).conj() * inv;
            for j in 0..rows {
                let u = svd.u.get(j, r).conj();
                let cur = out.get(i, j);
                out.set(i, j, cur + v * u);
            }
        }
    }
    debug_assert!(out.is_finite());
    Ok(out)
}
