//! Dense complex matrices and the special functions the estimators need.
//!
//! Everything here is a pure function of its inputs and runs in double
//! precision. Matrices are row-major with separate real and imaginary planes.

pub(crate) mod bessel;
mod matrix;
mod pinv;

pub use bessel::{
    bessel_ratio, bessel_ratio_asymptotic, bessel_ratio_derivative, bessel_ratio_series,
    BESSEL_CROSSOVER,
};
pub use matrix::{phase_project, ComplexMatrix, RealMatrix};
pub use pinv::{condition_number, pseudo_inverse, singular_values, Svd};
