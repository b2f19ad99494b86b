//! `R(κ) = I₁(κ) / I₀(κ)`, the EM-GS soft filter.
//!
//! Below [`BESSEL_CROSSOVER`] both functions are summed from their power
//! series (all terms positive, no cancellation). Above it the ratio of the
//! exponentially scaled large-argument expansions is used, so `I₀` and `I₁`
//! themselves are never formed and nothing overflows near κ ≈ 700.

use crate::error::{Error, Result};

/// Switch point between the power series and the large-argument expansion.
pub const BESSEL_CROSSOVER: f64 = 50.0;

const SERIES_MAX_TERMS: usize = 500;
const ASYMPTOTIC_MAX_TERMS: usize = 60;

/// `I₁(κ)/I₀(κ)` for finite `κ ≥ 0`. The value lies in `[0, 1)` and is
/// nondecreasing in `κ`.
pub fn bessel_ratio(kappa: f64) -> Result<f64> {
    if !kappa.is_finite() || kappa < 0.0 {
        return Err(Error::invalid(
            "bessel_ratio",
            format!("argument must be finite and nonnegative, got {kappa}"),
        ));
    }
    Ok(ratio_unchecked(kappa))
}

#[inline]
pub(crate) fn ratio_unchecked(kappa: f64) -> f64 {
    if kappa <= BESSEL_CROSSOVER {
        bessel_ratio_series(kappa)
    } else {
        bessel_ratio_asymptotic(kappa)
    }
}

/// Ratio of the power series
/// `I₀ = Σ t_j`, `I₁ = (κ/2) Σ t_j/(j+1)` with `t_j = (κ²/4)^j / (j!)²`.
pub fn bessel_ratio_series(kappa: f64) -> f64 {
    if kappa == 0.0 {
        return 0.0;
    }
    let q = 0.25 * kappa * kappa;
    let mut term = 1.0;
    let mut s0 = 1.0;
    let mut s1 = 1.0;
    for j in 1..SERIES_MAX_TERMS {
        let jf = j as f64;
        term *= q / (jf * jf);
        s0 += term;
        s1 += term / (jf + 1.0);
        if term < 1e-18 * s0 {
            break;
        }
    }
    0.5 * kappa * s1 / s0
}

/// Ratio of the large-argument expansions
/// `I_ν(κ) e^{-κ} √(2πκ) ~ Σ_k (-1)^k a_k(ν) κ^{-k}`,
/// `a_k(ν) = a_{k-1}(ν) (4ν² - (2k-1)²) / (8k)`, summed until the terms fall
/// below double precision or start to grow.
pub fn bessel_ratio_asymptotic(kappa: f64) -> f64 {
    let inv = 1.0 / kappa;
    let (mut t0, mut t1) = (1.0f64, 1.0f64);
    let (mut s0, mut s1) = (1.0, 1.0);
    for k in 1..ASYMPTOTIC_MAX_TERMS {
        let odd = (2 * k - 1) as f64;
        let denom = 8.0 * k as f64;
        // (-1)^k folded into the recurrence.
        let n0 = -t0 * (-odd * odd) / denom * inv;
        let n1 = -t1 * (4.0 - odd * odd) / denom * inv;
        if n0.abs() > t0.abs() || n1.abs() > t1.abs() {
            break;
        }
        t0 = n0;
        t1 = n1;
        s0 += t0;
        s1 += t1;
        if t0.abs() < 1e-18 * s0.abs() && t1.abs() < 1e-18 * s1.abs() {
            break;
        }
    }
    s1 / s0
}

/// `dR/dκ = 1 - R/κ - R²`, with the limit `1/2` at `κ = 0`.
pub fn bessel_ratio_derivative(kappa: f64) -> f64 {
    if kappa < 1e-8 {
        return 0.5 - 3.0 * kappa * kappa / 16.0;
    }
    let r = ratio_unchecked(kappa);
    1.0 - r / kappa - r * r
}
