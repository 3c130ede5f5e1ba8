//! Dense matrix exponential by scaling and squaring with a diagonal Padé approximant.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef};

use crate::error::{Error, Result};

/// Largest 1-norm of the scaled matrix fed to the Padé approximant.
pub const SCALED_NORM: f64 = 0.5;

// Degree-7 diagonal Padé coefficients; accurate to unit roundoff for ‖B‖₁ ≤ 0.95.
const PADE7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];

/// Operator 1-norm (largest absolute column sum).
pub fn norm_one(a: MatRef<'_, f64>) -> f64 {
    (0..a.ncols())
        .map(|j| (0..a.nrows()).map(|i| a[(i, j)].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(t A)` together with the number of squarings used.
pub fn expm_scaled(a: MatRef<'_, f64>, t: f64) -> Result<(Mat<f64>, u32)> {
    let n = a.nrows();
    let norm = t.abs() * norm_one(a);
    if !norm.is_finite() {
        return Err(Error::Divergence("generator has non-finite entries".into()));
    }
    let squarings = if norm > SCALED_NORM {
        (norm / SCALED_NORM).log2().ceil() as u32
    } else {
        0
    };
    if squarings > 1000 {
        return Err(Error::Divergence(format!("‖tA‖₁ = {norm:e} is too large to exponentiate")));
    }
    let scale = t / 2f64.powi(squarings as i32);
    let b = Mat::from_fn(n, n, |i, j| scale * a[(i, j)]);
    let b2 = &b * &b;
    let b4 = &b2 * &b2;
    let b6 = &b4 * &b2;
    let identity = Mat::<f64>::identity(n, n);
    let odd = Mat::from_fn(n, n, |i, j| {
        PADE7[7] * b6[(i, j)] + PADE7[5] * b4[(i, j)] + PADE7[3] * b2[(i, j)] + PADE7[1] * identity[(i, j)]
    });
    let u = &b * &odd;
    let v = Mat::from_fn(n, n, |i, j| {
        PADE7[6] * b6[(i, j)] + PADE7[4] * b4[(i, j)] + PADE7[2] * b2[(i, j)] + PADE7[0] * identity[(i, j)]
    });
    let denominator = &v - &u;
    let numerator = &v + &u;
    let mut r = denominator.partial_piv_lu().solve(&numerator);
    for _ in 0..squarings {
        r = &r * &r;
        if !all_finite(r.as_ref()) {
            return Err(Error::Divergence(
                "matrix exponential overflowed; the coupling is far above the critical constant".into(),
            ));
        }
    }
    if !all_finite(r.as_ref()) {
        return Err(Error::LinearAlgebra("Padé denominator is singular".into()));
    }
    Ok((r, squarings))
}

/// `exp(t A)`.
pub fn expm(a: MatRef<'_, f64>, t: f64) -> Result<Mat<f64>> {
    expm_scaled(a, t).map(|(m, _)| m)
}

fn all_finite(a: MatRef<'_, f64>) -> bool {
    (0..a.ncols()).all(|j| (0..a.nrows()).all(|i| a[(i, j)].is_finite()))
}
