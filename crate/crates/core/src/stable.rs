//! Free symmetric α-stable transition density and its comparability envelope.
//!
//! The density is the Fourier integral
//! `p_t(r) = (1/π) ∫_0^∞ cos(r z) exp(-t z^α) dz`. By scaling every evaluation
//! is reduced to `t = 1`: `p_t(r) = t^{-1/α} p_1(r t^{-1/α})`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{domain, Error, Result};
use crate::quad;

/// Relative accuracy targeted by [`stable_pdf`].
pub const PDF_TOLERANCE: f64 = 1e-9;
/// Relative accuracy accepted for α ≥ [`NEAR_GAUSSIAN_ALPHA`].
pub const PDF_TOLERANCE_NEAR_GAUSSIAN: f64 = 1e-7;
/// Above this index the integrand is nearly Gaussian and the tolerance is relaxed.
pub const NEAR_GAUSSIAN_ALPHA: f64 = 1.95;

// exp(-u^α) < 1e-18 beyond u = 41.45^{1/α}
const LOG_CUTOFF: f64 = 41.45;
const DIRECT_INTERVALS: usize = 240;
const EULER_TERMS: usize = 40;

/// Stability index α ∈ (0, 2) together with the Lévy density prefactor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    alpha: f64,
    levy_prefactor: f64,
}

impl StableParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 2.0) {
            return Err(domain(format!("stability index must lie in (0, 2), got {alpha}")));
        }
        Ok(Self {
            alpha,
            levy_prefactor: levy_prefactor(alpha),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The constant `c` in the Lévy density `ν(y) = c |y|^{-1-α}`.
    pub fn levy_prefactor(&self) -> f64 {
        self.levy_prefactor
    }

    /// Relative tolerance that [`stable_pdf`] guarantees for this α.
    pub fn pdf_tolerance(&self) -> f64 {
        if self.alpha >= NEAR_GAUSSIAN_ALPHA {
            PDF_TOLERANCE_NEAR_GAUSSIAN
        } else {
            PDF_TOLERANCE
        }
    }
}

/// `α Γ(α) sin(πα/2) / π`, written as `Γ(1+α) sin(πα/2) / π`.
pub fn levy_prefactor(alpha: f64) -> f64 {
    gamma(1.0 + alpha) * (0.5 * PI * alpha).sin() / PI
}

/// A density value with its estimated absolute error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEval {
    pub value: f64,
    pub error: f64,
}

/// Transition density `p_t(r)` of the free symmetric α-stable process.
pub fn stable_pdf(params: &StableParams, t: f64, r: f64) -> Result<f64> {
    stable_pdf_detailed(params, t, r).map(|e| e.value)
}

/// Like [`stable_pdf`], also returning the error estimate of the quadrature.
pub fn stable_pdf_detailed(params: &StableParams, t: f64, r: f64) -> Result<DensityEval> {
    check_time(t)?;
    if !r.is_finite() {
        return Err(domain(format!("displacement must be finite, got {r}")));
    }
    let alpha = params.alpha;
    let scale = t.powf(1.0 / alpha);
    let eval = standard_density(alpha, r.abs() / scale)?;
    let tol = params.pdf_tolerance();
    if eval.error > tol * eval.value.abs() {
        return Err(Error::Accuracy {
            requested: tol,
            achieved: eval.error / eval.value.abs(),
        });
    }
    Ok(DensityEval {
        value: eval.value.max(0.0) / scale,
        error: eval.error / scale,
    })
}

/// `min(t^{-1/α}, t |r|^{-1-α})`, equal to `t^{-1/α}` at `r = 0`.
pub fn free_envelope(params: &StableParams, t: f64, r: f64) -> Result<f64> {
    check_time(t)?;
    Ok(envelope(params.alpha, t, r))
}

pub(crate) fn envelope(alpha: f64, t: f64, r: f64) -> f64 {
    let near = t.powf(-1.0 / alpha);
    let r = r.abs();
    if r == 0.0 {
        near
    } else {
        near.min(t * r.powf(-1.0 - alpha))
    }
}

/// Mass of `p_t` on `|r| > radius` from the large-distance expansion
/// `p_t(r) = Σ_k (-1)^{k+1} Γ(αk+1) sin(παk/2) t^k r^{-αk-1} / (π k!)`,
/// truncated at its smallest term.
pub fn tail_mass(params: &StableParams, t: f64, radius: f64) -> Result<f64> {
    check_time(t)?;
    if !(radius > 0.0) {
        return Err(domain("tail radius must be positive"));
    }
    let alpha = params.alpha;
    let x = t * radius.powf(-alpha);
    let mut sum = 0.0;
    let mut previous = f64::INFINITY;
    for k in 1..200 {
        let kf = k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let log_mag = ln_gamma(alpha * kf + 1.0) - ln_gamma(kf + 1.0) + kf * x.ln();
        let mag = log_mag.exp() / (PI * alpha * kf);
        if mag > previous {
            break;
        }
        previous = mag;
        sum += sign * mag * (0.5 * PI * alpha * kf).sin();
        if mag < 1e-17 * sum.abs() {
            break;
        }
    }
    Ok(2.0 * sum)
}

/// Total mass of `p_t`: trapezoid rule with `points` panels on `[0, R]`,
/// `R = 50 t^{1/α}`, mirrored, plus the analytic tail beyond `R`.
///
/// The trapezoid rule is spectrally accurate here for α ≳ 0.5.
pub fn total_mass(params: &StableParams, t: f64, points: usize) -> Result<f64> {
    check_time(t)?;
    if points < 2 {
        return Err(domain("need at least two trapezoid panels"));
    }
    let radius = 50.0 * t.powf(1.0 / params.alpha);
    let step = radius / points as f64;
    let mut inner = 0.5 * (stable_pdf(params, t, 0.0)? + stable_pdf(params, t, radius)?);
    for k in 1..points {
        inner += stable_pdf(params, t, k as f64 * step)?;
    }
    Ok(2.0 * inner * step + tail_mass(params, t, radius)?)
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time must be positive, got {t}")))
    }
}

/// `p_1(ρ)` for `ρ ≥ 0`.
fn standard_density(alpha: f64, rho: f64) -> Result<DensityEval> {
    if rho == 0.0 {
        return Ok(DensityEval {
            value: gamma(1.0 + 1.0 / alpha) / PI,
            error: 0.0,
        });
    }
    if rho >= 4.0 {
        if let Some(eval) = large_distance_series(alpha, rho) {
            return Ok(eval);
        }
    }
    let u_max = LOG_CUTOFF.powf(1.0 / alpha);
    let first_zero = 0.5 * PI / rho;
    let integrand = |u: f64| (rho * u).cos() * (-u.powf(alpha)).exp();
    if first_zero >= u_max {
        let (v, e) = graded(integrand, u_max);
        return Ok(DensityEval {
            value: v / PI,
            error: e / PI,
        });
    }

    let (head, mut error) = graded(integrand, first_zero);
    let period = PI / rho;
    let mut sum = head;
    let mut k = 0usize;
    loop {
        let a = first_zero + k as f64 * period;
        if a >= u_max {
            return Ok(DensityEval {
                value: sum / PI,
                error: error / PI,
            });
        }
        if k == DIRECT_INTERVALS {
            break;
        }
        let (v, e) = half_period(&integrand, a, a + period);
        sum += v;
        error += e;
        k += 1;
    }

    // Slowly decaying alternating tail: repeated averaging of partial sums.
    let mut terms = Vec::with_capacity(EULER_TERMS);
    for j in 0..EULER_TERMS {
        let a = first_zero + (k + j) as f64 * period;
        let (v, e) = half_period(&integrand, a, a + period);
        terms.push(v);
        error += e;
    }
    let full = averaged_sum(&terms);
    let shorter = averaged_sum(&terms[..EULER_TERMS - 2]);
    error += (full - shorter).abs();
    Ok(DensityEval {
        value: (sum + full) / PI,
        error: error / PI,
    })
}

/// Euler transform of an alternating series by repeated averaging of its partial sums.
fn averaged_sum(terms: &[f64]) -> f64 {
    let mut partial: Vec<f64> = terms
        .iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    while partial.len() > 1 {
        partial = partial.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    partial[0]
}

/// Integral over `[0, b]` on panels graded geometrically toward 0, where
/// `exp(-u^α)` has an algebraic cusp. Returns (value, error estimate).
fn graded<F: Fn(f64) -> f64>(f: F, b: f64) -> (f64, f64) {
    const LEVELS: i32 = 48;
    let mut fine = 0.0;
    let mut coarse = 0.0;
    let mut hi = b;
    for _ in 0..LEVELS {
        let lo = 0.5 * hi;
        fine += quad::panel(24, lo, hi, &f);
        coarse += quad::panel(16, lo, hi, &f);
        hi = lo;
    }
    fine += quad::panel(24, 0.0, hi, &f);
    coarse += quad::panel(16, 0.0, hi, &f);
    (fine, (fine - coarse).abs())
}

/// Adaptive integral of a half period of the oscillation.
fn half_period<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let scale = (b - a) * f(a).abs().max(f(b).abs()).max(f(0.5 * (a + b)).abs());
    adaptive(f, a, b, 1e-15 * scale + f64::MIN_POSITIVE, 12)
}

fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let whole = quad::panel(20, a, b, f);
    let split = quad::panel(20, a, m, f) + quad::panel(20, m, b, f);
    let err = (split - whole).abs();
    if err <= tol || depth == 0 {
        return (split, err);
    }
    let (l, el) = adaptive(f, a, m, 0.5 * tol, depth - 1);
    let (r, er) = adaptive(f, m, b, 0.5 * tol, depth - 1);
    (l + r, el + er)
}

/// Large-distance expansion of `p_1(ρ)`; `None` when it cannot deliver full accuracy.
fn large_distance_series(alpha: f64, rho: f64) -> Option<DensityEval> {
    let log_rho = rho.ln();
    let mut sum = 0.0;
    let mut largest: f64 = 0.0;
    let mut previous = f64::INFINITY;
    for k in 1..400 {
        let kf = k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        let log_mag = ln_gamma(alpha * kf + 1.0) - ln_gamma(kf + 1.0) - (alpha * kf + 1.0) * log_rho;
        let mag = log_mag.exp();
        if mag > previous && k > 2 {
            return None;
        }
        previous = mag;
        let term = sign * mag * (0.5 * PI * alpha * kf).sin() / PI;
        sum += term;
        largest = largest.max(term.abs());
        if mag < 1e-16 * sum.abs() {
            if largest > 1e4 * sum.abs() {
                return None;
            }
            return Some(DensityEval {
                value: sum,
                error: mag + 1e-16 * largest,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cauchy(t: f64, r: f64) -> f64 {
        t / (PI * (t * t + r * r))
    }

    #[test]
    fn cauchy_examples() {
        let p = StableParams::new(1.0).unwrap();
        assert!((stable_pdf(&p, 1.0, 0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        let v = stable_pdf(&p, 2.0, 1.0).unwrap();
        assert!((v - 2.0 / (5.0 * PI)).abs() < 1e-9 * v);
    }

    #[test]
    fn cauchy_across_regimes() {
        let p = StableParams::new(1.0).unwrap();
        for &r in &[1e-6, 1e-3, 0.01, 0.03, 0.1, 0.5, 1.0, 2.0, 3.9, 4.1, 10.0, 49.0, 200.0] {
            let v = stable_pdf(&p, 1.0, r).unwrap();
            let exact = cauchy(1.0, r);
            assert!(((v - exact) / exact).abs() < 1e-9, "r={r}: {v} vs {exact}");
        }
    }

    #[test]
    fn origin_value_matches_gamma_identity() {
        let p = StableParams::new(1.5).unwrap();
        let v = stable_pdf(&p, 1.0, 0.0).unwrap();
        assert!((v - 0.287353).abs() < 1e-6);
        // Near-origin evaluation goes through the quadrature path.
        let near = stable_pdf(&p, 1.0, 1e-7).unwrap();
        assert!(((near - v) / v).abs() < 1e-9);
    }

    #[test]
    fn gaussian_limit_is_close_for_alpha_near_two() {
        // α → 2: p_1 → N(0, 2) density.
        let p = StableParams::new(1.99).unwrap();
        let g = |r: f64| (-r * r / 4.0).exp() / (4.0 * PI).sqrt();
        let v = stable_pdf(&p, 1.0, 0.5).unwrap();
        assert!(((v - g(0.5)) / g(0.5)).abs() < 0.02);
    }

    #[test]
    fn symmetric_in_displacement() {
        let p = StableParams::new(0.7).unwrap();
        for &r in &[0.2, 1.3, 7.0] {
            assert_eq!(stable_pdf(&p, 1.3, r).unwrap(), stable_pdf(&p, 1.3, -r).unwrap());
        }
    }

    #[test]
    fn quadrature_agrees_with_series_where_both_apply() {
        for &(alpha, rho) in &[(0.6, 6.0), (1.3, 20.0), (1.7, 20.0)] {
            let series = large_distance_series(alpha, rho).unwrap().value;
            let u_max = LOG_CUTOFF.powf(1.0 / alpha);
            let f = |u: f64| (rho * u).cos() * (-u.powf(alpha)).exp();
            // Brute force: many fixed panels over the support.
            let panels = 20_000;
            let w = u_max / panels as f64;
            let mut s = 0.0;
            let mut hi = w;
            for _ in 0..60 {
                s += quad::panel(30, 0.5 * hi, hi, f);
                hi *= 0.5;
            }
            for k in 1..panels {
                s += quad::panel(12, k as f64 * w, (k + 1) as f64 * w, f);
            }
            let brute = s / PI;
            assert!(((series - brute) / brute).abs() < 1e-7, "α={alpha}: {series} {brute}");
        }
    }

    #[test]
    fn small_alpha_uses_acceleration() {
        let p = StableParams::new(0.4).unwrap();
        let v = stable_pdf_detailed(&p, 1.0, 0.8).unwrap();
        assert!(v.value > 0.0);
        assert!(v.error < 1e-9 * v.value);
        // Compare with the convergent large-distance series at the same point.
        let s: f64 = (1..400)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (ln_gamma(0.4 * kf + 1.0) - ln_gamma(kf + 1.0) - (0.4 * kf + 1.0) * 0.8f64.ln()).exp()
                    * (0.2 * PI * kf).sin()
                    / PI
            })
            .sum();
        assert!(((v.value - s) / s).abs() < 1e-8);
    }

    #[test]
    fn envelope_examples() {
        let one = StableParams::new(1.0).unwrap();
        assert_eq!(free_envelope(&one, 1.0, 0.0).unwrap(), 1.0);
        // t |r|^{-1-α} = 2^{-2} for α = 1.
        assert!((free_envelope(&one, 1.0, 2.0).unwrap() - 0.25).abs() < 1e-15);
        let half = StableParams::new(0.5).unwrap();
        assert!((free_envelope(&half, 4.0, 1.0).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(StableParams::new(2.0).is_err());
        assert!(StableParams::new(0.0).is_err());
        let p = StableParams::new(1.0).unwrap();
        assert!(matches!(stable_pdf(&p, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(free_envelope(&p, -1.0, 1.0).is_err());
    }

    #[test]
    fn prefactor_matches_gamma_expression() {
        for &a in &[0.3, 1.0, 1.5, 1.9] {
            let literal = a * gamma(a) * (PI * a / 2.0).sin() / PI;
            assert!((levy_prefactor(a) - literal).abs() < 1e-14 * literal);
        }
        assert!((levy_prefactor(1.0) - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn cauchy_tail_mass() {
        let p = StableParams::new(1.0).unwrap();
        let exact = 2.0 * (1.0 / 50.0f64).atan() / PI;
        assert!((tail_mass(&p, 1.0, 50.0).unwrap() - exact).abs() < 1e-15);
    }
}
