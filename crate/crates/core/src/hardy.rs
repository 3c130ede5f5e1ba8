//! Closed-form scalar objects: the coupling constants `κ_β`, the `δ ↔ κ`
//! bijection, the two-sided estimate envelopes and the auxiliary comparison
//! functions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{domain, Error, Result};
use crate::stable::envelope;

/// `κ_β = Γ(β+α/2) Γ(1−β+α/2) / (Γ(β) Γ(1−β))`.
///
/// Evaluated through `Γ(β)Γ(1−β) = π / sin(πβ)`, which extends continuously
/// to 0 at both ends of (0, 1).
pub fn kappa_of_beta(alpha: f64, beta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    Ok(kappa_unchecked(alpha, beta))
}

fn kappa_unchecked(alpha: f64, beta: f64) -> f64 {
    gamma(beta + 0.5 * alpha) * gamma(1.0 - beta + 0.5 * alpha) * (PI * beta).sin() / PI
}

/// The critical constant `κ* = κ_{1/2} = Γ((1+α)/2)² / π`.
pub fn kappa_star(alpha: f64) -> f64 {
    let g = gamma(0.5 * (1.0 + alpha));
    g * g / PI
}

/// The unique `δ ∈ (0, 1/2]` with `κ_δ = κ`.
pub fn delta_of_kappa(alpha: f64, kappa: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let star = kappa_star(alpha);
    if !(kappa > 0.0) {
        return Err(domain(format!("coupling must be positive, got {kappa}")));
    }
    if kappa > star * (1.0 + 1e-13) {
        return Err(domain(format!(
            "coupling {kappa} exceeds the critical constant κ* = {star}; above it the heat kernel blows up"
        )));
    }
    if kappa >= star * (1.0 - 1e-15) {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if kappa_unchecked(alpha, mid) < kappa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 2.0 {
        Ok(())
    } else {
        Err(domain(format!("stability index must lie in (0, 2), got {alpha}")))
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("{name} must be positive, got {v}")))
    }
}

/// The triple `(α, δ, κ = κ_δ)` with `δ ∈ (0, 1/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardyParams {
    alpha: f64,
    delta: f64,
    kappa: f64,
}

impl HardyParams {
    pub fn from_delta(alpha: f64, delta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(domain(format!("delta must lie in (0, 1/2], got {delta}")));
        }
        let kappa = if delta == 0.5 {
            kappa_star(alpha)
        } else {
            kappa_unchecked(alpha, delta)
        };
        Ok(Self { alpha, delta, kappa })
    }

    pub fn from_kappa(alpha: f64, kappa: f64) -> Result<Self> {
        let delta = delta_of_kappa(alpha, kappa)?;
        Ok(Self { alpha, delta, kappa })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Exponent `α/2 − δ` of the boundary factors.
    pub fn boundary_exponent(&self) -> f64 {
        0.5 * self.alpha - self.delta
    }
}

/// The two-sided estimate of the perturbed kernel:
/// `(1∧x t^{-1/α})^{α/2−δ} (1∧y t^{-1/α})^{α/2−δ} min(t^{-1/α}, t|x−y|^{-1-α})`.
pub fn main_rhs(hp: &HardyParams, t: f64, x: f64, y: f64) -> Result<f64> {
    check_positive("t", t)?;
    check_positive("x", x)?;
    check_positive("y", y)?;
    let a = hp.alpha;
    let s = t.powf(-1.0 / a);
    let e = hp.boundary_exponent();
    Ok((x * s).min(1.0).powf(e) * (y * s).min(1.0).powf(e) * envelope(a, t, x - y))
}

/// The Dirichlet estimate envelope
/// `(1 ∧ x^{α/2}/t^{1/2})(1 ∧ y^{α/2}/t^{1/2}) min(t^{-1/α}, t|x−y|^{-1-α})`.
pub fn dirichlet_rhs(alpha: f64, t: f64, x: f64, y: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_positive("t", t)?;
    check_positive("x", x)?;
    check_positive("y", y)?;
    let st = t.sqrt();
    let bx = (x.powf(0.5 * alpha) / st).min(1.0);
    let by = (y.powf(0.5 * alpha) / st).min(1.0);
    Ok(bx * by * envelope(alpha, t, x - y))
}

/// `min(y^{α/2} / t^{1+1/α}, t^{1/2} / y^{1+α})`.
pub fn eta_envelope(alpha: f64, t: f64, y: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_positive("t", t)?;
    check_positive("y", y)?;
    let near = y.powf(0.5 * alpha) / t.powf(1.0 + 1.0 / alpha);
    let far = t.sqrt() / y.powf(1.0 + alpha);
    Ok(near.min(far))
}

/// `H(t, x) = t^{δ/α} x^{-δ} + 1`.
pub fn boundary_weight(hp: &HardyParams, t: f64, x: f64) -> Result<f64> {
    check_positive("t", t)?;
    check_positive("x", x)?;
    Ok(t.powf(hp.delta / hp.alpha) * x.powf(-hp.delta) + 1.0)
}

/// `H_β(x) = x^{-β} + 1`.
pub fn power_weight(beta: f64, x: f64) -> Result<f64> {
    check_positive("x", x)?;
    Ok(x.powf(-beta) + 1.0)
}

/// `v(y) = y^α / (2^{α+1} κ)`.
pub fn near_radius(hp: &HardyParams, y: f64) -> Result<f64> {
    check_positive("y", y)?;
    Ok(y.powf(hp.alpha) / (2f64.powf(hp.alpha + 1.0) * hp.kappa))
}

/// Parameters of the profile `f(t) = C t^{(−α/2−β+γ)/α}` for `t > 0`.
///
/// The normalization `C` is fixed by calibration (see
/// [`crate::verify::calibrate_profile`]); until then the profile cannot be evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    alpha: f64,
    beta: f64,
    gamma: f64,
    c_norm: Option<f64>,
}

impl ProfileParams {
    /// Requires `β ∈ (0, 1)` and `γ ∈ (β + α/2, 1 + α/2)`.
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        check_alpha(alpha)?;
        if !(beta > 0.0 && beta < 1.0) {
            return Err(domain(format!("beta must lie in (0, 1), got {beta}")));
        }
        if !(gamma > beta + 0.5 * alpha && gamma < 1.0 + 0.5 * alpha) {
            return Err(domain(format!(
                "gamma must lie in ({}, {}), got {gamma}",
                beta + 0.5 * alpha,
                1.0 + 0.5 * alpha
            )));
        }
        Ok(Self {
            alpha,
            beta,
            gamma,
            c_norm: None,
        })
    }

    pub fn with_norm(mut self, c_norm: f64) -> Result<Self> {
        check_positive("normalization", c_norm)?;
        self.c_norm = Some(c_norm);
        Ok(self)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn c_norm(&self) -> Option<f64> {
        self.c_norm
    }

    /// `(−α/2 − β + γ) / α`.
    pub fn exponent(&self) -> f64 {
        (-0.5 * self.alpha - self.beta + self.gamma) / self.alpha
    }
}

/// `f(t) = C t^{(−α/2−β+γ)/α}` for `t > 0` and 0 otherwise.
pub fn f_profile(pp: &ProfileParams, t: f64) -> Result<f64> {
    let c = pp
        .c_norm
        .ok_or_else(|| Error::State("profile normalization has not been calibrated".into()))?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(c * t.powf(pp.exponent()))
}
