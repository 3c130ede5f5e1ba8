//! Numerical checks of the heat-kernel estimates and the identities behind them.
//!
//! Each check returns a report with its entries, extrema, tolerances and a
//! pass flag. Identities are asserted on the interior nodes `[10h, L/8]`,
//! where truncation at `L` and the cell structure near 0 are negligible.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::grid::{build_generator, Grid};
use crate::hardy::{delta_of_kappa, dirichlet_rhs, kappa_of_beta, kappa_star, main_rhs, HardyParams, ProfileParams};
use crate::kernel::{check_time, KernelSource, SpectralKernel};
use crate::montecarlo::{estimate_kernel_mc, MCEstimate, PathConfig};
use crate::perturbation::{SeriesEngine, SeriesResult, SeriesSettings, TimeLadder};
use crate::quad;
use crate::stable::StableParams;

/// `count` points from `lo` to `hi`, equally spaced in `ln x`.
pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (a + (b - a) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Times `{0.5, 1, 2}` of the default sweep.
pub fn default_times() -> Vec<f64> {
    vec![0.5, 1.0, 2.0]
}

/// Thirteen log-spaced points in `[0.05, 5]`.
pub fn default_points() -> Vec<f64> {
    log_spaced(0.05, 5.0, 13)
}

/// Where the kernel values of a report came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub route: String,
    pub alpha: f64,
    pub kappa: f64,
    pub length: f64,
    pub n: usize,
    pub spacing: f64,
    pub cutoff_eps: f64,
}

impl Provenance {
    pub fn of(source: &dyn KernelSource) -> Self {
        let g = source.grid();
        Self {
            route: source.route(),
            alpha: source.alpha(),
            kappa: source.kappa(),
            length: g.length(),
            n: g.n(),
            spacing: g.spacing(),
            cutoff_eps: g.cutoff_eps(),
        }
    }
}

/// One row of a check: `metric` compares `value` against `reference`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckEntry {
    pub t: f64,
    pub x: f64,
    pub value: f64,
    pub reference: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub min: f64,
    pub max: f64,
}

impl Extrema {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        values.into_iter().fold(
            Self {
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            },
            |e, v| Self {
                min: e.min.min(v),
                max: e.max.max(v),
            },
        )
    }
}

/// Report of a single check, serialized as
/// `{check_name, params, entries, extrema, tolerances, pass}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub params: BTreeMap<String, Value>,
    pub entries: Vec<CheckEntry>,
    /// Extrema of the entry metrics.
    pub extrema: Extrema,
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
}

impl CheckReport {
    /// Assembles a report; the extrema are taken over the entry metrics.
    pub fn new(name: &str, params: BTreeMap<String, Value>, entries: Vec<CheckEntry>, tolerances: &[(&str, f64)], pass: bool) -> Self {
        Self {
            check_name: name.into(),
            params,
            extrema: Extrema::of(entries.iter().map(|e| e.metric)),
            entries,
            tolerances: tolerances.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            pass,
        }
    }

    /// Largest `|metric|`.
    pub fn worst(&self) -> f64 {
        self.extrema.min.abs().max(self.extrema.max.abs())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Entries as CSV with columns `check_name,t,x,value,reference,metric`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["check_name", "t", "x", "value", "reference", "metric"])?;
        for e in &self.entries {
            out.write_record([
                self.check_name.clone(),
                e.t.to_string(),
                e.x.to_string(),
                e.value.to_string(),
                e.reference.to_string(),
                e.metric.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn base_params(source: &dyn KernelSource) -> BTreeMap<String, Value> {
    let mut p = BTreeMap::new();
    p.insert("provenance".into(), json!(Provenance::of(source)));
    p
}

/// One triple of a ratio sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Kernel-to-envelope ratios over a product set of `(t, x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub check_name: String,
    pub entries: Vec<SweepEntry>,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub grid_meta: Provenance,
}

impl SweepReport {
    /// `ratio_max / ratio_min`.
    pub fn bracket(&self) -> f64 {
        self.ratio_max / self.ratio_min
    }

    /// Report with `pass = bracket ≤ max_bracket`; entry metric is the ratio.
    pub fn to_check_report(&self, max_bracket: f64) -> CheckReport {
        let mut params = BTreeMap::new();
        params.insert("provenance".into(), json!(self.grid_meta));
        params.insert("bracket".into(), json!(self.bracket()));
        let entries = self
            .entries
            .iter()
            .map(|e| CheckEntry {
                t: e.t,
                x: e.x,
                value: e.value,
                reference: e.rhs,
                metric: e.ratio,
            })
            .collect();
        let mut r = CheckReport::new(&self.check_name, params, entries, &[("max_bracket", max_bracket)], self.bracket() <= max_bracket);
        r.params.insert("y".into(), json!(self.entries.iter().map(|e| e.y).collect::<Vec<_>>()));
        r
    }
}

fn sweep<F>(name: &str, source: &dyn KernelSource, t_set: &[f64], x_set: &[f64], y_set: &[f64], rhs: F) -> Result<SweepReport>
where
    F: Fn(f64, f64, f64) -> Result<f64> + Sync,
{
    if t_set.is_empty() || x_set.is_empty() || y_set.is_empty() {
        return Err(domain("sweep sets must be non-empty"));
    }
    let attach = |t: f64, x: f64, y: f64, e: Error| Error::Evaluation { t, x, y, source: Box::new(e) };
    let per_time: Vec<Result<Vec<SweepEntry>>> = t_set
        .par_iter()
        .map(|&t| {
            let values = match source.values(t, x_set, y_set) {
                Ok(v) => v,
                Err(e) => {
                    // Find the first triple that fails on its own.
                    for &x in x_set {
                        for &y in y_set {
                            if let Err(e) = source.value(t, x, y) {
                                return Err(attach(t, x, y, e));
                            }
                        }
                    }
                    return Err(attach(t, x_set[0], y_set[0], e));
                }
            };
            let mut out = Vec::with_capacity(x_set.len() * y_set.len());
            for (a, &x) in x_set.iter().enumerate() {
                for (b, &y) in y_set.iter().enumerate() {
                    let value = values[a][b];
                    let r = rhs(t, x, y).map_err(|e| attach(t, x, y, e))?;
                    if !(value > 0.0 && value.is_finite()) {
                        return Err(attach(t, x, y, Error::Accuracy { requested: 0.0, achieved: value }));
                    }
                    out.push(SweepEntry {
                        t,
                        x,
                        y,
                        value,
                        rhs: r,
                        ratio: value / r,
                    });
                }
            }
            Ok(out)
        })
        .collect();
    let mut entries = Vec::new();
    for r in per_time {
        entries.extend(r?);
    }
    let ex = Extrema::of(entries.iter().map(|e| e.ratio));
    Ok(SweepReport {
        check_name: name.into(),
        entries,
        ratio_min: ex.min,
        ratio_max: ex.max,
        grid_meta: Provenance::of(source),
    })
}

/// Ratios `p̃(t,x,y) / main_rhs(t,x,y)`; `source` must carry the coupling `κ_δ`.
pub fn sweep_main_estimate(source: &dyn KernelSource, hp: &HardyParams, t_set: &[f64], x_set: &[f64], y_set: &[f64]) -> Result<SweepReport> {
    if (source.kappa() - hp.kappa()).abs() > 1e-12 * hp.kappa().max(1.0) || (source.alpha() - hp.alpha()).abs() > 1e-15 {
        return Err(domain("kernel source and Hardy parameters disagree on (α, κ)"));
    }
    sweep("main_estimate", source, t_set, x_set, y_set, |t, x, y| main_rhs(hp, t, x, y))
}

/// Ratios `p_D(t,x,y) / dirichlet_rhs(t,x,y)` for a κ=0 source.
pub fn sweep_dirichlet(source: &dyn KernelSource, t_set: &[f64], x_set: &[f64], y_set: &[f64]) -> Result<SweepReport> {
    if source.kappa() != 0.0 {
        return Err(domain("the Dirichlet sweep needs a κ=0 kernel"));
    }
    let alpha = source.alpha();
    sweep("dirichlet_estimate", source, t_set, x_set, y_set, |t, x, y| dirichlet_rhs(alpha, t, x, y))
}

/// `Σ_j p^{(w)}(t,x_i,x_j) x_j^{-p} h` against `x_i^{-p}` on interior nodes;
/// metric is `value / reference − 1`.
fn power_identity(source: &dyn KernelSource, t_set: &[f64], power: f64) -> Result<Vec<CheckEntry>> {
    let grid = *source.grid();
    let alpha = source.alpha();
    let interior = grid.interior();
    if interior.is_empty() {
        return Err(domain("grid has no interior nodes in [10h, L/8]"));
    }
    let u: Vec<f64> = grid.nodes().iter().map(|&x| x.powf(0.5 * alpha - power)).collect();
    let mut entries = Vec::new();
    for &t in t_set {
        let lhs = source.integrate(t, &u)?;
        for &i in &interior {
            let x = grid.node(i);
            // x^{-α/2} Σ p(t,x,y) y^{α/2-p} h  versus  x^{-p}.
            let value = lhs[i] * x.powf(-0.5 * alpha);
            let reference = x.powf(-power);
            entries.push(CheckEntry {
                t,
                x,
                value,
                reference,
                metric: value / reference - 1.0,
            });
        }
    }
    Ok(entries)
}

fn check_source(source: &dyn KernelSource, hp: &HardyParams) -> Result<()> {
    if (source.kappa() - hp.kappa()).abs() > 1e-12 * hp.kappa().max(1.0) {
        return Err(domain(format!(
            "kernel uses κ = {} but the Hardy parameters give κ = {}",
            source.kappa(),
            hp.kappa()
        )));
    }
    Ok(())
}

/// Invariance of `x^{-δ}` for the weighted perturbed kernel; passes when the
/// worst relative error is at most `tol`.
pub fn check_invariance(source: &dyn KernelSource, hp: &HardyParams, t_set: &[f64], tol: f64) -> Result<CheckReport> {
    check_source(source, hp)?;
    let mut entries = power_identity(source, t_set, hp.delta())?;
    for e in &mut entries {
        e.metric = e.metric.abs();
    }
    let worst = entries.iter().map(|e| e.metric).fold(0.0, f64::max);
    let mut params = base_params(source);
    params.insert("delta".into(), json!(hp.delta()));
    params.insert("t".into(), json!(t_set));
    Ok(CheckReport::new("invariance", params, entries, &[("max_relative_error", tol)], worst <= tol))
}

/// Invariance with the weight exponent shifted to `δ + shift`; this must fail,
/// so the report passes when the worst error exceeds `min_error`.
pub fn invariance_negative_control(
    source: &dyn KernelSource,
    hp: &HardyParams,
    shift: f64,
    t_set: &[f64],
    min_error: f64,
) -> Result<CheckReport> {
    check_source(source, hp)?;
    let mut entries = power_identity(source, t_set, hp.delta() + shift)?;
    for e in &mut entries {
        e.metric = e.metric.abs();
    }
    let worst = entries.iter().map(|e| e.metric).fold(0.0, f64::max);
    let mut params = base_params(source);
    params.insert("delta".into(), json!(hp.delta()));
    params.insert("weight_exponent".into(), json!(hp.delta() + shift));
    params.insert("t".into(), json!(t_set));
    Ok(CheckReport::new(
        "invariance_negative_control",
        params,
        entries,
        &[("min_relative_error", min_error)],
        worst > min_error,
    ))
}

/// Row integrals of the weighted Dirichlet kernel equal 1.
pub fn check_weighted_mass(source: &dyn KernelSource, t_set: &[f64], tol: f64) -> Result<CheckReport> {
    if source.kappa() != 0.0 {
        return Err(domain("the mass identity holds for the κ=0 kernel"));
    }
    let mut entries = power_identity(source, t_set, 0.0)?;
    for e in &mut entries {
        e.metric = e.metric.abs();
    }
    let worst = entries.iter().map(|e| e.metric).fold(0.0, f64::max);
    let mut params = base_params(source);
    params.insert("t".into(), json!(t_set));
    Ok(CheckReport::new("weighted_mass", params, entries, &[("max_relative_error", tol)], worst <= tol))
}

/// `Σ_j p̃(t,x_i,x_j) x_j^{α/2−δ} h ≤ x_i^{α/2−δ} (1 + tol)`.
pub fn check_supermedian(source: &dyn KernelSource, hp: &HardyParams, t_set: &[f64], tol: f64) -> Result<CheckReport> {
    check_source(source, hp)?;
    // The weighted form of the same sum: x^{-α/2} Σ p̃ y^{α/2} y^{-δ} h against x^{-δ}.
    let entries = power_identity(source, t_set, hp.delta())?;
    let worst = entries.iter().map(|e| e.metric).fold(f64::NEG_INFINITY, f64::max);
    let mut params = base_params(source);
    params.insert("delta".into(), json!(hp.delta()));
    params.insert("t".into(), json!(t_set));
    Ok(CheckReport::new("supermedian", params, entries, &[("max_excess", tol)], worst <= tol))
}

/// Compares `Σ_j p̃^{(w)}(t,x,x_j) x_j^{-β} h` with `x^{-β}`: it must lie above
/// when `κ > κ_β` and below when `κ < κ_β`, up to the relative `dead_band`.
pub fn check_harmonicity_sign(source: &dyn KernelSource, beta: f64, t_set: &[f64], dead_band: f64) -> Result<CheckReport> {
    let alpha = source.alpha();
    let kappa = source.kappa();
    let delta = if kappa > 0.0 { delta_of_kappa(alpha, kappa)? } else { 0.0 };
    if !(beta > 0.0 && beta < 1.0 - delta) {
        return Err(domain(format!("beta must lie in (0, {}), got {beta}", 1.0 - delta)));
    }
    if (beta - delta).abs() < 1e-12 {
        return Err(domain("beta must differ from delta"));
    }
    let kappa_beta = kappa_of_beta(alpha, beta)?;
    let above = kappa > kappa_beta;
    let entries = power_identity(source, t_set, beta)?;
    let pass = entries.iter().all(|e| if above { e.metric >= -dead_band } else { e.metric <= dead_band });
    let mut params = base_params(source);
    params.insert("beta".into(), json!(beta));
    params.insert("delta".into(), json!(delta));
    params.insert("kappa_beta".into(), json!(kappa_beta));
    params.insert("expected_sign".into(), json!(if above { "+" } else { "-" }));
    params.insert("t".into(), json!(t_set));
    Ok(CheckReport::new("harmonicity_sign", params, entries, &[("dead_band", dead_band)], pass))
}

/// Quadrature for [`calibrate_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    /// Numerical integration runs over `[start, horizon]`; beyond it a fitted tail is added.
    pub horizon: f64,
    pub start: f64,
    /// Log-spaced panels on `[start, horizon]`.
    pub panels: usize,
    /// The calibrated profile must reproduce `x^{-β}` within this relative error.
    pub tol: f64,
    /// Accuracy error when the extrapolated tail exceeds this share of the integral.
    pub max_tail_fraction: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            horizon: 32.0,
            start: 1e-9,
            panels: 200,
            tol: 0.05,
            max_tail_fraction: 0.5,
        }
    }
}

/// Result of a profile calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c_norm: f64,
    /// Time exponent used in the integrand.
    pub exponent: f64,
    /// Node nearest to 1 used for normalization, and the integral there.
    pub anchor: f64,
    pub integral: f64,
    pub tail_fraction: f64,
    /// Cross-checks of `C I(x) x^β`, which should be 1.
    pub checks: Vec<CheckEntry>,
    pub pass: bool,
}

impl Calibration {
    pub fn params(&self, pp: &ProfileParams) -> Result<ProfileParams> {
        pp.with_norm(self.c_norm)
    }

    pub fn to_check_report(&self, pp: &ProfileParams, tol: f64) -> CheckReport {
        let mut params = BTreeMap::new();
        params.insert("alpha".into(), json!(pp.alpha()));
        params.insert("beta".into(), json!(pp.beta()));
        params.insert("gamma".into(), json!(pp.gamma()));
        params.insert("c_norm".into(), json!(self.c_norm));
        params.insert("exponent".into(), json!(self.exponent));
        params.insert("tail_fraction".into(), json!(self.tail_fraction));
        CheckReport::new("calibrate_profile", params, self.checks.clone(), &[("max_relative_error", tol)], self.pass)
    }
}

/// Normalization `C` with `∫_0^∞ ∫ p_D^{(w)}(t,x,y) f(t) y^{-γ-α/2} dy dt = x^{-β}`.
///
/// `base` must be the κ=0 family. The time integral is split into an
/// analytic piece on `[0, start]` (where the kernel is still a point mass),
/// Gauss–Legendre panels on `[start, horizon]`, and a fitted tail
/// `t^{-1-β/α}(A ln t + B)` beyond the horizon.
pub fn calibrate_profile(pp: &ProfileParams, base: &SpectralKernel, settings: &CalibrationSettings) -> Result<Calibration> {
    calibrate_profile_with_exponent(pp, base, settings, pp.exponent())
}

/// [`calibrate_profile`] with the time exponent replaced (for negative controls).
pub fn calibrate_profile_with_exponent(
    pp: &ProfileParams,
    base: &SpectralKernel,
    settings: &CalibrationSettings,
    exponent: f64,
) -> Result<Calibration> {
    if base.kappa() != 0.0 {
        return Err(domain("calibration needs the κ=0 kernel family"));
    }
    if (base.alpha() - pp.alpha()).abs() > 1e-15 {
        return Err(domain("profile and kernel use different α"));
    }
    if !(settings.start > 0.0 && settings.horizon > 4.0 * settings.start && settings.panels >= 4) {
        return Err(domain("calibration needs 0 < start < horizon/4 and at least 4 panels"));
    }
    let alpha = pp.alpha();
    let grid = *base.grid();
    let u = base.eigenvectors();
    let lambda = base.eigenvalues();
    let n = grid.n();
    let weight: Vec<f64> = grid.nodes().iter().map(|&y| y.powf(-pp.gamma())).collect();
    let coeff: Vec<f64> = (0..n).map(|k| (0..n).map(|j| u[(j, k)] * weight[j]).sum()).collect();
    let s = pp.beta() / alpha;
    let e = exponent;

    let integral_at = |i: usize| -> Result<(f64, f64)> {
        let x = grid.node(i);
        // Σ_j p_D^{(w)}(t,x,x_j) x_j^{-γ-α/2} h = x^{-α/2} Σ_j (e^{tA})_{ij} x_j^{-γ}.
        let moment = |t: f64| -> f64 {
            x.powf(-0.5 * alpha) * (0..n).map(|k| u[(i, k)] * (t * lambda[k]).exp() * coeff[k]).sum::<f64>()
        };
        let (a, b) = (settings.start.ln(), settings.horizon.ln());
        let mut body = 0.0;
        for p in 0..settings.panels {
            let lo = a + (b - a) * p as f64 / settings.panels as f64;
            let hi = a + (b - a) * (p + 1) as f64 / settings.panels as f64;
            body += quad::panel(8, lo, hi, |v| {
                let t = v.exp();
                t.powf(e + 1.0) * moment(t)
            });
        }
        let head = x.powf(-pp.gamma() - 0.5 * alpha) * settings.start.powf(e + 1.0) / (e + 1.0);
        let (t1, t2) = (settings.horizon / 4.0, settings.horizon);
        let g1 = t1.powf(e + 1.0 + s) * moment(t1);
        let g2 = t2.powf(e + 1.0 + s) * moment(t2);
        let slope = (g2 - g1) / (t2 / t1).ln();
        let offset = g2 - slope * t2.ln();
        // ∫_T^∞ t^{e} m(t) dt with t^{e} m(t) ≈ t^{-1-σ}(A ln t + B), σ = β/α − (e − e₀).
        let sigma = s - (e - pp.exponent());
        if !(sigma > 0.0) {
            return Err(Error::Accuracy {
                requested: settings.max_tail_fraction,
                achieved: f64::INFINITY,
            });
        }
        let tp = settings.horizon;
        let tail = tp.powf(-sigma) * (slope * tp.ln() / sigma + slope / (sigma * sigma) + offset / sigma);
        let total = head + body + tail;
        let fraction = tail.abs() / total.abs();
        if !(total > 0.0) || fraction > settings.max_tail_fraction {
            return Err(Error::Accuracy {
                requested: settings.max_tail_fraction,
                achieved: fraction,
            });
        }
        Ok((total, fraction))
    };

    let nearest = |x: f64| -> Result<usize> {
        let (i, theta) = grid.locate(x)?;
        Ok(if theta < 0.5 { i } else { i + 1 })
    };
    let anchor = nearest(1.0)?;
    let xa = grid.node(anchor);
    let (integral, tail_fraction) = integral_at(anchor)?;
    let c_norm = 1.0 / (integral * xa.powf(pp.beta()));
    let mut checks = Vec::new();
    for x in [0.5, 2.0] {
        let i = nearest(x)?;
        let xi = grid.node(i);
        let (v, _) = integral_at(i)?;
        let value = c_norm * v;
        let reference = xi.powf(-pp.beta());
        checks.push(CheckEntry {
            t: f64::INFINITY,
            x: xi,
            value,
            reference,
            metric: (value / reference - 1.0).abs(),
        });
    }
    let pass = checks.iter().all(|c| c.metric <= settings.tol);
    Ok(Calibration {
        c_norm,
        exponent,
        anchor: xa,
        integral,
        tail_fraction,
        checks,
        pass,
    })
}

/// Ratios of `Σ_j p_D(t,x,x_j) x_j^{-γ} h` to `x^{-γ}(1 ∨ t x^{-α})^{-1/2-γ/α}`.
///
/// Sets `params.near_edge` when `γ` is within `0.1` of either end of
/// `(−α, 1 + α/2)`, where the moment is barely integrable; the bracket is then
/// not asserted. Otherwise the report passes when `max/min ≤ max_bracket`.
pub fn check_pd_moment(source: &dyn KernelSource, gamma: f64, t_set: &[f64], x_set: &[f64], max_bracket: f64) -> Result<CheckReport> {
    let alpha = source.alpha();
    if source.kappa() != 0.0 {
        return Err(domain("the moment bound concerns the κ=0 kernel"));
    }
    if !(gamma > -alpha && gamma < 1.0 + 0.5 * alpha) {
        return Err(domain(format!("gamma must lie in ({}, {}), got {gamma}", -alpha, 1.0 + 0.5 * alpha)));
    }
    let near_edge = gamma + alpha < 0.1 || 1.0 + 0.5 * alpha - gamma < 0.1;
    let grid = *source.grid();
    let w: Vec<f64> = grid.nodes().iter().map(|&y| y.powf(-gamma)).collect();
    let mut entries = Vec::new();
    for &t in t_set {
        check_time(t)?;
        let m = source.integrate(t, &w)?;
        for &x in x_set {
            let (i, theta) = grid.locate(x)?;
            let value = (1.0 - theta) * m[i] + theta * m[i + 1];
            let reference = x.powf(-gamma) * (t * x.powf(-alpha)).max(1.0).powf(-0.5 - gamma / alpha);
            entries.push(CheckEntry {
                t,
                x,
                value,
                reference,
                metric: value / reference,
            });
        }
    }
    let ex = Extrema::of(entries.iter().map(|e| e.metric));
    let bracket = ex.max / ex.min;
    let mut params = base_params(source);
    params.insert("gamma".into(), json!(gamma));
    params.insert("near_edge".into(), json!(near_edge));
    params.insert("bracket".into(), json!(bracket));
    let pass = !near_edge && ex.min > 0.0 && bracket <= max_bracket;
    Ok(CheckReport::new("pd_moment", params, entries, &[("max_bracket", max_bracket)], pass))
}

/// Cutoff refinement for the blow-up diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlowupSettings {
    /// Nodes per grid.
    pub n: usize,
    /// Domain lengths, coarse to fine; the cutoff is the spacing `L/n`.
    pub lengths: Vec<f64>,
    /// Number of series terms `N`.
    pub max_terms: usize,
    pub ladder: TimeLadder,
}

impl Default for BlowupSettings {
    fn default() -> Self {
        Self {
            n: 4096,
            lengths: vec![40.0, 20.0, 10.0, 5.0, 2.5],
            max_terms: 20,
            ladder: TimeLadder::default(),
        }
    }
}

/// Series behaviour at one cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupRow {
    pub length: f64,
    pub cutoff_eps: f64,
    pub partial_sum: f64,
    pub last_ratio: f64,
    pub terms: Vec<f64>,
}

/// Partial sums `S_1..S_N` of the series under cutoff refinement, for several
/// couplings on shared κ=0 eigendecompositions. `result[k]` belongs to `kappas[k]`.
///
/// The cutoff cannot go below the spacing, so it is refined together with the
/// grid: each length in `settings.lengths` uses `n` nodes and cutoff `L/n`.
pub fn cutoff_refinement(
    alpha: f64,
    kappas: &[f64],
    t: f64,
    x: f64,
    y: f64,
    settings: &BlowupSettings,
) -> Result<Vec<Vec<BlowupRow>>> {
    let params = StableParams::new(alpha)?;
    if settings.lengths.is_empty() || settings.max_terms == 0 {
        return Err(domain("blow-up diagnostic needs at least one grid and one term"));
    }
    let series_settings = SeriesSettings {
        max_terms: settings.max_terms,
        tol: 0.0,
        ladder: settings.ladder,
        ladder_tol: None,
    };
    let mut out = vec![Vec::new(); kappas.len()];
    for &length in &settings.lengths {
        let grid = Grid::new(length, settings.n)?;
        let base = SpectralKernel::new(&build_generator(&params, &grid, 0.0)?)?;
        for (k, &kappa) in kappas.iter().enumerate() {
            let engine = SeriesEngine::new(&base, kappa, series_settings)?;
            let r = engine.series_at(t, x, y)?;
            out[k].push(BlowupRow {
                length,
                cutoff_eps: grid.cutoff_eps(),
                partial_sum: r.sum(),
                last_ratio: r.last_ratio,
                terms: r.terms,
            });
        }
    }
    Ok(out)
}

/// Outcome of [`blowup_diagnostic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowupReport {
    pub alpha: f64,
    pub kappa: f64,
    pub kappa_star: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub rows: Vec<BlowupRow>,
    /// Set when `κ ≤ κ*`: the ordinary series was computed instead.
    pub notice: Option<String>,
    pub series: Option<SeriesResult>,
    /// Divergence detected: the last ratio stays at or above 1 at the finest
    /// cutoff and the partial sums grow under refinement.
    pub diverges: bool,
}

/// Growth of the perturbation series for a supercritical coupling.
///
/// For `κ ≤ κ*` no blow-up is expected; the series is evaluated on the first
/// grid of `settings` and returned with a notice.
pub fn blowup_diagnostic(alpha: f64, kappa: f64, t: f64, x: f64, y: f64, settings: &BlowupSettings) -> Result<BlowupReport> {
    check_time(t)?;
    let star = kappa_star(alpha);
    let mut report = BlowupReport {
        alpha,
        kappa,
        kappa_star: star,
        t,
        x,
        y,
        rows: Vec::new(),
        notice: None,
        series: None,
        diverges: false,
    };
    if kappa <= star {
        let params = StableParams::new(alpha)?;
        let grid = Grid::new(settings.lengths[0], settings.n)?;
        let base = SpectralKernel::new(&build_generator(&params, &grid, 0.0)?)?;
        let engine = SeriesEngine::new(
            &base,
            kappa,
            SeriesSettings {
                ladder: settings.ladder,
                ..SeriesSettings::default()
            },
        )?;
        let mut r = engine.series_at(t, x, y)?;
        r.delta = if kappa > 0.0 { Some(delta_of_kappa(alpha, kappa)?) } else { None };
        report.notice = Some(format!(
            "κ = {kappa} does not exceed the critical constant κ* = {star}; no blow-up expected, computed the perturbation series instead"
        ));
        report.series = Some(r);
        return Ok(report);
    }
    let rows = cutoff_refinement(alpha, &[kappa], t, x, y, settings)?.remove(0);
    let finest = rows.last().expect("at least one grid");
    let growing = rows.windows(2).all(|w| w[1].partial_sum >= w[0].partial_sum);
    report.diverges = finest.last_ratio >= 1.0 && growing;
    report.rows = rows;
    Ok(report)
}

/// Grid, series and Monte Carlo values of the perturbed kernel at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRoute {
    pub grid_value: f64,
    pub series_value: f64,
    /// Grid kernel averaged over the Monte Carlo bin.
    pub grid_bin_average: f64,
    pub mc: MCEstimate,
    /// `|series/grid − 1|`.
    pub series_vs_grid: f64,
    /// `|mc − grid bin average| / stderr`.
    pub mc_z_score: f64,
}

/// Evaluates all three routes at `(t, x, y)`. The Monte Carlo paths use the
/// grid's length and cutoff so that all routes approximate the same problem.
#[allow(clippy::too_many_arguments)]
pub fn cross_route(
    grid_route: &dyn KernelSource,
    series_route: &dyn KernelSource,
    mc: &PathConfig,
    t: f64,
    x: f64,
    y: f64,
    y_halfwidth: f64,
    n_paths: usize,
) -> Result<CrossRoute> {
    let g = grid_route.grid();
    if (mc.alpha - grid_route.alpha()).abs() > 1e-15 || (mc.domain_length - g.length()).abs() > 1e-12 || mc.t_end != t || mc.x0 != x {
        return Err(domain("Monte Carlo configuration does not match the grid route"));
    }
    let grid_value = grid_route.value(t, x, y)?;
    let series_value = series_route.value(t, x, y)?;
    let ys: Vec<f64> = (0..=200)
        .map(|k| y - y_halfwidth + 2.0 * y_halfwidth * k as f64 / 200.0)
        .collect();
    let vals = grid_route.values(t, &[x], &ys)?.remove(0);
    let trapezoid: f64 = vals.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() / 200.0;
    let mc_est = estimate_kernel_mc(mc, grid_route.kappa(), y, y_halfwidth, n_paths)?;
    Ok(CrossRoute {
        grid_value,
        series_value,
        grid_bin_average: trapezoid,
        series_vs_grid: (series_value / grid_value - 1.0).abs(),
        mc_z_score: (mc_est.mean - trapezoid).abs() / mc_est.stderr,
        mc: mc_est,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(alpha: f64, length: f64, n: usize, kappa: f64) -> SpectralKernel {
        let p = StableParams::new(alpha).unwrap();
        let g = Grid::new(length, n).unwrap();
        SpectralKernel::new(&build_generator(&p, &g, kappa).unwrap()).unwrap()
    }

    #[test]
    fn log_spacing() {
        let v = log_spaced(0.05, 5.0, 13);
        assert_eq!(v.len(), 13);
        assert!((v[0] - 0.05).abs() < 1e-15 && (v[12] - 5.0).abs() < 1e-13);
        assert!((v[6] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn sweep_reports_extrema_and_provenance() {
        let hp = HardyParams::from_delta(1.0, 0.3).unwrap();
        let k = family(1.0, 10.0, 128, hp.kappa());
        let r = sweep_main_estimate(&k, &hp, &[1.0], &[0.5, 1.0], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(r.entries.len(), 6);
        assert!(r.entries.iter().all(|e| e.ratio >= r.ratio_min && e.ratio <= r.ratio_max && e.ratio > 0.0));
        assert_eq!(r.grid_meta.n, 128);
        assert_eq!(r.grid_meta.route, "grid");
        assert!(sweep_dirichlet(&k, &[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn sweep_attaches_the_failing_triple() {
        let hp = HardyParams::from_delta(1.0, 0.3).unwrap();
        let k = family(1.0, 10.0, 64, hp.kappa());
        match sweep_main_estimate(&k, &hp, &[1.0], &[1.0], &[1.0, 50.0]) {
            Err(Error::Evaluation { y, .. }) => assert_eq!(y, 50.0),
            other => panic!("expected an evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn harmonicity_rejects_beta_equal_delta() {
        let hp = HardyParams::from_delta(1.0, 0.3).unwrap();
        let k = family(1.0, 10.0, 64, hp.kappa());
        let delta = delta_of_kappa(1.0, hp.kappa()).unwrap();
        assert!(check_harmonicity_sign(&k, delta, &[1.0], 0.01).is_err());
        assert!(check_harmonicity_sign(&k, 0.8, &[1.0], 0.01).is_err());
    }

    #[test]
    fn report_json_and_csv() {
        let k = family(1.0, 10.0, 128, 0.0);
        let r = check_weighted_mass(&k, &[0.5], 0.5).unwrap();
        let v: Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["check_name", "params", "entries", "extrema", "tolerances", "pass"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check_name,t,x,value,reference,metric\n"));
        assert_eq!(text.lines().count(), r.entries.len() + 1);
    }

    #[test]
    fn moment_flags_the_range_edge() {
        let k = family(1.0, 10.0, 128, 0.0);
        let r = check_pd_moment(&k, 1.45, &[1.0], &[1.0], 1e9).unwrap();
        assert_eq!(r.params["near_edge"], json!(true));
        assert!(!r.pass);
        assert!(check_pd_moment(&k, 1.5, &[1.0], &[1.0], 10.0).is_err());
        let r = check_pd_moment(&k, 0.0, &[1.0], &[0.5, 1.0], 10.0).unwrap();
        assert!(r.entries.iter().all(|e| e.value <= 1.0 + 1e-12));
    }

    #[test]
    fn blowup_redirects_subcritical_couplings() {
        let settings = BlowupSettings {
            n: 64,
            lengths: vec![8.0],
            ..BlowupSettings::default()
        };
        let r = blowup_diagnostic(1.0, 0.5 * kappa_star(1.0), 1.0, 1.0, 1.0, &settings).unwrap();
        assert!(r.notice.is_some());
        assert!(r.series.unwrap().converged);
        assert!(r.rows.is_empty());
    }
}
