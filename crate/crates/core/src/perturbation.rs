//! Perturbation series of the Hardy-perturbed kernel and the Duhamel and
//! Chapman–Kolmogorov residuals.
//!
//! The terms `p_n(t) = ∫_0^t P_D(s) Q p_{n-1}(t-s) ds` solve the cascade
//! `p_n' = A_0 p_n + Q p_{n-1}`, `p_n(0) = 0`, with `p_0(r) = exp(r A_0)`.
//! In the eigenbasis of the κ=0 generator `A_0 = U Λ Uᵀ` each component obeys
//! a scalar linear ODE, integrated exactly against a forcing that is linear
//! on each panel of a time ladder (exponential product rule).

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;
use crate::hardy::{kappa_star, HardyParams};
use crate::kernel::{check_time, KernelSource, SpectralKernel};
use crate::quad;

/// `k(x, y) y^{α/2} / x^{α/2}`.
pub fn weighted(kernel_value: f64, x: f64, y: f64, alpha: f64) -> Result<f64> {
    if !(x > 0.0 && y > 0.0) {
        return Err(domain(format!("weighting needs positive points, got x={x}, y={y}")));
    }
    Ok(kernel_value * (y / x).powf(0.5 * alpha))
}

/// Time ladder on `[0, t]`: geometric toward both ends, symmetric about `t/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeLadder {
    /// Panels between `0` and `t/2` (mirrored on the other half).
    pub panels_per_end: usize,
    /// First interior node as a fraction of `t`.
    pub smallest_fraction: f64,
}

impl Default for TimeLadder {
    fn default() -> Self {
        Self {
            panels_per_end: 24,
            smallest_fraction: 1e-7,
        }
    }
}

impl TimeLadder {
    pub fn validate(&self) -> Result<()> {
        if self.panels_per_end < 2 {
            return Err(domain("time ladder needs at least two panels per end"));
        }
        if !(self.smallest_fraction > 0.0 && self.smallest_fraction < 0.25) {
            return Err(domain(format!(
                "smallest ladder fraction must lie in (0, 1/4), got {}",
                self.smallest_fraction
            )));
        }
        Ok(())
    }

    /// Nodes `0 = r_0 < … < r_{2m} = t`.
    pub fn nodes(&self, t: f64) -> Vec<f64> {
        let m = self.panels_per_end;
        let first = t * self.smallest_fraction;
        let ratio = (0.5 * t / first).powf(1.0 / (m - 1) as f64);
        let mut left = Vec::with_capacity(m + 1);
        left.push(0.0);
        for k in 0..m {
            left.push(if k + 1 == m { 0.5 * t } else { first * ratio.powi(k as i32) });
        }
        let mut all = left.clone();
        for &r in left.iter().rev().skip(1) {
            all.push(if r == 0.0 { t } else { t - r });
        }
        all
    }

    /// Every other node of [`TimeLadder::nodes`].
    pub fn coarse_nodes(&self, t: f64) -> Vec<f64> {
        self.nodes(t).into_iter().step_by(2).collect()
    }

    /// Gauss–Legendre nodes and weights on every panel.
    pub fn quadrature(&self, t: f64, degree: usize) -> Vec<(f64, f64)> {
        let nodes = self.nodes(t);
        nodes.windows(2).flat_map(|w| quad::mapped(degree, w[0], w[1])).collect()
    }
}

/// Stopping rule and quadrature for the series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesSettings {
    /// Largest term index `N`.
    pub max_terms: usize,
    /// Stop once `term_n / partial_sum_n` falls below this.
    pub tol: f64,
    pub ladder: TimeLadder,
    /// When set, the result is recomputed on the coarsened ladder and an
    /// accuracy error is raised if the relative change exceeds this value.
    pub ladder_tol: Option<f64>,
}

impl Default for SeriesSettings {
    fn default() -> Self {
        Self {
            max_terms: 60,
            tol: 1e-7,
            ladder: TimeLadder::default(),
            ladder_tol: Some(2e-3),
        }
    }
}

/// Terms and partial sums of the perturbation series at one point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesResult {
    pub alpha: f64,
    pub delta: Option<f64>,
    pub kappa: f64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub converged: bool,
    /// `term_N / term_{N-1}` for the last computed term.
    pub last_ratio: f64,
    /// Relative change of the sum when the time ladder is coarsened.
    pub ladder_error: Option<f64>,
}

impl SeriesResult {
    pub fn sum(&self) -> f64 {
        *self.partial_sums.last().expect("at least one term")
    }

    /// JSON export `{alpha, delta, t, x, y, terms, partial_sums, converged, ...}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Series machinery over a κ=0 spectral family.
#[derive(Debug, Clone)]
pub struct SeriesEngine<'a> {
    base: &'a SpectralKernel,
    kappa: f64,
    potential: Vec<f64>,
    settings: SeriesSettings,
}

impl<'a> SeriesEngine<'a> {
    /// `base` must be the κ=0 family; the potential uses the base grid and its cutoff.
    pub fn new(base: &'a SpectralKernel, kappa: f64, settings: SeriesSettings) -> Result<Self> {
        if base.kappa() != 0.0 {
            return Err(Error::State("the series needs the Dirichlet (κ=0) kernel family as its base".into()));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(domain(format!("coupling must be non-negative, got {kappa}")));
        }
        settings.ladder.validate()?;
        if settings.max_terms == 0 {
            return Err(domain("max_terms must be at least 1"));
        }
        let potential = base.grid().potential(base.alpha(), kappa);
        Ok(Self {
            base,
            kappa,
            potential,
            settings,
        })
    }

    pub fn settings(&self) -> &SeriesSettings {
        &self.settings
    }

    pub fn base(&self) -> &SpectralKernel {
        self.base
    }

    fn cascade(&self, t: f64, initial: &Mat<f64>, nodes: &[f64]) -> Cascade<'_> {
        Cascade::new(self, t, initial, nodes)
    }

    /// The series at one point, with the `y` delta spread bilinearly over its two nodes.
    pub fn series_at(&self, t: f64, x: f64, y: f64) -> Result<SeriesResult> {
        check_time(t)?;
        let grid = self.base.grid();
        let (i, a) = grid.locate(x)?;
        let (j, b) = grid.locate(y)?;
        let h = grid.spacing();
        let n = grid.n();
        let initial = Mat::from_fn(n, 1, |k, _| {
            if k == j {
                (1.0 - b) / h
            } else if k == j + 1 {
                b / h
            } else {
                0.0
            }
        });
        let at_x = |m: &Mat<f64>| (1.0 - a) * m[(i, 0)] + a * m[(i + 1, 0)];

        let run = |nodes: &[f64]| -> Result<(Vec<f64>, Vec<f64>, bool)> {
            let mut cascade = self.cascade(t, &initial, nodes);
            let mut terms = Vec::new();
            let mut sums = Vec::new();
            let mut converged = false;
            let mut sum = 0.0;
            for order in 0..=self.settings.max_terms {
                let term = at_x(&cascade.next_term()?).max(0.0);
                sum += term;
                terms.push(term);
                sums.push(sum);
                if order > 0 && (term == 0.0 || term < self.settings.tol * sum) {
                    converged = true;
                    break;
                }
            }
            Ok((terms, sums, converged))
        };

        let (terms, partial_sums, converged) = run(&self.settings.ladder.nodes(t))?;
        let ladder_error = match self.settings.ladder_tol {
            Some(tol) => {
                let (_, coarse, _) = run(&self.settings.ladder.coarse_nodes(t))?;
                let fine = *partial_sums.last().expect("nonempty");
                let coarse = *coarse.last().expect("nonempty");
                let err = ((fine - coarse) / fine).abs();
                if err > tol {
                    return Err(Error::Accuracy {
                        requested: tol,
                        achieved: err,
                    });
                }
                Some(err)
            }
            None => None,
        };
        let k = terms.len();
        let last_ratio = if k >= 2 && terms[k - 2] > 0.0 {
            terms[k - 1] / terms[k - 2]
        } else {
            0.0
        };
        Ok(SeriesResult {
            alpha: self.base.alpha(),
            delta: None,
            kappa: self.kappa,
            t,
            x,
            y,
            terms,
            partial_sums,
            converged,
            last_ratio,
            ladder_error,
        })
    }

    /// Sums the series for a batch of initial vectors (columns of `initial`).
    fn sum_batch(&self, t: f64, initial: &Mat<f64>) -> Result<Mat<f64>> {
        check_time(t)?;
        let nodes = self.settings.ladder.nodes(t);
        let mut cascade = self.cascade(t, initial, &nodes);
        let mut sum = cascade.next_term()?;
        let mut ratio = f64::INFINITY;
        for _ in 0..self.settings.max_terms {
            let term = cascade.next_term()?;
            ratio = 0.0;
            for c in 0..sum.ncols() {
                let mut tnorm: f64 = 0.0;
                let mut snorm: f64 = 0.0;
                for i in 0..sum.nrows() {
                    sum[(i, c)] += term[(i, c)];
                    tnorm = tnorm.max(term[(i, c)].abs());
                    snorm = snorm.max(sum[(i, c)].abs());
                }
                if snorm > 0.0 {
                    ratio = ratio.max(tnorm / snorm);
                }
            }
            if ratio < self.settings.tol {
                return Ok(sum);
            }
        }
        Err(Error::Accuracy {
            requested: self.settings.tol,
            achieved: ratio,
        })
    }
}

/// The series evaluated at a point for given Hardy parameters.
///
/// Rejects supercritical couplings; see [`crate::verify::blowup_diagnostic`].
pub fn series(base: &SpectralKernel, hp: &HardyParams, t: f64, x: f64, y: f64, settings: SeriesSettings) -> Result<SeriesResult> {
    if (hp.alpha() - base.alpha()).abs() > 1e-15 {
        return Err(domain("Hardy parameters and base kernel use different α"));
    }
    if hp.kappa() > kappa_star(hp.alpha()) * (1.0 + 1e-13) {
        return Err(domain("coupling above the critical constant; use the blow-up diagnostic"));
    }
    let engine = SeriesEngine::new(base, hp.kappa(), settings)?;
    let mut r = engine.series_at(t, x, y)?;
    r.delta = Some(hp.delta());
    Ok(r)
}

impl KernelSource for SeriesEngine<'_> {
    fn grid(&self) -> &Grid {
        self.base.grid()
    }

    fn alpha(&self) -> f64 {
        self.base.alpha()
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn route(&self) -> String {
        format!(
            "series(max_terms={}, tol={:e}, ladder={}x2 from {:e}t)",
            self.settings.max_terms, self.settings.tol, self.settings.ladder.panels_per_end, self.settings.ladder.smallest_fraction
        )
    }

    fn columns(&self, t: f64, js: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.grid().n();
        if let Some(&bad) = js.iter().find(|&&j| j >= n) {
            return Err(domain(format!("node index {bad} out of range")));
        }
        let h = self.grid().spacing();
        let initial = Mat::from_fn(n, js.len(), |k, c| if k == js[c] { 1.0 / h } else { 0.0 });
        let sum = self.sum_batch(t, &initial)?;
        Ok((0..js.len()).map(|c| (0..n).map(|i| sum[(i, c)]).collect()).collect())
    }

    fn integrate(&self, t: f64, weights: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid().n();
        if weights.len() != n {
            return Err(domain(format!("expected {n} weights, got {}", weights.len())));
        }
        let initial = Mat::from_fn(n, 1, |k, _| weights[k]);
        let sum = self.sum_batch(t, &initial)?;
        Ok((0..n).map(|i| sum[(i, 0)]).collect())
    }
}

/// State of the term recursion on a fixed ladder.
struct Cascade<'e> {
    engine: &'e SeriesEngine<'e>,
    width: usize,
    points: usize,
    /// Per panel: `e^{z}`, `Δ(φ₁−φ₂)(z)`, `Δφ₂(z)` with `z = Δλ`.
    panels: Vec<[Vec<f64>; 3]>,
    /// Eigen coordinates of the previous term at every ladder node; column `c * points + k`.
    previous: Option<Mat<f64>>,
    initial: Mat<f64>,
    nodes: Vec<f64>,
    t: f64,
}

fn phi(z: f64) -> (f64, f64) {
    if z.abs() < 1e-3 {
        let phi1 = 1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0));
        let phi2 = 0.5 + z * (1.0 / 6.0 + z * (1.0 / 24.0 + z / 120.0));
        (phi1, phi2)
    } else {
        let em1 = z.exp_m1();
        (em1 / z, (em1 - z) / (z * z))
    }
}

impl<'e> Cascade<'e> {
    fn new(engine: &'e SeriesEngine<'e>, t: f64, initial: &Mat<f64>, nodes: &[f64]) -> Self {
        let lambda = engine.base.eigenvalues();
        let panels = nodes
            .windows(2)
            .map(|w| {
                let d = w[1] - w[0];
                let mut e = Vec::with_capacity(lambda.len());
                let mut a = Vec::with_capacity(lambda.len());
                let mut b = Vec::with_capacity(lambda.len());
                for &l in lambda {
                    let z = d * l;
                    let (p1, p2) = phi(z);
                    e.push(z.exp());
                    a.push(d * (p1 - p2));
                    b.push(d * p2);
                }
                [e, a, b]
            })
            .collect();
        Self {
            engine,
            width: initial.ncols(),
            points: nodes.len(),
            panels,
            previous: None,
            initial: initial.clone(),
            nodes: nodes.to_vec(),
            t,
        }
    }

    /// The next term in physical coordinates at time `t`, one column per initial vector.
    fn next_term(&mut self) -> Result<Mat<f64>> {
        let u = self.engine.base.eigenvectors();
        let lambda = self.engine.base.eigenvalues();
        let n = lambda.len();
        let (points, width) = (self.points, self.width);
        let coords = match self.previous.take() {
            None => {
                let b = u.transpose() * &self.initial;
                Mat::from_fn(n, points * width, |k, col| {
                    let (c, node) = (col / points, col % points);
                    (self.nodes[node] * lambda[k]).exp() * b[(k, c)]
                })
            }
            Some(prev) => {
                // Forcing Uᵀ Q U c_{n-1} at every ladder node.
                let mut physical = u * &prev;
                for col in 0..physical.ncols() {
                    for (i, &q) in self.engine.potential.iter().enumerate() {
                        physical[(i, col)] *= q;
                    }
                }
                let forcing = u.transpose() * &physical;
                let mut next = Mat::<f64>::zeros(n, points * width);
                for c in 0..width {
                    let base = c * points;
                    for (k, [e, a, b]) in self.panels.iter().enumerate() {
                        for m in 0..n {
                            next[(m, base + k + 1)] = e[m] * next[(m, base + k)]
                                + a[m] * forcing[(m, base + k)]
                                + b[m] * forcing[(m, base + k + 1)];
                        }
                    }
                }
                next
            }
        };
        let finals = Mat::from_fn(n, width, |k, c| coords[(k, c * points + points - 1)]);
        let term = u * &finals;
        if !(0..width).all(|c| (0..n).all(|i| term[(i, c)].is_finite())) {
            return Err(Error::Divergence(format!("series term overflowed at t = {}", self.t)));
        }
        self.previous = Some(coords);
        Ok(term)
    }
}

fn bracket(grid: &Grid, x: f64) -> Result<[(usize, f64); 2]> {
    let (i, a) = grid.locate(x)?;
    Ok([(i, 1.0 - a), (i + 1, a)])
}

fn combined_column(source: &dyn KernelSource, t: f64, at: &[(usize, f64); 2]) -> Result<Vec<f64>> {
    let cols = source.columns(t, &[at[0].0, at[1].0])?;
    Ok(cols[0].iter().zip(&cols[1]).map(|(p, q)| at[0].1 * p + at[1].1 * q).collect())
}

/// `p̃(t,x,y) − p_D(t,x,y) − ∫_0^t Σ_z p̃(s,x,z) q(z) p_D(t−s,z,y) h ds`.
///
/// The time integral uses Gauss–Legendre panels on `ladder`; both kernels
/// must live on the same grid, and `kappa` fixes `q`.
pub fn duhamel_residual(
    ptilde: &dyn KernelSource,
    pd: &dyn KernelSource,
    kappa: f64,
    t: f64,
    x: f64,
    y: f64,
    ladder: &TimeLadder,
) -> Result<f64> {
    check_time(t)?;
    ladder.validate()?;
    let grid = *pd.grid();
    if ptilde.grid() != &grid {
        return Err(domain("Duhamel residual needs both kernels on the same grid"));
    }
    if pd.kappa() != 0.0 {
        return Err(domain("second kernel must be the Dirichlet (κ=0) kernel"));
    }
    let q = grid.potential(pd.alpha(), kappa);
    let bx = bracket(&grid, x)?;
    let by = bracket(&grid, y)?;
    let h = grid.spacing();
    let mut integral = 0.0;
    for (s, w) in ladder.quadrature(t, 8) {
        let left = combined_column(ptilde, s, &bx)?;
        let right = combined_column(pd, t - s, &by)?;
        let inner: f64 = left.iter().zip(&q).zip(&right).map(|((a, qz), b)| a * qz * b).sum();
        integral += w * inner * h;
    }
    Ok(ptilde.value(t, x, y)? - pd.value(t, x, y)? - integral)
}

/// `p(t+s,x,y) − Σ_z p(t,x,z) p(s,z,y) h`.
pub fn ck_residual(source: &dyn KernelSource, t: f64, s: f64, x: f64, y: f64) -> Result<f64> {
    check_time(t)?;
    check_time(s)?;
    let grid = *source.grid();
    let left = combined_column(source, t, &bracket(&grid, x)?)?;
    let right = combined_column(source, s, &bracket(&grid, y)?)?;
    let inner: f64 = left.iter().zip(&right).map(|(a, b)| a * b).sum::<f64>() * grid.spacing();
    Ok(source.value(t + s, x, y)? - inner)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_generator;
    use crate::stable::StableParams;

    fn family(alpha: f64, length: f64, n: usize, kappa: f64) -> SpectralKernel {
        let p = StableParams::new(alpha).unwrap();
        let g = Grid::new(length, n).unwrap();
        SpectralKernel::new(&build_generator(&p, &g, kappa).unwrap()).unwrap()
    }

    #[test]
    fn weighted_examples() {
        assert_eq!(weighted(0.3, 1.5, 1.5, 1.0).unwrap(), 0.3);
        let a = weighted(0.3, 1.0, 2.0, 1.0).unwrap() * 1.0;
        let b = weighted(0.3, 2.0, 1.0, 1.0).unwrap() * 2.0;
        assert!((a - b).abs() < 1e-15);
        assert!((weighted(0.1, 1.0, 4.0, 1.0).unwrap() - 0.2).abs() < 1e-15);
        assert!(weighted(0.1, 0.0, 4.0, 1.0).is_err());
    }

    #[test]
    fn ladder_shape() {
        let l = TimeLadder::default();
        let nodes = l.nodes(2.0);
        assert_eq!(nodes.len(), 49);
        assert_eq!(nodes[0], 0.0);
        assert_eq!(nodes[48], 2.0);
        assert!((nodes[24] - 1.0).abs() < 1e-15);
        assert!((nodes[1] - 2e-7).abs() < 1e-20);
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        for k in 0..49 {
            assert!((nodes[k] + nodes[48 - k] - 2.0).abs() < 1e-14);
        }
        assert_eq!(l.coarse_nodes(2.0).len(), 25);
        let total: f64 = l.quadrature(2.0, 8).iter().map(|(_, w)| w).sum();
        assert!((total - 2.0).abs() < 1e-13);
    }

    #[test]
    fn phi_functions_are_continuous() {
        for &z in &[-1e-3, 1e-3] {
            let (a1, a2) = phi(z * (1.0 - 1e-9));
            let (b1, b2) = phi(z * (1.0 + 1e-9));
            assert!((a1 - b1).abs() < 1e-11 && (a2 - b2).abs() < 1e-11);
        }
        let (p1, p2) = phi(-50.0);
        assert!((p1 - (1.0 - (-50f64).exp()) / 50.0).abs() < 1e-16);
        assert!((p2 - (49.0 + (-50f64).exp()) / 2500.0).abs() < 1e-16);
    }

    #[test]
    fn zero_coupling_series_is_the_dirichlet_kernel() {
        let base = family(1.0, 8.0, 64, 0.0);
        let engine = SeriesEngine::new(&base, 0.0, SeriesSettings::default()).unwrap();
        let g = *base.grid();
        let r = engine.series_at(1.0, g.node(20), g.node(25)).unwrap();
        assert!(r.converged);
        assert!(r.terms[1..].iter().all(|&v| v == 0.0));
        let pd = base.kernel(1.0).unwrap();
        assert!((r.terms[0] - pd.at(20, 25)).abs() < 1e-13);
    }

    #[test]
    fn series_matches_spectral_perturbed_kernel() {
        let base = family(1.0, 10.0, 128, 0.0);
        let hp = HardyParams::from_delta(1.0, 0.3).unwrap();
        let full = family(1.0, 10.0, 128, hp.kappa());
        let r = series(&base, &hp, 1.0, 1.0, 1.0, SeriesSettings::default()).unwrap();
        assert!(r.converged && r.last_ratio < 1.0);
        assert!(r.partial_sums.windows(2).all(|w| w[1] >= w[0]));
        assert!(r.terms.iter().all(|&v| v >= 0.0));
        let grid_value = full.value(1.0, 1.0, 1.0).unwrap();
        assert!(((r.sum() - grid_value) / grid_value).abs() < 2e-3, "{} vs {grid_value}", r.sum());
        assert_eq!(r.delta, Some(0.3));
        let json = r.to_json().unwrap();
        assert!(json.contains("\"partial_sums\""));
    }

    #[test]
    fn series_source_matches_spectral_columns() {
        let base = family(1.5, 10.0, 96, 0.0);
        let hp = HardyParams::from_delta(1.5, 0.25).unwrap();
        let full = family(1.5, 10.0, 96, hp.kappa());
        let engine = SeriesEngine::new(&base, hp.kappa(), SeriesSettings::default()).unwrap();
        let a = engine.columns(0.5, &[10, 40]).unwrap();
        let b = full.columns(0.5, &[10, 40]).unwrap();
        for c in 0..2 {
            let peak = b[c].iter().cloned().fold(0.0, f64::max);
            // The first cells feel the cut-off potential peak; the time quadrature is coarsest there.
            for i in 0..96 {
                let err = (a[c][i] - b[c][i]).abs() / b[c][i].abs().max(1e-3 * peak);
                assert!(err < if i < 5 { 1e-2 } else { 3e-3 }, "column {c}, row {i}: {} vs {}", a[c][i], b[c][i]);
            }
        }
        let w: Vec<f64> = base.grid().nodes().iter().map(|x| x.sqrt()).collect();
        let ia = engine.integrate(0.5, &w).unwrap();
        let ib = full.integrate(0.5, &w).unwrap();
        assert!(((ia[30] - ib[30]) / ib[30]).abs() < 3e-3);
    }

    #[test]
    fn series_rejects_supercritical_coupling() {
        let base = family(1.0, 8.0, 32, 0.0);
        let hp = HardyParams::from_delta(1.0, 0.5).unwrap();
        assert!(series(&base, &hp, 1.0, 1.0, 1.0, SeriesSettings::default()).is_ok());
        let full = family(1.0, 8.0, 32, 0.1);
        assert!(SeriesEngine::new(&full, 0.1, SeriesSettings::default()).is_err());
    }

    #[test]
    fn duhamel_and_ck_on_the_grid_route() {
        let hp = HardyParams::from_delta(1.0, 0.3).unwrap();
        let pd = family(1.0, 10.0, 128, 0.0);
        let pt = family(1.0, 10.0, 128, hp.kappa());
        let ladder = TimeLadder::default();
        let value = pt.value(1.0, 1.0, 1.0).unwrap();
        let r = duhamel_residual(&pt, &pd, hp.kappa(), 1.0, 1.0, 1.0, &ladder).unwrap();
        assert!(r.abs() < 1e-3 * value, "residual {r} vs {value}");
        let r0 = duhamel_residual(&pd, &pd, 0.0, 1.0, 1.0, 1.0, &ladder).unwrap();
        assert!(r0.abs() < 1e-12);
        let ck = ck_residual(&pt, 0.4, 0.6, 1.0, 1.5).unwrap();
        assert!(ck.abs() < 1e-10 * value);
    }
}
