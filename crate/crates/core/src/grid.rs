//! Uniform cell-centred grid on (0, L) and the discretized generator
//! `Δ_D^{α/2} + κ x^{-α}` with killing outside (0, L).

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Result};
use crate::quad;
use crate::stable::StableParams;

/// Nodes `x_i = (i + 1/2) h`, `h = L / n`, with the potential cut off below `cutoff_eps ≥ h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    length: f64,
    n: usize,
    cutoff_eps: f64,
}

impl Grid {
    pub const MIN_NODES: usize = 16;

    /// A grid with the default potential cutoff `cutoff_eps = h`.
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(domain(format!("domain length must be positive, got {length}")));
        }
        if n < Self::MIN_NODES {
            return Err(domain(format!("need at least {} nodes, got {n}", Self::MIN_NODES)));
        }
        Ok(Self {
            length,
            n,
            cutoff_eps: length / n as f64,
        })
    }

    /// Replaces the potential cutoff; it may not be smaller than one cell.
    pub fn with_cutoff(mut self, cutoff_eps: f64) -> Result<Self> {
        if !(cutoff_eps >= self.spacing() * (1.0 - 1e-12)) || !cutoff_eps.is_finite() {
            return Err(domain(format!(
                "cutoff {cutoff_eps} is below the grid spacing {}",
                self.spacing()
            )));
        }
        self.cutoff_eps = cutoff_eps;
        Ok(self)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cutoff_eps(&self) -> f64 {
        self.cutoff_eps
    }

    pub fn node(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.node(i)).collect()
    }

    /// First and last node.
    pub fn hull(&self) -> (f64, f64) {
        (self.node(0), self.node(self.n - 1))
    }

    /// Bracketing node index `i` and weight `θ` with `x = (1−θ) x_i + θ x_{i+1}`.
    pub fn locate(&self, x: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.hull();
        let slack = 1e-12 * self.spacing();
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(domain(format!("point {x} lies outside the node hull [{lo}, {hi}]")));
        }
        let s = ((x - lo) / self.spacing()).clamp(0.0, (self.n - 1) as f64);
        let i = (s.floor() as usize).min(self.n - 2);
        Ok((i, s - i as f64))
    }

    /// Indices of the nodes lying in `[lo, hi]`.
    pub fn nodes_between(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| {
                let x = self.node(i);
                x >= lo && x <= hi
            })
            .collect()
    }

    /// The interior region used for identity checks: `[10 h, L / 8]`.
    pub fn interior(&self) -> Vec<usize> {
        self.nodes_between(10.0 * self.spacing(), self.length / 8.0)
    }

    /// `κ max(x_i, cutoff_eps)^{-α}` at every node.
    pub fn potential(&self, alpha: f64, kappa: f64) -> Vec<f64> {
        (0..self.n)
            .map(|i| kappa * self.node(i).max(self.cutoff_eps).powf(-alpha))
            .collect()
    }
}

/// Discretization of the singular integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// Piecewise-linear interpolation of the test function for jumps longer
    /// than one cell, and a second difference for the shorter ones.
    #[default]
    LinearInterpolation,
    /// Piecewise-constant test function: each off-diagonal entry is the Lévy
    /// measure of the target cell.
    CellIntegral,
}

/// `ν(r) = c |r|^{-1-α}`.
pub fn levy_density(params: &StableParams, r: f64) -> Result<f64> {
    if r == 0.0 || !r.is_finite() {
        return Err(domain(format!("Lévy density needs a finite nonzero argument, got {r}")));
    }
    Ok(params.levy_prefactor() * r.abs().powf(-1.0 - params.alpha()))
}

/// The generator matrix `A = A_0 + diag(q(x_i))` together with its ingredients.
#[derive(Debug, Clone)]
pub struct GeneratorMatrix {
    params: StableParams,
    grid: Grid,
    kappa: f64,
    stencil: Stencil,
    free_row: Vec<f64>,
    potential: Vec<f64>,
    entries: Mat<f64>,
}

/// Builds the generator with the default stencil.
pub fn build_generator(params: &StableParams, grid: &Grid, kappa: f64) -> Result<GeneratorMatrix> {
    build_generator_with(params, grid, kappa, Stencil::default())
}

pub fn build_generator_with(
    params: &StableParams,
    grid: &Grid,
    kappa: f64,
    stencil: Stencil,
) -> Result<GeneratorMatrix> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(domain(format!("coupling must be non-negative, got {kappa}")));
    }
    let free_row = match stencil {
        Stencil::LinearInterpolation => interpolation_row(params, grid),
        Stencil::CellIntegral => cell_row(params, grid),
    };
    Ok(assemble(*params, *grid, kappa, stencil, free_row))
}

fn assemble(params: StableParams, grid: Grid, kappa: f64, stencil: Stencil, free_row: Vec<f64>) -> GeneratorMatrix {
    let potential = grid.potential(params.alpha(), kappa);
    let n = grid.n();
    let entries = Mat::from_fn(n, n, |i, j| {
        let v = free_row[i.abs_diff(j)];
        if i == j {
            v + potential[i]
        } else {
            v
        }
    });
    GeneratorMatrix {
        params,
        grid,
        kappa,
        stencil,
        free_row,
        potential,
        entries,
    }
}

/// Toeplitz row of the cell-integral stencil: entry `k` is the Lévy measure
/// of a cell at distance `k h`; the diagonal removes everything leaving the own cell.
fn cell_row(params: &StableParams, grid: &Grid) -> Vec<f64> {
    let (a, c, h) = (params.alpha(), params.levy_prefactor(), grid.spacing());
    let mut row = Vec::with_capacity(grid.n());
    row.push(-2.0 * c / a * (0.5 * h).powf(-a));
    for k in 1..grid.n() {
        let d = k as f64 * h;
        row.push(c / a * ((d - 0.5 * h).powf(-a) - (d + 0.5 * h).powf(-a)));
    }
    row
}

/// Scaled weights (`h = 1`, `c = 1`) of the interpolation stencil for distances `1..n`.
pub(crate) fn interpolation_weights(alpha: f64, n: usize) -> Vec<f64> {
    let kernel = |s: f64| s.powf(-1.0 - alpha);
    (1..n)
        .map(|k| {
            let kf = k as f64;
            let rising = if k >= 2 {
                quad::panel(16, kf - 1.0, kf, |s| (s - kf + 1.0) * kernel(s))
            } else {
                0.0
            };
            let falling = quad::panel(16, kf, kf + 1.0, |s| (kf + 1.0 - s) * kernel(s));
            rising + falling
        })
        .collect()
}

fn interpolation_row(params: &StableParams, grid: &Grid) -> Vec<f64> {
    let a = params.alpha();
    let scale = params.levy_prefactor() * grid.spacing().powf(-a);
    let short = 1.0 / (2.0 - a);
    let mut row = Vec::with_capacity(grid.n());
    row.push(-scale * (2.0 / a + 2.0 * short));
    for (k, w) in interpolation_weights(a, grid.n()).into_iter().enumerate() {
        let w = if k == 0 { w + short } else { w };
        row.push(scale * w);
    }
    row
}

impl GeneratorMatrix {
    pub fn entries(&self) -> MatRef<'_, f64> {
        self.entries.as_ref()
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn stencil(&self) -> Stencil {
        self.stencil
    }

    /// Potential values `q(x_i)` on the diagonal.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// First row of the Toeplitz κ=0 part (index = distance in cells).
    pub fn free_row(&self) -> &[f64] {
        &self.free_row
    }

    /// The κ=0 part `A_0`.
    pub fn free_part(&self) -> Mat<f64> {
        let n = self.grid.n();
        Mat::from_fn(n, n, |i, j| self.free_row[i.abs_diff(j)])
    }

    /// Killing rates `k_i = −Σ_j A_0[i][j]`.
    pub fn killing_rates(&self) -> Vec<f64> {
        let n = self.grid.n();
        (0..n)
            .map(|i| -(0..n).map(|j| self.free_row[i.abs_diff(j)]).sum::<f64>())
            .collect()
    }

    /// The same discretization with another coupling.
    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(domain(format!("coupling must be non-negative, got {kappa}")));
        }
        Ok(assemble(self.params, self.grid, kappa, self.stencil, self.free_row.clone()))
    }

    /// SHA-256 of the parameters and the matrix entries.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [self.alpha(), self.kappa, self.grid.length(), self.grid.cutoff_eps()] {
            hasher.update(v.to_le_bytes());
        }
        hasher.update((self.grid.n() as u64).to_le_bytes());
        for v in self.free_row.iter().chain(&self.potential) {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_layout() {
        let g = Grid::new(40.0, 1000).unwrap();
        assert_eq!(g.spacing(), 0.04);
        assert!((g.node(0) - 0.02).abs() < 1e-15);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
        assert!(nodes[0] > 0.0 && *nodes.last().unwrap() < 40.0);
        assert!(Grid::new(40.0, 8).is_err());
        assert!(g.with_cutoff(0.01).is_err());
        assert!(g.with_cutoff(0.1).is_ok());
    }

    #[test]
    fn locate_brackets_points() {
        let g = Grid::new(10.0, 100).unwrap();
        let (i, th) = g.locate(g.node(7)).unwrap();
        assert!(i == 7 && th.abs() < 1e-9 || i == 6 && (th - 1.0).abs() < 1e-9);
        let (i, th) = g.locate(0.5 * (g.node(3) + g.node(4))).unwrap();
        assert_eq!(i, 3);
        assert!((th - 0.5).abs() < 1e-12);
        assert!(g.locate(0.01).is_err());
        assert!(g.locate(9.999).is_err());
    }

    #[test]
    fn levy_density_values() {
        let p = StableParams::new(1.0).unwrap();
        assert!((levy_density(&p, 2.0).unwrap() - 0.25 / PI).abs() < 1e-16);
        assert_eq!(levy_density(&p, -2.0).unwrap(), levy_density(&p, 2.0).unwrap());
        assert!(levy_density(&p, 0.0).is_err());
    }

    #[test]
    fn cell_integral_example() {
        let p = StableParams::new(1.0).unwrap();
        let g = Grid::new(16.0, 64).unwrap();
        let gen = build_generator_with(&p, &g, 0.0, Stencil::CellIntegral).unwrap();
        let h = g.spacing();
        let expected = (1.0 / PI) * (1.0 / (1.5 * h) - 1.0 / (2.5 * h));
        assert!((gen.entries()[(5, 7)] - expected).abs() < 1e-13 * expected);
        // Row sums equal minus the closed-form killing rates.
        let a = p.alpha();
        let c = p.levy_prefactor();
        for i in [0, 10, 63] {
            let x = g.node(i);
            let k = c / a * (x.powf(-a) + (16.0 - x).powf(-a));
            let sum: f64 = (0..64).map(|j| gen.entries()[(i, j)]).sum();
            assert!((sum + k).abs() < 1e-10 * k.max(1.0), "row {i}: {sum} vs {k}");
        }
    }

    #[test]
    fn interpolation_weights_match_closed_form() {
        // Closed forms with P(s) = -s^{-α}/α and Q(s) = s^{1-α}/(1-α).
        let alpha = 1.3;
        let p = |s: f64| -s.powf(-alpha) / alpha;
        let q = |s: f64| s.powf(1.0 - alpha) / (1.0 - alpha);
        let w = interpolation_weights(alpha, 8);
        let w1 = 2.0 * (p(2.0) - p(1.0)) - (q(2.0) - q(1.0));
        assert!((w[0] - w1).abs() < 1e-14);
        for k in 2..8usize {
            let kf = k as f64;
            let exact = (q(kf) - q(kf - 1.0)) - (kf - 1.0) * (p(kf) - p(kf - 1.0))
                + (kf + 1.0) * (p(kf + 1.0) - p(kf))
                - (q(kf + 1.0) - q(kf));
            assert!((w[k - 1] - exact).abs() < 1e-13 * exact, "k={k}");
        }
        // The hats partition unity on [1, ∞): the weights sum to ∫_1^∞ s^{-1-α} = 1/α.
        let w = interpolation_weights(alpha, 200_000);
        let tail = 200_000f64.powf(-alpha) / alpha;
        assert!((w.iter().sum::<f64>() + tail - 1.0 / alpha).abs() < 1e-6);
    }

    #[test]
    fn generator_structure() {
        let p = StableParams::new(1.5).unwrap();
        let g = Grid::new(20.0, 128).unwrap();
        for stencil in [Stencil::LinearInterpolation, Stencil::CellIntegral] {
            let gen = build_generator_with(&p, &g, 0.0, stencil).unwrap();
            let a = gen.entries();
            for i in 0..128 {
                for j in 0..128 {
                    assert_eq!(a[(i, j)], a[(j, i)]);
                    if i != j {
                        assert!(a[(i, j)] >= 0.0);
                    }
                }
            }
            assert!(gen.killing_rates().iter().all(|&k| k > 0.0));
        }
        assert!(build_generator(&p, &g, -0.1).is_err());
    }

    #[test]
    fn potential_uses_cutoff() {
        let p = StableParams::new(1.0).unwrap();
        let g = Grid::new(8.0, 64).unwrap().with_cutoff(0.5).unwrap();
        let gen = build_generator(&p, &g, 0.3).unwrap();
        let a0 = gen.free_part();
        for i in [0, 3, 10] {
            let expected = 0.3 / g.node(i).max(0.5);
            assert!((gen.entries()[(i, i)] - a0[(i, i)] - expected).abs() < 1e-12);
        }
        assert_ne!(gen.content_hash(), gen.with_kappa(0.2).unwrap().content_hash());
    }
}
