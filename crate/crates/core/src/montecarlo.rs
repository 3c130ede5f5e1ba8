//! Monte Carlo estimates of the killed and Hardy-perturbed kernels.
//!
//! Paths are Euler walks with exact α-stable increments, killed when they
//! leave (0, L) at a grid time. The Feynman–Kac weight `exp(κ ∫ X_s^{-α} ds)`
//! turns killed-path averages into the perturbed kernel.
//!
//! Paths are simulated in fixed chunks; chunk `c` draws from ChaCha stream `c`
//! of the configured seed and partial sums are merged in chunk order, so
//! results do not depend on the number of threads.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Paths per RNG stream.
pub const CHUNK: usize = 4096;

/// Parameters of a simulated path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub alpha: f64,
    pub t_end: f64,
    pub dt: f64,
    pub x0: f64,
    /// The potential is evaluated at `max(X, cutoff_eps)`.
    pub cutoff_eps: f64,
    /// Paths are also killed at or beyond this point.
    pub domain_length: f64,
    pub seed: u64,
}

impl PathConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(domain(format!("stability index must lie in (0, 2), got {}", self.alpha)));
        }
        if !(self.t_end > 0.0 && self.dt > 0.0) {
            return Err(domain("time horizon and step must be positive"));
        }
        if self.dt > self.t_end / 16.0 * (1.0 + 1e-12) {
            return Err(domain(format!("step {} exceeds t_end/16", self.dt)));
        }
        if !(self.x0 > 0.0 && self.x0 < self.domain_length) {
            return Err(domain(format!("start {} must lie in (0, {})", self.x0, self.domain_length)));
        }
        if !(self.cutoff_eps > 0.0) {
            return Err(domain("potential cutoff must be positive"));
        }
        Ok(())
    }

    /// Number of steps; the step is adjusted so they tile `[0, t_end]` exactly.
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.steps() as f64
    }
}

/// A standard symmetric α-stable variable (characteristic function `exp(-|z|^α)`)
/// by the Chambers–Mallows–Stuck transform.
pub fn standard_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let u = PI * (open01(rng) - 0.5);
    if alpha == 1.0 {
        return u.tan();
    }
    let w = -open01(rng).ln();
    (alpha * u).sin() / u.cos().powf(1.0 / alpha) * (((1.0 - alpha) * u).cos() / w).powf((1.0 - alpha) / alpha)
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

/// `dt^{1/α} S` with `S` standard symmetric α-stable.
pub fn sample_increment<R: Rng + ?Sized>(alpha: f64, dt: f64, rng: &mut R) -> f64 {
    dt.powf(1.0 / alpha) * standard_stable(alpha, rng)
}

/// Result of one simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOutcome {
    pub alive: bool,
    pub x_end: f64,
    /// Left-endpoint estimate of `∫_0^t max(X_s, ε)^{-α} ds`.
    pub occupation: f64,
    /// `κ · occupation`.
    pub weight_log: f64,
}

/// Simulates one killed path and its Feynman–Kac exponent.
pub fn simulate_killed_path<R: Rng + ?Sized>(cfg: &PathConfig, kappa: f64, rng: &mut R) -> PathOutcome {
    let (alive, x_end, occupation) = walk(cfg, rng);
    PathOutcome {
        alive,
        x_end,
        occupation,
        weight_log: if kappa == 0.0 { 0.0 } else { kappa * occupation },
    }
}

fn walk<R: Rng + ?Sized>(cfg: &PathConfig, rng: &mut R) -> (bool, f64, f64) {
    let steps = cfg.steps();
    let dt = cfg.step();
    let scale = dt.powf(1.0 / cfg.alpha);
    let mut x = cfg.x0;
    let mut occupation = 0.0;
    for _ in 0..steps {
        occupation += x.max(cfg.cutoff_eps).powf(-cfg.alpha) * dt;
        x += scale * standard_stable(cfg.alpha, rng);
        if x <= 0.0 || x >= cfg.domain_length {
            return (false, x, occupation);
        }
    }
    (true, x, occupation)
}

/// Histogram estimate of a kernel value with tail diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    /// Paths alive at the final time.
    pub n_survived: usize,
    /// Alive paths ending in the bin.
    pub n_in_bin: usize,
    /// Largest single contribution as a fraction of the total.
    pub max_share: f64,
    /// `(Σ w)² / Σ w²` over the paths in the bin.
    pub effective_sample_size: f64,
    /// No path ended in the bin: the mean is 0 and the standard error carries no information.
    pub no_hits: bool,
    /// Heavy-tailed weights: one path dominates or the effective sample is tiny.
    pub unstable: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
    sum: f64,
    sum_sq: f64,
    max: f64,
    hits: usize,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
        if v != 0.0 {
            self.hits += 1;
            self.sum += v;
            self.sum_sq += v * v;
            self.max = self.max.max(v.abs());
        }
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n as f64;
        self.n = n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.max = self.max.max(o.max);
        self.hits += o.hits;
    }

    fn stderr(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}

fn check_bin(cfg: &PathConfig, y_center: f64, y_halfwidth: f64) -> Result<()> {
    if !(y_halfwidth > 0.0) {
        return Err(domain("bin half-width must be positive"));
    }
    if y_center - y_halfwidth < 0.0 || y_center + y_halfwidth > cfg.domain_length {
        return Err(domain(format!(
            "bin [{}, {}] is not inside (0, {})",
            y_center - y_halfwidth,
            y_center + y_halfwidth,
            cfg.domain_length
        )));
    }
    Ok(())
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn chunk_sizes(n_paths: usize) -> Vec<usize> {
    (0..n_paths.div_ceil(CHUNK))
        .map(|c| CHUNK.min(n_paths - c * CHUNK))
        .collect()
}

/// Estimates `k(t, x0, y_center)` averaged over the bin, for κ = `kappa`
/// (0 gives the killed kernel).
pub fn estimate_kernel_mc(cfg: &PathConfig, kappa: f64, y_center: f64, y_halfwidth: f64, n_paths: usize) -> Result<MCEstimate> {
    Ok(estimate_kernel_mc_multi(cfg, &[kappa], y_center, y_halfwidth, n_paths)?[0])
}

/// Like [`estimate_kernel_mc`] for several couplings on the same paths.
pub fn estimate_kernel_mc_multi(
    cfg: &PathConfig,
    kappas: &[f64],
    y_center: f64,
    y_halfwidth: f64,
    n_paths: usize,
) -> Result<Vec<MCEstimate>> {
    cfg.validate()?;
    check_bin(cfg, y_center, y_halfwidth)?;
    if n_paths < 2 {
        return Err(domain("need at least two paths"));
    }
    if let Some(k) = kappas.iter().find(|k| !(**k >= 0.0)) {
        return Err(domain(format!("coupling must be non-negative, got {k}")));
    }
    let norm = 1.0 / (2.0 * y_halfwidth);
    let per_chunk: Vec<(Vec<Moments>, usize)> = chunk_sizes(n_paths)
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut rng = chunk_rng(cfg.seed, c);
            let mut moments = vec![Moments::default(); kappas.len()];
            let mut survived = 0;
            for _ in 0..size {
                let (alive, x, occ) = walk(cfg, &mut rng);
                survived += alive as usize;
                let hit = alive && (x - y_center).abs() <= y_halfwidth;
                for (m, &k) in moments.iter_mut().zip(kappas) {
                    m.push(if hit { (k * occ).exp() * norm } else { 0.0 });
                }
            }
            (moments, survived)
        })
        .collect();
    let mut total = vec![Moments::default(); kappas.len()];
    let mut survived = 0;
    for (moments, s) in &per_chunk {
        survived += s;
        for (t, m) in total.iter_mut().zip(moments) {
            t.merge(m);
        }
    }
    Ok(total
        .iter()
        .map(|m| {
            let ess = if m.sum_sq > 0.0 { m.sum * m.sum / m.sum_sq } else { 0.0 };
            let max_share = if m.sum > 0.0 { m.max / m.sum } else { 0.0 };
            MCEstimate {
                mean: m.mean,
                stderr: m.stderr(),
                n_paths: m.n,
                n_survived: survived,
                n_in_bin: m.hits,
                max_share,
                effective_sample_size: ess,
                no_hits: m.hits == 0,
                unstable: m.hits > 0 && (max_share > 0.05 || ess < 100.0),
            }
        })
        .collect())
}

/// Coupled estimates at step `dt` and `dt/2` on shared increments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementStudy {
    pub coarse: MCEstimate,
    pub fine: MCEstimate,
    /// `fine.mean − coarse.mean`.
    pub difference: f64,
    /// Standard error of the paired difference.
    pub difference_stderr: f64,
}

/// Halves the step: each coarse increment is the sum of two fine ones, so the
/// difference between the two estimates has small variance.
pub fn dt_refinement(cfg: &PathConfig, kappa: f64, y_center: f64, y_halfwidth: f64, n_paths: usize) -> Result<RefinementStudy> {
    cfg.validate()?;
    check_bin(cfg, y_center, y_halfwidth)?;
    if n_paths < 2 {
        return Err(domain("need at least two paths"));
    }
    let norm = 1.0 / (2.0 * y_halfwidth);
    let steps = cfg.steps();
    let dt = cfg.step();
    let half = 0.5 * dt;
    let scale = half.powf(1.0 / cfg.alpha);
    let inside = |x: f64| x > 0.0 && x < cfg.domain_length;
    let q = |x: f64| x.max(cfg.cutoff_eps).powf(-cfg.alpha);

    let per_chunk: Vec<[Moments; 3]> = chunk_sizes(n_paths)
        .into_par_iter()
        .enumerate()
        .map(|(c, size)| {
            let mut rng = chunk_rng(cfg.seed, c);
            let mut m = [Moments::default(); 3];
            for _ in 0..size {
                let (mut xc, mut xf) = (cfg.x0, cfg.x0);
                let (mut oc, mut of) = (0.0, 0.0);
                let (mut alive_c, mut alive_f) = (true, true);
                for _ in 0..steps {
                    if !alive_c && !alive_f {
                        break;
                    }
                    let a = scale * standard_stable(cfg.alpha, &mut rng);
                    let b = scale * standard_stable(cfg.alpha, &mut rng);
                    if alive_f {
                        of += q(xf) * half;
                        xf += a;
                        if inside(xf) {
                            of += q(xf) * half;
                            xf += b;
                            alive_f = inside(xf);
                        } else {
                            alive_f = false;
                        }
                    }
                    if alive_c {
                        oc += q(xc) * dt;
                        xc += a + b;
                        alive_c = inside(xc);
                    }
                }
                let contrib = |alive: bool, x: f64, occ: f64| {
                    if alive && (x - y_center).abs() <= y_halfwidth {
                        (kappa * occ).exp() * norm
                    } else {
                        0.0
                    }
                };
                let vc = contrib(alive_c, xc, oc);
                let vf = contrib(alive_f, xf, of);
                m[0].push(vc);
                m[1].push(vf);
                m[2].push(vf - vc);
            }
            m
        })
        .collect();
    let mut total = [Moments::default(); 3];
    for m in &per_chunk {
        for (t, c) in total.iter_mut().zip(m) {
            t.merge(c);
        }
    }
    let summarize = |m: &Moments| {
        let ess = if m.sum_sq > 0.0 { m.sum * m.sum / m.sum_sq } else { 0.0 };
        let max_share = if m.sum > 0.0 { m.max / m.sum } else { 0.0 };
        MCEstimate {
            mean: m.mean,
            stderr: m.stderr(),
            n_paths: m.n,
            n_survived: 0,
            n_in_bin: m.hits,
            max_share,
            effective_sample_size: ess,
            no_hits: m.hits == 0,
            unstable: m.hits > 0 && (max_share > 0.05 || ess < 100.0),
        }
    };
    Ok(RefinementStudy {
        coarse: summarize(&total[0]),
        fine: summarize(&total[1]),
        difference: total[2].mean,
        difference_stderr: total[2].stderr(),
    })
}

/// One CSV row of Monte Carlo output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub alpha: f64,
    /// `δ`, or `none` for the killed kernel.
    pub delta_or_none: String,
    pub t: f64,
    pub x0: f64,
    pub y_center: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McRecord {
    pub fn new(cfg: &PathConfig, delta: Option<f64>, y_center: f64, est: &MCEstimate) -> Self {
        Self {
            alpha: cfg.alpha,
            delta_or_none: delta.map_or_else(|| "none".to_string(), |d| d.to_string()),
            t: cfg.t_end,
            x0: cfg.x0,
            y_center,
            mean: est.mean,
            stderr: est.stderr,
            n_paths: est.n_paths,
            seed: cfg.seed,
        }
    }
}

/// Writes records as CSV with columns
/// `alpha,delta_or_none,t,x0,y_center,mean,stderr,n_paths,seed`.
pub fn write_records<W: Write>(w: W, records: &[McRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(x0: f64) -> PathConfig {
        PathConfig {
            alpha: 1.0,
            t_end: 1.0,
            dt: 0.01,
            x0,
            cutoff_eps: 0.01,
            domain_length: 40.0,
            seed: 7,
        }
    }

    #[test]
    fn cauchy_increments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut v: Vec<f64> = (0..100_000).map(|_| sample_increment(1.0, 1.0, &mut rng)).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(v[50_000].abs() < 0.02);
        let below_one = v.iter().filter(|&&x| x <= 1.0).count() as f64 / 1e5;
        assert!((below_one - 0.75).abs() < 0.01);
    }

    #[test]
    fn increments_follow_scaling() {
        // Two-sample Kolmogorov–Smirnov: dt = 4 versus 4^{1/α} × (dt = 1).
        let alpha = 1.99;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a: Vec<f64> = (0..10_000).map(|_| sample_increment(alpha, 4.0, &mut rng)).collect();
        let mut b: Vec<f64> = (0..10_000)
            .map(|_| 4f64.powf(1.0 / alpha) * sample_increment(alpha, 1.0, &mut rng))
            .collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 - j as f64).abs() / 1e4);
        }
        // 1% critical value for n = m = 10⁴.
        assert!(d < 1.63 * (2.0f64 / 1e4).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn zero_coupling_has_no_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(simulate_killed_path(&cfg(1.0), 0.0, &mut rng).weight_log, 0.0);
        }
    }

    #[test]
    fn survival_far_from_and_near_the_boundary() {
        let far = PathConfig {
            x0: 5000.0,
            domain_length: 1e4,
            ..cfg(1.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let alive = (0..10_000).filter(|_| simulate_killed_path(&far, 0.0, &mut rng).alive).count();
        assert!(alive as f64 / 1e4 >= 0.99);
        let near = cfg(0.001);
        let alive = (0..10_000).filter(|_| simulate_killed_path(&near, 0.0, &mut rng).alive).count();
        assert!(alive as f64 / 1e4 <= 0.2);
    }

    #[test]
    fn deterministic_and_monotone() {
        let c = cfg(1.0);
        let a = estimate_kernel_mc_multi(&c, &[0.0, 0.2], 1.0, 0.1, 10_000).unwrap();
        let b = estimate_kernel_mc_multi(&c, &[0.0, 0.2], 1.0, 0.1, 10_000).unwrap();
        assert_eq!(a, b);
        assert!(a[1].mean >= a[0].mean);
        assert_eq!(a[0].n_paths, 10_000);
        assert!(a[0].n_survived <= 10_000);
        let single = estimate_kernel_mc(&c, 0.2, 1.0, 0.1, 10_000).unwrap();
        assert_eq!(single, a[1]);
    }

    #[test]
    fn bin_at_truncation_is_empty() {
        let c = cfg(1.0);
        let e = estimate_kernel_mc(&c, 0.0, 39.95, 0.05, 4000).unwrap();
        assert!(e.mean < 1e-3);
        assert!(estimate_kernel_mc(&c, 0.0, 39.99, 0.05, 4000).is_err());
    }

    #[test]
    fn rejects_invalid_config() {
        let mut c = cfg(1.0);
        c.dt = 0.1;
        assert!(c.validate().is_err());
        let mut c = cfg(1.0);
        c.x0 = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn refinement_is_coupled() {
        let study = dt_refinement(&cfg(1.0), 0.0, 1.0, 0.1, 20_000).unwrap();
        assert!(study.difference_stderr < study.coarse.stderr);
    }

    #[test]
    fn csv_records() {
        let c = cfg(1.0);
        let e = estimate_kernel_mc(&c, 0.0, 1.0, 0.1, 100).unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, &[McRecord::new(&c, None, 1.0, &e)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("alpha,delta_or_none,t,x0,y_center,mean,stderr,n_paths,seed\n"));
        assert!(text.contains(",none,"));
    }
}
