//! Heat-kernel matrices on the grid: dense snapshots at one time, spectral
//! families over many times, and the [`KernelSource`] abstraction shared by
//! the verification code.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{domain, Error, Result};
use crate::expm::expm;
use crate::grid::{GeneratorMatrix, Grid};
use crate::stable::StableParams;

/// Leading bytes of the binary kernel format.
pub const MAGIC: &[u8; 8] = b"HHKERNEL";
/// Version written after the magic.
pub const FORMAT_VERSION: u32 = 1;

/// Which kernel a matrix approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Killed free process, `κ = 0`.
    Dirichlet,
    /// Killed process with the Hardy potential.
    Perturbed,
    /// Conjugated by `x^{α/2}`: `K(x, y) y^{α/2} / x^{α/2}`.
    Weighted,
}

impl KernelKind {
    fn code(self) -> u32 {
        match self {
            KernelKind::Dirichlet => 0,
            KernelKind::Perturbed => 1,
            KernelKind::Weighted => 2,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(KernelKind::Dirichlet),
            1 => Ok(KernelKind::Perturbed),
            2 => Ok(KernelKind::Weighted),
            _ => Err(Error::Format(format!("unknown kernel kind code {code}"))),
        }
    }

    fn for_kappa(kappa: f64) -> Self {
        if kappa == 0.0 {
            KernelKind::Dirichlet
        } else {
            KernelKind::Perturbed
        }
    }
}

/// Kernel values `K[i][j] ≈ k(t, x_i, x_j)` at a fixed time.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    t: f64,
    alpha: f64,
    kappa: f64,
    grid: Grid,
    kind: KernelKind,
    symmetric: bool,
    values: Mat<f64>,
}

/// Relative asymmetry below which a kernel is flagged symmetric.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// `exp(t A) / h` by scaling and squaring.
pub fn heat_kernel(gen: &GeneratorMatrix, t: f64) -> Result<KernelMatrix> {
    check_time(t)?;
    let h = gen.grid().spacing();
    let e = expm(gen.entries(), t)?;
    let n = gen.grid().n();
    let values = Mat::from_fn(n, n, |i, j| e[(i, j)] / h);
    Ok(KernelMatrix::from_parts(
        t,
        gen.alpha(),
        gen.kappa(),
        *gen.grid(),
        KernelKind::for_kappa(gen.kappa()),
        values,
    ))
}

/// Bilinear interpolation of a kernel matrix, clamped at 0.
pub fn kernel_value(k: &KernelMatrix, x: f64, y: f64) -> Result<f64> {
    let (i, a) = k.grid.locate(x)?;
    let (j, b) = k.grid.locate(y)?;
    let v = |p: usize, q: usize| k.values[(p, q)].max(0.0);
    Ok((1.0 - a) * ((1.0 - b) * v(i, j) + b * v(i, j + 1)) + a * ((1.0 - b) * v(i + 1, j) + b * v(i + 1, j + 1)))
}

impl KernelMatrix {
    fn from_parts(t: f64, alpha: f64, kappa: f64, grid: Grid, kind: KernelKind, values: Mat<f64>) -> Self {
        let mut k = Self {
            t,
            alpha,
            kappa,
            grid,
            kind,
            symmetric: false,
            values,
        };
        k.symmetric = k.symmetry_residual() <= SYMMETRY_TOLERANCE * k.max_entry();
        k
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    /// Entry at a node pair, with rounding-level negatives clamped to 0.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)].max(0.0)
    }

    pub fn max_entry(&self) -> f64 {
        let n = self.grid.n();
        (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .map(|(i, j)| self.values[(i, j)].abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        let n = self.grid.n();
        (0..n)
            .flat_map(|j| (0..n).map(move |i| (i, j)))
            .map(|(i, j)| self.values[(i, j)])
            .fold(f64::INFINITY, f64::min)
    }

    /// `max |K[i][j] − K[j][i]|`.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.grid.n();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.values[(i, j)] - self.values[(j, i)]).abs());
            }
        }
        worst
    }

    /// `Σ_j K[i][j] w_j h` for every `i`.
    pub fn apply(&self, weights: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n();
        if weights.len() != n {
            return Err(domain(format!("expected {n} weights, got {}", weights.len())));
        }
        let h = self.grid.spacing();
        Ok((0..n)
            .map(|i| (0..n).map(|j| self.values[(i, j)] * weights[j]).sum::<f64>() * h)
            .collect())
    }

    /// `Σ_j K[i][j] h` for every `i`.
    pub fn row_integrals(&self) -> Vec<f64> {
        self.apply(&vec![1.0; self.grid.n()]).expect("length matches")
    }

    /// The weighted kernel `K[i][j] x_j^{α/2} / x_i^{α/2}`.
    pub fn weighted(&self) -> Result<KernelMatrix> {
        if self.kind == KernelKind::Weighted {
            return Err(Error::State("kernel is already weighted".into()));
        }
        let n = self.grid.n();
        let w: Vec<f64> = self.grid.nodes().iter().map(|x| x.powf(0.5 * self.alpha)).collect();
        let values = Mat::from_fn(n, n, |i, j| self.values[(i, j)] * w[j] / w[i]);
        let mut k = KernelMatrix::from_parts(self.t, self.alpha, self.kappa, self.grid, KernelKind::Weighted, values);
        k.symmetric = false;
        Ok(k)
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        for v in [self.alpha, self.kappa, self.t, self.grid.length()] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.grid.n() as u64).to_le_bytes());
        out.extend_from_slice(&self.grid.cutoff_eps().to_le_bytes());
        out
    }

    /// Binary layout: magic `HHKERNEL`, `u32` version, `u32` kind, `f64` α, κ, t, L,
    /// `u64` n, `f64` cutoff, then `n²` row-major `f64`; all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.header_bytes())?;
        let n = self.grid.n();
        let mut row = Vec::with_capacity(8 * n);
        for i in 0..n {
            row.clear();
            for j in 0..n {
                row.extend_from_slice(&self.values[(i, j)].to_le_bytes());
            }
            w.write_all(&row)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<KernelMatrix> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = KernelKind::from_code(read_u32(&mut r)?)?;
        let alpha = read_f64(&mut r)?;
        let kappa = read_f64(&mut r)?;
        let t = read_f64(&mut r)?;
        let length = read_f64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let cutoff = read_f64(&mut r)?;
        let grid = Grid::new(length, n)
            .and_then(|g| g.with_cutoff(cutoff))
            .map_err(|e| Error::Format(format!("invalid grid in header: {e}")))?;
        let mut values = Mat::<f64>::zeros(n, n);
        let mut buf = vec![0u8; 8 * n];
        for i in 0..n {
            r.read_exact(&mut buf)?;
            for (j, chunk) in buf.chunks_exact(8).enumerate() {
                values[(i, j)] = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        let mut k = KernelMatrix::from_parts(t, alpha, kappa, grid, kind, values);
        if kind == KernelKind::Weighted {
            k.symmetric = false;
        }
        Ok(k)
    }

    /// CSV with header `x,y,value`, one row per node pair.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "y", "value"])?;
        let nodes = self.grid.nodes();
        for (i, x) in nodes.iter().enumerate() {
            for (j, y) in nodes.iter().enumerate() {
                out.serialize((x, y, self.values[(i, j)]))?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// SHA-256 of the binary serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.header_bytes());
        let n = self.grid.n();
        for i in 0..n {
            for j in 0..n {
                hasher.update(self.values[(i, j)].to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub(crate) fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("time must be positive, got {t}")))
    }
}

/// A kernel `p(t, x, y)` available at arbitrary times on a grid.
///
/// Kernels served through this trait are symmetric in `(x, y)`, so columns
/// and rows coincide.
pub trait KernelSource: Sync {
    fn grid(&self) -> &Grid;
    fn alpha(&self) -> f64;
    fn kappa(&self) -> f64;
    /// Short description of how values are produced, for report provenance.
    fn route(&self) -> String;

    /// Columns `p(t, x_·, x_j)` for each requested node index `j`.
    fn columns(&self, t: f64, js: &[usize]) -> Result<Vec<Vec<f64>>>;

    /// `Σ_j p(t, x_i, x_j) w_j h` for every node `i`.
    fn integrate(&self, t: f64, weights: &[f64]) -> Result<Vec<f64>>;

    /// Bilinear values on the product set `xs × ys`; `result[a][b] = p(t, xs[a], ys[b])`.
    fn values(&self, t: f64, xs: &[f64], ys: &[f64]) -> Result<Vec<Vec<f64>>> {
        let grid = *self.grid();
        let ylocs = ys.iter().map(|&y| grid.locate(y)).collect::<Result<Vec<_>>>()?;
        let xlocs = xs.iter().map(|&x| grid.locate(x)).collect::<Result<Vec<_>>>()?;
        let mut needed: Vec<usize> = ylocs.iter().flat_map(|&(j, _)| [j, j + 1]).collect();
        needed.sort_unstable();
        needed.dedup();
        let cols = self.columns(t, &needed)?;
        let lookup: BTreeMap<usize, &Vec<f64>> = needed.iter().copied().zip(cols.iter()).collect();
        Ok(xlocs
            .iter()
            .map(|&(i, a)| {
                ylocs
                    .iter()
                    .map(|&(j, b)| {
                        let c0 = lookup[&j];
                        let c1 = lookup[&(j + 1)];
                        let v = |c: &Vec<f64>, p: usize| c[p].max(0.0);
                        (1.0 - b) * ((1.0 - a) * v(c0, i) + a * v(c0, i + 1))
                            + b * ((1.0 - a) * v(c1, i) + a * v(c1, i + 1))
                    })
                    .collect()
            })
            .collect())
    }

    /// Bilinear value `p(t, x, y)`.
    fn value(&self, t: f64, x: f64, y: f64) -> Result<f64> {
        Ok(self.values(t, &[x], &[y])?[0][0])
    }
}

/// Eigendecomposition `A = U Λ Uᵀ` of a generator; serves `exp(tA)` for any `t`.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    params: StableParams,
    grid: Grid,
    kappa: f64,
    eigenvalues: Vec<f64>,
    eigenvectors: Mat<f64>,
    generator_hash: String,
}

impl SpectralKernel {
    pub fn new(gen: &GeneratorMatrix) -> Result<Self> {
        let evd = gen
            .entries()
            .self_adjoint_eigen(Side::Lower)
            .map_err(|e| Error::LinearAlgebra(format!("eigendecomposition failed: {e:?}")))?;
        let s = evd.S();
        let eigenvalues: Vec<f64> = (0..gen.grid().n()).map(|k| s[k]).collect();
        Ok(Self {
            params: *gen.params(),
            grid: *gen.grid(),
            kappa: gen.kappa(),
            eigenvalues,
            eigenvectors: evd.U().to_owned(),
            generator_hash: gen.content_hash(),
        })
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Mat<f64> {
        &self.eigenvectors
    }

    pub fn kind(&self) -> KernelKind {
        KernelKind::for_kappa(self.kappa)
    }

    /// Hash of the generator this family was built from.
    pub fn generator_hash(&self) -> &str {
        &self.generator_hash
    }

    /// Largest eigenvalue; positive means the semigroup grows.
    pub fn growth_rate(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn exp_factors(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        if t * self.growth_rate() > 700.0 {
            return Err(Error::Divergence(format!(
                "exp(tA) overflows at t = {t}: largest generator eigenvalue {}",
                self.growth_rate()
            )));
        }
        Ok(self.eigenvalues.iter().map(|&l| (t * l).exp()).collect())
    }

    /// Dense kernel matrix `U e^{tΛ} Uᵀ / h`.
    pub fn kernel(&self, t: f64) -> Result<KernelMatrix> {
        let e = self.exp_factors(t)?;
        let n = self.grid.n();
        let h = self.grid.spacing();
        let u = &self.eigenvectors;
        let scaled = Mat::from_fn(n, n, |i, k| u[(i, k)] * e[k] / h);
        let values = &scaled * u.transpose();
        Ok(KernelMatrix::from_parts(t, self.params.alpha(), self.kappa, self.grid, self.kind(), values))
    }

    /// `exp(tA) v`.
    pub fn propagate(&self, t: f64, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.n();
        if v.len() != n {
            return Err(domain(format!("expected a vector of length {n}, got {}", v.len())));
        }
        let e = self.exp_factors(t)?;
        let vm = Mat::from_fn(n, 1, |i, _| v[i]);
        let coeff = self.eigenvectors.transpose() * &vm;
        let scaled = Mat::from_fn(n, 1, |k, _| coeff[(k, 0)] * e[k]);
        let out = &self.eigenvectors * &scaled;
        Ok((0..n).map(|i| out[(i, 0)]).collect())
    }
}

impl KernelSource for SpectralKernel {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn alpha(&self) -> f64 {
        self.params.alpha()
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }

    fn route(&self) -> String {
        "grid".into()
    }

    fn columns(&self, t: f64, js: &[usize]) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.n();
        if let Some(&bad) = js.iter().find(|&&j| j >= n) {
            return Err(domain(format!("node index {bad} out of range")));
        }
        let e = self.exp_factors(t)?;
        let h = self.grid.spacing();
        let u = &self.eigenvectors;
        let coeff = Mat::from_fn(n, js.len(), |k, c| u[(js[c], k)] * e[k] / h);
        let out = u * &coeff;
        Ok((0..js.len()).map(|c| (0..n).map(|i| out[(i, c)]).collect()).collect())
    }

    fn integrate(&self, t: f64, weights: &[f64]) -> Result<Vec<f64>> {
        self.propagate(t, weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::build_generator;

    fn small(kappa: f64) -> GeneratorMatrix {
        let p = StableParams::new(1.0).unwrap();
        let g = Grid::new(8.0, 64).unwrap();
        build_generator(&p, &g, kappa).unwrap()
    }

    #[test]
    fn pade_and_spectral_routes_agree() {
        let gen = small(0.2);
        let a = heat_kernel(&gen, 0.7).unwrap();
        let b = SpectralKernel::new(&gen).unwrap().kernel(0.7).unwrap();
        let scale = a.max_entry();
        for i in 0..64 {
            for j in 0..64 {
                assert!((a.values()[(i, j)] - b.values()[(i, j)]).abs() < 1e-11 * scale);
            }
        }
        assert_eq!(a.kind(), KernelKind::Perturbed);
    }

    #[test]
    fn sub_markov_and_symmetric_at_zero_coupling() {
        let k = heat_kernel(&small(0.0), 1.0).unwrap();
        assert_eq!(k.kind(), KernelKind::Dirichlet);
        assert!(k.is_symmetric());
        assert!(k.row_integrals().iter().all(|&m| m <= 1.0 + 1e-10));
        assert!(k.min_entry() >= -1e-12);
    }

    #[test]
    fn interpolation_identities() {
        let k = heat_kernel(&small(0.0), 1.0).unwrap();
        let g = *k.grid();
        assert_eq!(kernel_value(&k, g.node(10), g.node(20)).unwrap(), k.at(10, 20));
        let xm = 0.5 * (g.node(10) + g.node(11));
        let ym = 0.5 * (g.node(20) + g.node(21));
        let avg = 0.25 * (k.at(10, 20) + k.at(10, 21) + k.at(11, 20) + k.at(11, 21));
        assert!((kernel_value(&k, xm, ym).unwrap() - avg).abs() < 1e-15);
        assert!(kernel_value(&k, 0.01, 1.0).is_err());
    }

    #[test]
    fn binary_round_trip() {
        let k = heat_kernel(&small(0.1), 0.5).unwrap().weighted().unwrap();
        let mut buf = Vec::new();
        k.write_binary(&mut buf).unwrap();
        let back = KernelMatrix::read_binary(buf.as_slice()).unwrap();
        assert_eq!(back.kind(), KernelKind::Weighted);
        assert_eq!(back.content_hash(), k.content_hash());
        assert_eq!(back.values()[(3, 9)], k.values()[(3, 9)]);
        buf[0] = b'X';
        assert!(matches!(KernelMatrix::read_binary(buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn csv_export_has_triples() {
        let k = heat_kernel(&small(0.0), 0.5).unwrap();
        let mut buf = Vec::new();
        k.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("x,y,value"));
        assert_eq!(text.lines().count(), 1 + 64 * 64);
    }

    #[test]
    fn source_columns_match_dense_kernel() {
        let s = SpectralKernel::new(&small(0.25)).unwrap();
        let dense = s.kernel(1.3).unwrap();
        let cols = s.columns(1.3, &[5, 40]).unwrap();
        for (i, (a, b)) in cols[0].iter().zip(&cols[1]).enumerate() {
            assert!((a - dense.values()[(i, 5)]).abs() < 1e-13);
            assert!((b - dense.values()[(i, 40)]).abs() < 1e-13);
        }
        let g = *s.grid();
        let (x, y) = (1.234, 2.5);
        let v = s.value(1.3, x, y).unwrap();
        assert!((v - kernel_value(&dense, x, y).unwrap()).abs() < 1e-13);
        let ones = vec![1.0; 64];
        let mass = s.integrate(1.3, &ones).unwrap();
        let dense_mass = dense.row_integrals();
        assert!((mass[20] - dense_mass[20]).abs() < 1e-12);
        let _ = g;
    }
}
