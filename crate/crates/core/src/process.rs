//! Simulation of `X_n(r) = Σ_j (j+1)^{d(r)−1} ε_{n−j}(r)` and its population
//! autocovariances.
//!
//! Time indexing: `x` row `k` holds `X_{k+1}`, so rows cover `1..=N+H`.
//! `eps` row `k` holds `ε_{k+1−J}`, covering `1−J..=N+H`.

use std::io::Write;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1};
use num_traits::Zero;
use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LrdError, Result};
use crate::grid::KernelOnGrid;
use crate::model::{coefficient_table, InnovationLaw, InnovationModel, MemoryProfile};
use crate::quadrature::power_product_tail;
use crate::rng::{stream, Purpose};
use crate::scalar::{pairwise_sum_by, Real};

/// Largest array (in scalars) a single simulation may allocate.
pub const MAX_ELEMENTS: usize = 1 << 28;

/// Default number of explicitly summed terms before the Euler–Maclaurin tail.
pub const DEFAULT_J_POP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvolutionMethod {
    /// Direct `O(N·J·m)` sum, the reference path.
    #[default]
    Direct,
    Fft,
}

#[derive(Debug, Clone)]
pub struct ProcessConfig<T: Real> {
    pub profile: MemoryProfile<T>,
    pub innovations: InnovationModel<T>,
    pub n: usize,
    pub j: usize,
    pub h_max: usize,
    pub seed: u64,
    pub method: ConvolutionMethod,
}

impl<T: Real> ProcessConfig<T> {
    pub fn new(profile: MemoryProfile<T>, innovations: InnovationModel<T>, n: usize, j: usize, seed: u64) -> Self {
        ProcessConfig { profile, innovations, n, j, h_max: 0, seed, method: ConvolutionMethod::Direct }
    }

    pub fn with_h_max(mut self, h_max: usize) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn with_method(mut self, method: ConvolutionMethod) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LrdError::config("path length N must be at least 1"));
        }
        if self.j == 0 {
            return Err(LrdError::config("truncation depth J must be at least 1"));
        }
        check_dim(self.profile.len(), self.innovations.dim())?;
        check_size(self.n + self.h_max + self.j, self.profile.len())
    }
}

pub(crate) fn check_size(rows: usize, m: usize) -> Result<()> {
    match rows.checked_mul(m) {
        Some(total) if total <= MAX_ELEMENTS => Ok(()),
        _ => Err(LrdError::Resource(format!(
            "path of {rows} x {m} scalars exceeds the limit of {MAX_ELEMENTS} elements"
        ))),
    }
}

/// A simulated path with the innovations that produced it (when finite).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath<T> {
    pub x: Array2<T>,
    pub eps: Option<Array2<T>>,
    pub n: usize,
    pub h_max: usize,
    /// Truncation depth; `None` for the infinite-memory Gaussian simulator.
    pub j: Option<usize>,
    pub seed: u64,
}

impl<T: Real> SamplePath<T> {
    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// `X_t` for `t ∈ 1..=N+H`.
    pub fn x_at(&self, t: usize) -> ArrayView1<'_, T> {
        self.x.row(t - 1)
    }

    /// `ε_t` for `t ∈ 1−J..=N+H`.
    pub fn eps_at(&self, t: i64) -> Result<ArrayView1<'_, T>> {
        let eps = self.eps.as_ref().ok_or_else(|| LrdError::Missing("path does not retain innovations".into()))?;
        let j = self.j.unwrap_or(0) as i64;
        let row = t - 1 + j;
        if row < 0 || row as usize >= eps.nrows() {
            return Err(LrdError::Window(format!("innovation index {t} outside 1-J..=N+H")));
        }
        Ok(eps.row(row as usize))
    }

    /// Binary export: four little-endian `u64` (rows, m, J, seed) followed by
    /// the row-major `f64` path values.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.x.nrows() as u64, self.m() as u64, self.j.unwrap_or(0) as u64, self.seed] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.x.iter() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: std::io::Read>(mut r: R) -> Result<(u64, u64, Array2<f64>)> {
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let (rows, m) = (header[0] as usize, header[1] as usize);
        check_size(rows, m)?;
        let mut data = Vec::with_capacity(rows * m);
        for _ in 0..rows * m {
            r.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        let x = Array2::from_shape_vec((rows, m), data).map_err(|e| LrdError::Serde(e.to_string()))?;
        Ok((header[2], header[3], x))
    }

    /// CSV export in long format: `n,r_index,value`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,r_index,value")?;
        for (k, row) in self.x.rows().into_iter().enumerate() {
            for (r, v) in row.iter().enumerate() {
                writeln!(w, "{},{},{:e}", k + 1, r, v.as_f64())?;
            }
        }
        Ok(())
    }
}

/// Reusable simulator: coefficient table and FFT spectra are computed once.
pub struct PathSimulator<T: Real> {
    config: ProcessConfig<T>,
    u: Array2<T>,
    fft: Option<FftConvolver>,
}

impl<T: Real> PathSimulator<T> {
    pub fn new(config: ProcessConfig<T>) -> Result<Self> {
        config.validate()?;
        let u = coefficient_table(config.j + 1, &config.profile);
        let fft = match config.method {
            ConvolutionMethod::Direct => None,
            ConvolutionMethod::Fft => Some(FftConvolver::new(&u, config.n + config.h_max + config.j)),
        };
        Ok(PathSimulator { config, u, fft })
    }

    pub fn config(&self) -> &ProcessConfig<T> {
        &self.config
    }

    /// Path for replication `rep` drawn from the `(seed, Path, rep)` stream.
    pub fn replication(&self, rep: u64) -> SamplePath<T> {
        let mut rng = stream(self.config.seed, Purpose::Path, rep);
        self.simulate_with_rng(&mut rng)
    }

    pub fn simulate_with_rng<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePath<T> {
        let c = &self.config;
        let eps = c.innovations.sample_block(rng, c.n + c.h_max + c.j);
        self.from_innovations(eps)
    }

    /// Builds the path from a given innovation block (`(N+H+J) × m`).
    pub fn from_innovations(&self, eps: Array2<T>) -> SamplePath<T> {
        let c = &self.config;
        let x = match &self.fft {
            None => convolve_direct(&self.u, &eps, c.n + c.h_max),
            Some(f) => f.convolve(&eps, c.n + c.h_max, c.j),
        };
        SamplePath { x, eps: Some(eps), n: c.n, h_max: c.h_max, j: Some(c.j), seed: c.seed }
    }
}

/// One path from the `(seed, Path, 0)` stream.
pub fn simulate<T: Real>(config: &ProcessConfig<T>) -> Result<SamplePath<T>> {
    Ok(PathSimulator::new(config.clone())?.replication(0))
}

/// `x_t(r) = Σ_{j=0}^{J} u_j(r) eps[t + J − j](r)`, summed in ascending `j`.
pub fn convolve_direct<T: Real>(u: &Array2<T>, eps: &Array2<T>, rows: usize) -> Array2<T> {
    let jj = u.nrows() - 1;
    let m = u.ncols();
    let mut x = Array2::<T>::zeros((rows, m));
    for t in 0..rows {
        for r in 0..m {
            let mut acc = T::zero();
            for j in 0..=jj {
                acc += u[(j, r)] * eps[(t + jj - j, r)];
            }
            x[(t, r)] = acc;
        }
    }
    x
}

struct FftConvolver {
    size: usize,
    spectra: Vec<Vec<Complex<f64>>>,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FftConvolver {
    fn new<T: Real>(u: &Array2<T>, eps_len: usize) -> Self {
        let size = (eps_len + u.nrows()).next_power_of_two();
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let spectra = (0..u.ncols())
            .map(|r| {
                let mut buf = vec![Complex::zero(); size];
                for (j, b) in buf.iter_mut().enumerate().take(u.nrows()) {
                    b.re = u[(j, r)].as_f64();
                }
                forward.process(&mut buf);
                buf
            })
            .collect();
        FftConvolver { size, spectra, forward, inverse }
    }

    fn convolve<T: Real>(&self, eps: &Array2<T>, rows: usize, jj: usize) -> Array2<T> {
        let m = eps.ncols();
        let mut x = Array2::<T>::zeros((rows, m));
        let scale = 1.0 / self.size as f64;
        let mut buf = vec![Complex::zero(); self.size];
        for r in 0..m {
            buf.iter_mut().for_each(|b| *b = Complex::zero());
            for (k, b) in buf.iter_mut().enumerate().take(eps.nrows()) {
                b.re = eps[(k, r)].as_f64();
            }
            self.forward.process(&mut buf);
            for (b, s) in buf.iter_mut().zip(&self.spectra[r]) {
                *b *= *s;
            }
            self.inverse.process(&mut buf);
            for t in 0..rows {
                x[(t, r)] = T::of(buf[t + jj].re * scale);
            }
        }
        x
    }
}

/// `Σ_{j≥0} (j+h+1)^{d_r−1}(j+1)^{d_s−1}`: `j_pop + 1` explicit terms plus an
/// Euler–Maclaurin tail.
pub fn lag_sum<T: Real>(d_r: T, d_s: T, h: usize, j_pop: usize) -> T {
    let one = T::one();
    let hh = T::of_usize(h);
    let head = pairwise_sum_by(j_pop + 1, |j| {
        let jf = T::of_usize(j);
        (jf + hh + one).powf(d_r - one) * (jf + one).powf(d_s - one)
    });
    head + power_product_tail(T::of_usize(j_pop + 1), hh + one, d_r - one, one, d_s - one)
}

/// `Σ_{b=0}^{J−h} (b+h+1)^{d_r−1}(b+1)^{d_s−1}`, the truncated-model lag sum.
pub fn lag_sum_truncated<T: Real>(d_r: T, d_s: T, h: usize, j: usize) -> T {
    if h > j {
        return T::zero();
    }
    let one = T::one();
    let hh = T::of_usize(h);
    pairwise_sum_by(j - h + 1, |b| {
        let bf = T::of_usize(b);
        (bf + hh + one).powf(d_r - one) * (bf + one).powf(d_s - one)
    })
}

/// `γ_h(r, s) = σ(r, s) Σ_{j≥0} (j+h+1)^{d(r)−1}(j+1)^{d(s)−1}`.
///
/// The explicit head runs to `j_pop`; the remainder uses an Euler–Maclaurin
/// tail, giving relative error below 1e-10 for `j_pop ≥ 50` and `d ≤ 0.45`.
pub fn population_autocov<T: Real>(
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    h: usize,
    j_pop: usize,
) -> Result<KernelOnGrid<T>> {
    let m = profile.len();
    check_dim(m, innovations.dim())?;
    let sigma = innovations.sigma();
    Ok(KernelOnGrid::from_fn(m, |(r, s)| {
        let c = sigma.get(r, s);
        if c == T::zero() {
            T::zero()
        } else {
            c * lag_sum(profile.at(r), profile.at(s), h, j_pop)
        }
    }))
}

/// `γ_0..γ_H` of the infinite-memory model.
pub fn population_autocov_lags<T: Real>(
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    h_max: usize,
    j_pop: usize,
) -> Result<Vec<KernelOnGrid<T>>> {
    (0..=h_max).map(|h| population_autocov(profile, innovations, h, j_pop)).collect()
}

/// Autocovariance of the model truncated at depth `J`:
/// `σ(r,s) Σ_{b=0}^{J−h} u_{b+h}(r) u_b(s)`.
pub fn population_autocov_truncated<T: Real>(
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    h: usize,
    j: usize,
) -> Result<KernelOnGrid<T>> {
    let m = profile.len();
    check_dim(m, innovations.dim())?;
    let sigma = innovations.sigma();
    Ok(KernelOnGrid::from_fn(m, |(r, s)| sigma.get(r, s) * lag_sum_truncated(profile.at(r), profile.at(s), h, j)))
}

/// Mean-square truncation error bound per site,
/// `σ_sup² · J^{2 max d − 1} / (1 − 2 max d)`, with `sigma_sup` the largest
/// innovation standard deviation.
pub fn truncation_bound<T: Real>(profile: &MemoryProfile<T>, j: usize, sigma_sup: T) -> Result<T> {
    let d = profile.max();
    let two = T::of(2.0);
    if !(d < T::of(0.5)) {
        return Err(LrdError::domain("truncation bound needs max d < 1/2"));
    }
    if j == 0 {
        return Err(LrdError::config("truncation depth J must be at least 1"));
    }
    Ok(sigma_sup * sigma_sup * T::of_usize(j).powf(two * d - T::one()) / (T::one() - two * d))
}

/// Cap on the truncation depth the bound rule may request.
pub const MAX_DEFAULT_J: f64 = 1e8;

/// Smallest `J` with `truncation_bound < 1e-3 · min σ²(r)`.
pub fn default_truncation<T: Real>(profile: &MemoryProfile<T>, innovations: &InnovationModel<T>) -> Result<usize> {
    let d = profile.max().as_f64();
    let sup = innovations.max_variance().as_f64();
    let target = 1e-3 * innovations.min_variance().as_f64();
    // J^{2d−1} < target (1−2d) / sup
    let j = (target * (1.0 - 2.0 * d) / sup).powf(1.0 / (2.0 * d - 1.0));
    if !(j <= MAX_DEFAULT_J) {
        return Err(LrdError::Resource(format!(
            "truncation rule needs J ≈ {j:.3e} (max d = {d}); choose a ratio_n, n_squared, fixed or exact rule"
        )));
    }
    let mut jj = (j.floor() as usize).max(1);
    while truncation_bound(profile, jj, T::of(sup.sqrt()))?.as_f64() >= target {
        jj += 1;
    }
    Ok(jj)
}

/// How the truncation depth is chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TruncationRule {
    /// Smallest `J` certified by [`truncation_bound`].
    #[default]
    Bound,
    Fixed(usize),
    /// `J = k · N`.
    RatioN(usize),
    /// `J = N²`.
    NSquared,
    /// No truncation: exact stationary Gaussian simulation.
    Exact,
}

impl TruncationRule {
    /// `Some(J)` for a finite rule, `None` for [`TruncationRule::Exact`].
    pub fn resolve<T: Real>(
        self,
        n: usize,
        profile: &MemoryProfile<T>,
        innovations: &InnovationModel<T>,
    ) -> Result<Option<usize>> {
        let j = match self {
            TruncationRule::Bound => default_truncation(profile, innovations)?,
            TruncationRule::Fixed(j) => j,
            TruncationRule::RatioN(k) => n.checked_mul(k).ok_or_else(|| LrdError::Resource("J overflows".into()))?,
            TruncationRule::NSquared => n.checked_mul(n).ok_or_else(|| LrdError::Resource("J overflows".into()))?,
            TruncationRule::Exact => return Ok(None),
        };
        if j == 0 {
            return Err(LrdError::config("truncation depth J must be at least 1"));
        }
        Ok(Some(j))
    }
}

/// Exact simulation of the untruncated Gaussian process by circulant
/// embedding of its autocovariance sequence.
///
/// The `m × m` lag covariances `γ_0..γ_K` are embedded in a circulant of size
/// `2K`; each frequency carries a Hermitian spectral matrix whose square root
/// colours complex white noise. The real part of the inverse transform is a
/// stationary Gaussian path with exactly the prescribed covariances.
pub struct StationaryGaussian<T: Real> {
    len: usize,
    m: usize,
    size: usize,
    roots: Vec<DMatrix<Complex<f64>>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
    min_eigenvalue: f64,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> StationaryGaussian<T> {
    /// Simulator for paths of `len` consecutive steps.
    pub fn new(profile: &MemoryProfile<T>, innovations: &InnovationModel<T>, len: usize, j_pop: usize) -> Result<Self> {
        if innovations.law() != InnovationLaw::Gaussian {
            return Err(LrdError::config("exact simulation is only available for Gaussian innovations"));
        }
        let lags = population_autocov_lags(profile, innovations, len.max(1), j_pop)?;
        Self::from_lags(&lags, len)
    }

    /// Simulator from explicit lag covariances `γ_0..γ_K`, `K ≥ len`.
    pub fn from_lags(lags: &[KernelOnGrid<T>], len: usize) -> Result<Self> {
        let k = lags.len() - 1;
        if k < len.max(1) {
            return Err(LrdError::config("need lag covariances up to the path length"));
        }
        let m = lags[0].dim();
        check_size(2 * k, m * m)?;
        let size = 2 * k;
        // c_h = γ_h for h ≤ K, c_h = γ_{L−h}ᵀ above.
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut spectra = vec![DMatrix::<Complex<f64>>::zeros(m, m); size];
        let mut buf = vec![Complex::zero(); size];
        for r in 0..m {
            for s in 0..m {
                for (h, b) in buf.iter_mut().enumerate() {
                    let v = if h <= k { lags[h].get(r, s) } else { lags[size - h].get(s, r) };
                    *b = Complex::new(v.as_f64(), 0.0);
                }
                forward.process(&mut buf);
                for (f, b) in buf.iter().enumerate() {
                    spectra[f][(r, s)] = *b;
                }
            }
        }
        let mut min_eigenvalue = f64::INFINITY;
        let mut max_eigenvalue: f64 = 0.0;
        let mut roots = Vec::with_capacity(size);
        for s in spectra {
            let herm = (&s + s.adjoint()) * Complex::new(0.5, 0.0);
            let eig = herm.symmetric_eigen();
            let mut scaled = eig.eigenvectors.clone();
            for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
                min_eigenvalue = min_eigenvalue.min(lambda);
                max_eigenvalue = max_eigenvalue.max(lambda);
                let root = lambda.max(0.0).sqrt();
                scaled.column_mut(c).iter_mut().for_each(|z| *z *= root);
            }
            roots.push(scaled);
        }
        if min_eigenvalue < -1e-9 * max_eigenvalue {
            return Err(LrdError::domain(format!(
                "circulant embedding is not positive semidefinite (min eigenvalue {min_eigenvalue:e})"
            )));
        }
        Ok(StationaryGaussian { len, m, size, roots, inverse, min_eigenvalue, _marker: std::marker::PhantomData })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Smallest eigenvalue of the embedded spectral matrices (≥ 0 up to
    /// round-off when the embedding is valid).
    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    /// One path, rows are `len` consecutive time steps.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<T> {
        let m = self.m;
        let mut cols = vec![vec![Complex::<f64>::zero(); self.size]; m];
        let mut xi = vec![Complex::<f64>::zero(); m];
        for f in 0..self.size {
            for z in xi.iter_mut() {
                let a: f64 = f64::standard_normal(rng);
                let b: f64 = f64::standard_normal(rng);
                *z = Complex::new(a, b);
            }
            let root = &self.roots[f];
            for (r, col) in cols.iter_mut().enumerate() {
                let mut acc = Complex::zero();
                for (c, z) in xi.iter().enumerate() {
                    acc += root[(r, c)] * z;
                }
                col[f] = acc;
            }
        }
        let scale = 1.0 / (self.size as f64).sqrt();
        let mut out = Array2::<T>::zeros((self.len, m));
        for (r, col) in cols.iter_mut().enumerate() {
            self.inverse.process(col);
            for t in 0..self.len {
                out[(t, r)] = T::of(col[t].re * scale);
            }
        }
        out
    }

    /// Path wrapped as a [`SamplePath`] with `N + H` rows and no innovations.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R, n: usize, h_max: usize, seed: u64) -> Result<SamplePath<T>> {
        if n + h_max > self.len {
            return Err(LrdError::config("simulator length shorter than N + H"));
        }
        let x = self.sample(rng).slice(ndarray::s![..n + h_max, ..]).to_owned();
        Ok(SamplePath { x, eps: None, n, h_max, j: None, seed })
    }
}
