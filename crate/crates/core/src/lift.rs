//! Finite-dimensional lift: a symmetric `T` with `U T Uᵀ = diag(d)` drives
//! `X_n = Σ_j (j+1)^{T−I} ε_{n−j}`, which is `X_n = Uᵀ Z_n` for the
//! multiplication-operator process `Z` on the eigen-grid with innovations `Uε`.

use nalgebra::DMatrix;
use ndarray::Array2;
use rand::Rng;

use crate::error::{check_dim, LrdError, Result};
use crate::grid::KernelOnGrid;
use crate::model::{classify_regime, coefficient_table, InnovationModel, MemoryProfile, Regime};
use crate::process::{lag_sum, PathSimulator, ProcessConfig, StationaryGaussian};
use crate::rosenblatt::RosenblattKernelSpec;
use crate::scalar::Real;

/// `T = Uᵀ diag(d) U` with orthogonal `U` (rows are eigenvectors) and `d`
/// sorted in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAdjointModel {
    pub t_op: Array2<f64>,
    pub u: Array2<f64>,
    pub d: Vec<f64>,
    /// `max |Uᵀ diag(d) U − T|`.
    pub residual: f64,
}

/// Largest tolerated `|T − Tᵀ|` entry.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Eigendecomposition of a symmetric matrix. Each eigenvector is signed so
/// that its largest-magnitude component is positive.
pub fn build_model(t_op: &Array2<f64>) -> Result<SelfAdjointModel> {
    let (m, c) = t_op.dim();
    if m != c || m == 0 {
        return Err(LrdError::DimensionMismatch { expected: m, found: c });
    }
    let asym = t_op.iter().zip(t_op.t().iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if asym > SYMMETRY_TOL {
        return Err(LrdError::domain(format!("operator is not symmetric (max |T − Tᵀ| = {asym:e})")));
    }
    let mat = DMatrix::from_fn(m, m, |i, j| 0.5 * (t_op[(i, j)] + t_op[(j, i)]));
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut u = Array2::zeros((m, m));
    let mut d = Vec::with_capacity(m);
    for (row, &k) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let lead = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for j in 0..m {
            u[(row, j)] = sign * v[j];
        }
        d.push(eig.eigenvalues[k]);
    }
    let recon = u.t().dot(&Array2::from_diag(&ndarray::Array1::from(d.clone()))).dot(&u);
    let residual = recon.iter().zip(t_op.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(SelfAdjointModel { t_op: t_op.clone(), u, d, residual })
}

impl SelfAdjointModel {
    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// `max |U Uᵀ − I|`.
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.dim();
        let g = self.u.dot(&self.u.t());
        let mut e = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((g[(i, j)] - target).abs());
            }
        }
        e
    }

    /// The eigenvalues as a memory profile on the eigen-grid.
    pub fn profile(&self) -> Result<MemoryProfile<f64>> {
        MemoryProfile::from_vec(self.d.clone())
    }

    fn second_regime_profile(&self) -> Result<MemoryProfile<f64>> {
        let p = self.profile()?;
        if classify_regime(&p) != Regime::Second {
            return Err(LrdError::domain("lift requires every eigenvalue in (1/4, 1/2)"));
        }
        Ok(p)
    }

    /// Innovations on the eigenbasis, `σ_U = U σ Uᵀ`.
    pub fn eigen_innovations(&self, ambient: &InnovationModel<f64>) -> Result<InnovationModel<f64>> {
        check_dim(self.dim(), ambient.dim())?;
        ambient.conjugated(&self.u)
    }

    /// `(j+1)^{T−I}` as the matrix exponential of `(T−I) log(j+1)`.
    pub fn matrix_power(&self, j: usize) -> Array2<f64> {
        let m = self.dim();
        let l = ((j + 1) as f64).ln();
        let a = DMatrix::from_fn(m, m, |i, k| (self.t_op[(i, k)] - if i == k { 1.0 } else { 0.0 }) * l);
        let e = a.exp();
        Array2::from_shape_fn((m, m), |(i, k)| e[(i, k)])
    }
}

/// Lifted path: `z` on the eigen-grid and `x = Uᵀ z` per step (rows are steps).
#[derive(Debug, Clone)]
pub struct LiftedPath {
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    /// Ambient innovations `ε = Uᵀ(Uε)` when the path was built by convolution.
    pub eps: Option<Array2<f64>>,
    pub n: usize,
    pub j: Option<usize>,
    pub seed: u64,
    /// `max |x_direct − x|` when the matrix-power path was computed.
    pub direct_max_diff: Option<f64>,
}

/// Work limit `N·J·m²` for the matrix-power cross-check.
pub const DIRECT_CHECK_LIMIT: usize = 50_000_000;

/// Simulates `Z` by truncated convolution on the eigen-grid with innovations
/// `Uε`, maps `x_n = Uᵀ z_n`, and for small problems recomputes
/// `Σ_j (j+1)^{T−I} ε_{n−j}` directly.
pub fn simulate_lifted(model: &SelfAdjointModel, ambient: &InnovationModel<f64>, n: usize, j: usize, seed: u64) -> Result<LiftedPath> {
    let profile = model.second_regime_profile()?;
    let eig = model.eigen_innovations(ambient)?;
    let sim = PathSimulator::new(ProcessConfig::new(profile, eig, n, j, seed))?;
    let path = sim.replication(0);
    let z = path.x.clone();
    let x = z.dot(&model.u);
    let eta = path.eps.expect("convolution path keeps innovations");
    let eps = eta.dot(&model.u);
    let m = model.dim();
    let direct_max_diff = if n * (j + 1) * m * m <= DIRECT_CHECK_LIMIT {
        let direct = direct_path(model, &eps, n, j);
        Some(direct.iter().zip(x.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    } else {
        None
    };
    Ok(LiftedPath { x, z, eps: Some(eps), n, j: Some(j), seed, direct_max_diff })
}

/// `x_n = Σ_{i=0}^{J} (j+1)^{T−I} ε_{n−i}` for `n = 1..N`, with `eps` rows
/// indexed from time `1−J`.
pub fn direct_path(model: &SelfAdjointModel, eps: &Array2<f64>, n: usize, j: usize) -> Array2<f64> {
    let m = model.dim();
    let powers: Vec<Array2<f64>> = (0..=j).map(|i| model.matrix_power(i)).collect();
    let mut x = Array2::zeros((n, m));
    for t in 0..n {
        // time t+1 is row t + J
        for (i, p) in powers.iter().enumerate() {
            let e = eps.row(t + j - i);
            let v = p.dot(&e);
            let mut row = x.row_mut(t);
            row += &v;
        }
    }
    x
}

/// Exact stationary lifted path of `n + h_max` steps (Gaussian innovations).
pub fn simulate_lifted_exact<R: Rng + ?Sized>(
    model: &SelfAdjointModel,
    sim: &StationaryGaussian<f64>,
    rng: &mut R,
    n: usize,
    h_max: usize,
    seed: u64,
) -> Result<LiftedPath> {
    let path = sim.sample_path(rng, n, h_max, seed)?;
    let z = path.x;
    let x = z.dot(&model.u);
    Ok(LiftedPath { x, z, eps: None, n, j: None, seed, direct_max_diff: None })
}

/// Exact simulator for `Z` on the eigen-grid.
pub fn exact_simulator(model: &SelfAdjointModel, ambient: &InnovationModel<f64>, len: usize, j_pop: usize) -> Result<StationaryGaussian<f64>> {
    let profile = model.second_regime_profile()?;
    StationaryGaussian::new(&profile, &model.eigen_innovations(ambient)?, len, j_pop)
}

/// `Uᵀ [Ξ_N(U K Uᵀ)] U` per lag.
pub fn delta_scale<T: Real>(fluct: &[KernelOnGrid<T>], model: &SelfAdjointModel, n: usize) -> Result<Vec<KernelOnGrid<T>>> {
    let m = model.dim();
    let u = model.u.mapv(T::of);
    let nn = T::of_usize(n);
    let d: Vec<T> = model.d.iter().map(|v| T::of(*v)).collect();
    fluct
        .iter()
        .map(|k| {
            check_dim(m, k.dim())?;
            let mut inner = u.dot(&k.values).dot(&u.t());
            for ((r, s), v) in inner.indexed_iter_mut() {
                *v *= nn.powf(T::one() - d[r] - d[s]);
            }
            KernelOnGrid::new(u.t().dot(&inner).dot(&u))
        })
        .collect()
}

/// `𝔷_U = Uᵀ 𝔯 U` for a draw `𝔯` with covariance `σ_U`.
pub fn lift_rosenblatt<T: Real>(sample: &KernelOnGrid<T>, model: &SelfAdjointModel) -> Result<KernelOnGrid<T>> {
    check_dim(model.dim(), sample.dim())?;
    let u = model.u.mapv(T::of);
    KernelOnGrid::new(u.t().dot(&sample.values).dot(&u))
}

/// Covariance tensor `C[(i,j),(k,l)]` of an `m×m` random matrix, flattened
/// row-major in both index pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCovariance {
    pub m: usize,
    pub values: Array2<f64>,
}

impl MatrixCovariance {
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[(i * self.m + j, k * self.m + l)]
    }

    /// Second moments `𝔼 A(i,j)²` as an `m×m` matrix.
    pub fn second_moments(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.m, self.m), |(i, j)| self.get(i, j, i, j))
    }

    /// Covariance of `Uᵀ A U`.
    pub fn conjugate(&self, u: &Array2<f64>) -> MatrixCovariance {
        let m = self.m;
        // (Uᵀ A U)_{ij} = Σ_{r,s} U_ri U_sj A_rs, i.e. row (i,j) of Uᵀ⊗Uᵀ
        let mut k = Array2::zeros((m * m, m * m));
        for i in 0..m {
            for j in 0..m {
                for r in 0..m {
                    for s in 0..m {
                        k[(i * m + j, r * m + s)] = u[(r, i)] * u[(s, j)];
                    }
                }
            }
        }
        MatrixCovariance { m, values: k.dot(&self.values).dot(&k.t()) }
    }
}

/// Covariance of the limit `𝔷_U = Uᵀ 𝔯 U` where `𝔯` has covariance `σ_U`.
pub fn limit_covariance(model: &SelfAdjointModel, ambient: &InnovationModel<f64>) -> Result<MatrixCovariance> {
    let spec = RosenblattKernelSpec::new(model.second_regime_profile()?, model.eigen_innovations(ambient)?)?;
    let m = model.dim();
    let mut c = Array2::zeros((m * m, m * m));
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for l in 0..m {
                    c[(i * m + j, k * m + l)] = spec.covariance(i, j, k, l)?;
                }
            }
        }
    }
    Ok(MatrixCovariance { m, values: c }.conjugate(&model.u))
}

/// Exact covariance of `Δ_N^U(Γ̂_{N,0} − Γ_0)` for Gaussian innovations and
/// the stationary infinite-memory process:
/// `N^{−2}Σ_{|k|<N}(N−|k|)[γ_k(r,a)γ_k(s,b) + γ_k(r,b)γ_k(s,a)]` in
/// eigencoordinates, scaled by `Ξ_N` and conjugated by `U`.
pub fn finite_n_covariance(model: &SelfAdjointModel, ambient: &InnovationModel<f64>, n: usize, j_pop: usize) -> Result<MatrixCovariance> {
    let profile = model.second_regime_profile()?;
    let eig = model.eigen_innovations(ambient)?;
    let m = model.dim();
    let d = &model.d;
    let sigma = eig.sigma();
    let gam = |k: i64, r: usize, a: usize| -> f64 {
        if k >= 0 {
            sigma.get(r, a) * lag_sum(d[r], d[a], k as usize, j_pop)
        } else {
            sigma.get(a, r) * lag_sum(d[a], d[r], (-k) as usize, j_pop)
        }
    };
    let _ = profile;
    let lags: Vec<Array2<f64>> = (-(n as i64) + 1..n as i64)
        .map(|k| Array2::from_shape_fn((m, m), |(r, a)| gam(k, r, a)))
        .collect();
    let nf = n as f64;
    let mut c = Array2::zeros((m * m, m * m));
    for r in 0..m {
        for s in 0..m {
            for a in 0..m {
                for b in 0..m {
                    let mut acc = 0.0;
                    for (idx, g) in lags.iter().enumerate() {
                        let k = idx as f64 - (nf - 1.0);
                        acc += (nf - k.abs()) * (g[(r, a)] * g[(s, b)] + g[(r, b)] * g[(s, a)]);
                    }
                    let scale = nf.powf(2.0 - d[r] - d[s] - d[a] - d[b]);
                    c[(r * m + s, a * m + b)] = acc / (nf * nf) * scale;
                }
            }
        }
    }
    Ok(MatrixCovariance { m, values: c }.conjugate(&model.u))
}

/// `coefficient_table` on the eigen-grid, kept for callers that need the raw
/// `(j+1)^{d−1}` values.
pub fn eigen_coefficients(model: &SelfAdjointModel, len: usize) -> Result<Array2<f64>> {
    Ok(coefficient_table(len, &model.profile()?))
}
