//! Memory profile, operator coefficients, regime classification and the
//! innovation model.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LrdError, Result};
use crate::grid::{GridFunction, GridSpace, KernelOnGrid};
use crate::scalar::Real;

/// Memory exponents `d(r)` on the grid, each in `(0, 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryProfile<T: Real> {
    d: GridFunction<T>,
}

impl<T: Real> MemoryProfile<T> {
    pub fn new(d: GridFunction<T>) -> Result<Self> {
        if d.is_empty() {
            return Err(LrdError::config("memory profile is empty"));
        }
        let half = T::of(0.5);
        if let Some(v) = d.values.iter().find(|v| !(**v > T::zero() && **v < half)) {
            return Err(LrdError::domain(format!("memory exponent {v} outside (0, 1/2)")));
        }
        Ok(MemoryProfile { d })
    }

    pub fn constant(m: usize, d: T) -> Result<Self> {
        Self::new(GridFunction::new(Array1::from_elem(m, d)))
    }

    pub fn from_vec(d: Vec<T>) -> Result<Self> {
        Self::new(GridFunction::from_vec(d))
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn d(&self) -> &GridFunction<T> {
        &self.d
    }

    pub fn at(&self, r: usize) -> T {
        self.d.values[r]
    }

    pub fn max(&self) -> T {
        self.d.max()
    }

    pub fn min(&self) -> T {
        self.d.min()
    }

    /// `d(r) + d(s)`.
    pub fn pair(&self, r: usize, s: usize) -> T {
        self.at(r) + self.at(s)
    }

    /// Deterministic FNV-1a hash of the exponents, for output sidecars.
    pub fn hash_hex(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.d.values.iter() {
            for b in v.as_f64().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    First,
    Second,
    Unsupported,
}

pub fn classify_regime<T: Real>(profile: &MemoryProfile<T>) -> Regime {
    let quarter = T::of(0.25);
    if profile.max() < quarter {
        Regime::First
    } else if profile.min() > quarter && profile.max() < T::of(0.5) {
        Regime::Second
    } else {
        Regime::Unsupported
    }
}

/// `u_j(r) = (j+1)^{d(r)−1}`.
pub fn coefficient_u<T: Real>(j: usize, profile: &MemoryProfile<T>) -> GridFunction<T> {
    let base = T::of_usize(j + 1);
    GridFunction::new(profile.d.values.mapv(|d| base.powf(d - T::one())))
}

/// Scalar coefficient `(j+1)^{d−1}`.
#[inline]
pub fn u_scalar<T: Real>(j: usize, d: T) -> T {
    T::of_usize(j + 1).powf(d - T::one())
}

/// Table `u[j][r]` for `j = 0..len`, stored row-major as a `len × m` array.
pub fn coefficient_table<T: Real>(len: usize, profile: &MemoryProfile<T>) -> Array2<T> {
    let m = profile.len();
    Array2::from_shape_fn((len, m), |(j, r)| u_scalar(j, profile.at(r)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InnovationLaw {
    #[default]
    Gaussian,
    ScaledRademacher,
}

impl std::str::FromStr for InnovationLaw {
    type Err = LrdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gaussian" => Ok(InnovationLaw::Gaussian),
            "scaled_rademacher" | "rademacher" => Ok(InnovationLaw::ScaledRademacher),
            other => Err(LrdError::config(format!("unknown innovation law '{other}'"))),
        }
    }
}

/// Spatial covariance `σ(r, s)` with a factor `F` (`F Fᵀ = σ`) and a law.
#[derive(Debug, Clone)]
pub struct InnovationModel<T: Real> {
    sigma: KernelOnGrid<T>,
    factor: Array2<T>,
    law: InnovationLaw,
}

/// Eigenvalues below this are treated as numerical noise and clipped to zero.
pub const EIGEN_CLIP: f64 = -1e-12;

impl<T: Real> InnovationModel<T> {
    /// Factorizes `sigma` by a symmetric eigendecomposition, clipping
    /// eigenvalues in `[EIGEN_CLIP·scale, 0)` to zero.
    pub fn new(sigma: KernelOnGrid<T>, law: InnovationLaw) -> Result<Self> {
        let m = sigma.dim();
        let scale = sigma.max_abs().as_f64().max(1.0);
        for r in 0..m {
            if !(sigma.get(r, r) > T::zero()) {
                return Err(LrdError::domain(format!("sigma({r},{r}) must be positive")));
            }
            for s in 0..r {
                let (a, b) = (sigma.get(r, s).as_f64(), sigma.get(s, r).as_f64());
                if (a - b).abs() > 1e-12 * scale {
                    return Err(LrdError::domain(format!("sigma not symmetric at ({r},{s})")));
                }
            }
        }
        if !sigma.is_finite() {
            return Err(LrdError::domain("sigma has non-finite entries"));
        }
        let factor = psd_factor(&sigma)?;
        Ok(InnovationModel { sigma, factor, law })
    }

    /// Model with an explicit factor; `sigma` is recomputed as `F Fᵀ`.
    pub fn from_factor(factor: Array2<T>, law: InnovationLaw) -> Result<Self> {
        let (m, _) = factor.dim();
        if m == 0 {
            return Err(LrdError::config("empty factor"));
        }
        let sigma = KernelOnGrid::new(factor.dot(&factor.t()))?;
        Ok(InnovationModel { sigma, factor, law })
    }

    pub fn identity(m: usize, scale: T, law: InnovationLaw) -> Result<Self> {
        let sigma = KernelOnGrid::from_fn(m, |(i, j)| if i == j { scale } else { T::zero() });
        Self::new(sigma, law)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &KernelOnGrid<T> {
        &self.sigma
    }

    pub fn factor(&self) -> &Array2<T> {
        &self.factor
    }

    pub fn law(&self) -> InnovationLaw {
        self.law
    }

    pub fn variance(&self, r: usize) -> T {
        self.sigma.get(r, r)
    }

    pub fn min_variance(&self) -> T {
        (0..self.dim()).map(|r| self.variance(r)).fold(T::infinity(), T::min)
    }

    pub fn max_variance(&self) -> T {
        (0..self.dim()).map(|r| self.variance(r)).fold(T::zero(), T::max)
    }

    /// `max |F Fᵀ − σ|`.
    pub fn reconstruction_error(&self) -> T {
        let rec = self.factor.dot(&self.factor.t());
        KernelOnGrid::new(rec).map(|k| k.max_abs_diff(&self.sigma)).unwrap_or(T::infinity())
    }

    /// Same law and factor conjugated by an orthogonal matrix: `σ_U = U σ Uᵀ`.
    pub fn conjugated(&self, u: &Array2<T>) -> Result<Self> {
        check_dim(self.dim(), u.ncols())?;
        let factor = u.dot(&self.factor);
        let sigma = factor.dot(&factor.t());
        let sigma = (&sigma + &sigma.t()).mapv(|v| v * T::of(0.5));
        Ok(InnovationModel { sigma: KernelOnGrid::new(sigma)?, factor, law: self.law })
    }

    /// Writes one innovation field into `out` (length `m`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut [T], out: &mut [T]) {
        let k = self.factor.ncols();
        debug_assert_eq!(scratch.len(), k);
        match self.law {
            InnovationLaw::Gaussian => scratch.iter_mut().for_each(|z| *z = T::standard_normal(rng)),
            InnovationLaw::ScaledRademacher => {
                scratch.iter_mut().for_each(|z| *z = if rng.gen::<bool>() { T::one() } else { -T::one() })
            }
        }
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.factor.row(r);
            let mut acc = T::zero();
            for (f, z) in row.iter().zip(scratch.iter()) {
                acc += *f * *z;
            }
            *o = acc;
        }
    }

    /// Draws `n` i.i.d. innovation fields as rows of an `n × m` array, in
    /// stream order.
    pub fn sample_block<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Array2<T> {
        let m = self.dim();
        let k = self.factor.ncols();
        let mut z = Array2::<T>::zeros((n, k));
        match self.law {
            InnovationLaw::Gaussian => z.iter_mut().for_each(|v| *v = T::standard_normal(rng)),
            InnovationLaw::ScaledRademacher => {
                z.iter_mut().for_each(|v| *v = if rng.gen::<bool>() { T::one() } else { -T::one() })
            }
        }
        if m == 1 && k == 1 {
            let f = self.factor[(0, 0)];
            return z.mapv(|v| v * f);
        }
        z.dot(&self.factor.t())
    }
}

/// One draw `ε ~ law` with covariance `σ`.
pub fn sample_innovation<T: Real, R: Rng + ?Sized>(model: &InnovationModel<T>, rng: &mut R) -> GridFunction<T> {
    let mut scratch = vec![T::zero(); model.factor.ncols()];
    let mut out = vec![T::zero(); model.dim()];
    model.sample_into(rng, &mut scratch, &mut out);
    GridFunction::from_vec(out)
}

/// Symmetric eigendecomposition `σ = V Λ Vᵀ` in double precision, returning
/// `V √Λ` with negative eigenvalues above the clip level set to zero.
fn psd_factor<T: Real>(sigma: &KernelOnGrid<T>) -> Result<Array2<T>> {
    let m = sigma.dim();
    let mat = DMatrix::from_fn(m, m, |i, j| 0.5 * (sigma.get(i, j).as_f64() + sigma.get(j, i).as_f64()));
    let scale = mat.amax().max(f64::MIN_POSITIVE);
    let eig = mat.symmetric_eigen();
    let mut factor = Array2::<T>::zeros((m, m));
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < EIGEN_CLIP * scale {
            return Err(LrdError::domain(format!("sigma is not positive semidefinite (eigenvalue {lambda:e})")));
        }
        let root = lambda.max(0.0).sqrt();
        for i in 0..m {
            factor[(i, k)] = T::of(eig.eigenvectors[(i, k)] * root);
        }
    }
    Ok(factor)
}

/// Declarative memory profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DSpec {
    Constant(f64),
    Values(Vec<f64>),
}

/// Declarative spatial covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSpec {
    IdentityScaled(f64),
    ExpCorr { scale: f64 },
    Values(Vec<Vec<f64>>),
}

/// Declarative grid: `{"uniform": m}` on `[0, 1]` or explicit sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Uniform(usize),
    Explicit { points: Vec<f64>, weights: Vec<f64> },
}

/// Model block of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub grid: GridSpec,
    pub d: DSpec,
    pub sigma: SigmaSpec,
    #[serde(default = "default_law")]
    pub law: String,
}

fn default_law() -> String {
    "gaussian".into()
}

/// A fully built model: grid, profile and innovations.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub grid: GridSpace<T>,
    pub profile: MemoryProfile<T>,
    pub innovations: InnovationModel<T>,
}

impl ModelSpec {
    pub fn build<T: Real>(&self) -> Result<Model<T>> {
        let grid = match &self.grid {
            GridSpec::Uniform(m) => GridSpace::uniform_unit(*m)?,
            GridSpec::Explicit { points, weights } => {
                GridSpace::new(points.iter().map(|&p| T::of(p)).collect(), weights.iter().map(|&w| T::of(w)).collect())?
            }
        };
        let m = grid.len();
        let profile = match &self.d {
            DSpec::Constant(v) => MemoryProfile::constant(m, T::of(*v))?,
            DSpec::Values(v) => {
                check_dim(m, v.len())?;
                MemoryProfile::from_vec(v.iter().map(|&x| T::of(x)).collect())?
            }
        };
        let sigma = match &self.sigma {
            SigmaSpec::IdentityScaled(s) => {
                if !(*s > 0.0) {
                    return Err(LrdError::config("identity_scaled needs a positive scale"));
                }
                KernelOnGrid::from_fn(m, |(i, j)| if i == j { T::of(*s) } else { T::zero() })
            }
            SigmaSpec::ExpCorr { scale } => {
                if !(*scale > 0.0) {
                    return Err(LrdError::config("exp_corr needs a positive scale"));
                }
                let p = grid.points();
                KernelOnGrid::from_fn(m, |(i, j)| (-(p[i] - p[j]).abs() / T::of(*scale)).exp())
            }
            SigmaSpec::Values(rows) => {
                check_dim(m, rows.len())?;
                let mut a = Array2::zeros((m, m));
                for (i, row) in rows.iter().enumerate() {
                    check_dim(m, row.len())?;
                    for (j, v) in row.iter().enumerate() {
                        a[(i, j)] = T::of(*v);
                    }
                }
                KernelOnGrid::new(a)?
            }
        };
        let law = self.law.parse()?;
        Ok(Model { grid, profile, innovations: InnovationModel::new(sigma, law)? })
    }
}
