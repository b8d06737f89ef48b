//! Sample autocovariances, fluctuation scalings, the diagonal/off-diagonal
//! decomposition and the discrete kernels `C_N`, `C̃_N`.

use std::io::Write;

use ndarray::{s, Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LrdError, Result};
use crate::grid::{GridSpace, KernelOnGrid};
use crate::model::{u_scalar, InnovationModel, MemoryProfile};
use crate::process::{lag_sum, population_autocov_truncated, SamplePath, DEFAULT_J_POP};
use crate::quadrature::{power_product_tail, FixedRule};
use crate::rosenblatt::kernel_inner_closed_form;
use crate::scalar::{pairwise_sum, pairwise_sum_by, Real};

/// `γ̂_{N,0..H}`.
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovEstimate<T> {
    pub lags: Vec<KernelOnGrid<T>>,
    pub n: usize,
}

/// `γ̂_{N,h}(r,s) = (1/N) Σ_{n=1}^{N} X_{n+h}(r) X_n(s)`, no mean correction.
pub fn sample_autocov<T: Real>(path: &SamplePath<T>, h_max: usize) -> Result<AutocovEstimate<T>> {
    if h_max > path.h_max || path.x.nrows() < path.n + h_max {
        return Err(LrdError::Window(format!(
            "lag {h_max} needs the path extended by H steps (have {})",
            path.h_max
        )));
    }
    let n = path.n;
    let inv = T::one() / T::of_usize(n);
    let lags = (0..=h_max)
        .map(|h| {
            let lead = path.x.slice(s![h..h + n, ..]);
            let base = path.x.slice(s![0..n, ..]);
            KernelOnGrid { values: lead.t().dot(&base).mapv(|v| v * inv) }
        })
        .collect();
    Ok(AutocovEstimate { lags, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scaling {
    SqrtN,
    XiN,
}

impl Scaling {
    pub fn tag(self) -> &'static str {
        match self {
            Scaling::SqrtN => "sqrt_n",
            Scaling::XiN => "xi_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaledFluctuation<T> {
    pub lags: Vec<KernelOnGrid<T>>,
    pub scaling: Scaling,
    pub n: usize,
}

/// `Ξ_N K (r,s) = N^{1−d(r)−d(s)} K(r,s)`.
pub fn xi_scale<T: Real>(k: &KernelOnGrid<T>, profile: &MemoryProfile<T>, n: usize) -> Result<KernelOnGrid<T>> {
    check_dim(profile.len(), k.dim())?;
    let nf = T::of_usize(n);
    Ok(KernelOnGrid::from_fn(k.dim(), |(r, s)| nf.powf(T::one() - profile.pair(r, s)) * k.get(r, s)))
}

pub fn scale_fluct<T: Real>(
    est: &AutocovEstimate<T>,
    pop: &[KernelOnGrid<T>],
    profile: &MemoryProfile<T>,
    scaling: Scaling,
) -> Result<ScaledFluctuation<T>> {
    check_dim(est.lags.len(), pop.len())?;
    let lags = est
        .lags
        .iter()
        .zip(pop)
        .map(|(g, p)| {
            let diff = g.sub(p)?;
            match scaling {
                Scaling::SqrtN => Ok(diff.scale(T::of_usize(est.n).sqrt())),
                Scaling::XiN => xi_scale(&diff, profile, est.n),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaledFluctuation { lags, scaling, n: est.n })
}

/// Diagonal part `D_{N,h}` computed from the innovations alone:
/// `(1/N) Σ_t (ε_t(r)ε_t(s) − σ(r,s)) Σ_{n} u_{n−t+h}(r) u_{n−t}(s)`, where
/// `eps` row `k` holds `ε_{k+1−J}`.
pub fn diagonal_part<T: Real>(
    eps: &Array2<T>,
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    n: usize,
    j: usize,
    h: usize,
) -> Result<KernelOnGrid<T>> {
    let m = profile.len();
    check_dim(m, innovations.dim())?;
    check_dim(m, eps.ncols())?;
    if h > j {
        return Ok(KernelOnGrid::zeros(m));
    }
    if eps.nrows() < n + j {
        return Err(LrdError::Window("innovation block shorter than N + J".into()));
    }
    let sigma = innovations.sigma();
    let span = j - h; // b ∈ 0..=span
    let inv = T::one() / T::of_usize(n);
    let mut out = KernelOnGrid::zeros(m);
    let mut prefix = vec![T::zero(); span + 2];
    for r in 0..m {
        for s_ in 0..m {
            let (dr, ds) = (profile.at(r), profile.at(s_));
            for b in 0..=span {
                prefix[b + 1] = prefix[b] + u_scalar(b + h, dr) * u_scalar(b, ds);
            }
            // t = n − b ranges over 1−span..=N
            let terms: Vec<T> = (0..n + span)
                .map(|k| {
                    let t = k as i64 + 1 - span as i64;
                    let lo = (1 - t).max(0) as usize;
                    let hi = ((n as i64 - t) as usize).min(span);
                    let weight = prefix[hi + 1] - prefix[lo];
                    let row = (t - 1 + j as i64) as usize;
                    (eps[(row, r)] * eps[(row, s_)] - sigma.get(r, s_)) * weight
                })
                .collect();
            out.values[(r, s_)] = pairwise_sum(&terms) * inv;
        }
    }
    Ok(out)
}

/// Exact split `γ̂_{N,h} − γ_h = D_{N,h} + O_{N,h}` under the path's truncation.
#[derive(Debug, Clone)]
pub struct Decomposition<T> {
    pub diagonal: Vec<KernelOnGrid<T>>,
    pub off_diagonal: Vec<KernelOnGrid<T>>,
    /// The truncated-model `γ_h` used as centring.
    pub population: Vec<KernelOnGrid<T>>,
}

/// `D` from [`diagonal_part`], `O = (γ̂ − γ) − D`.
pub fn decompose<T: Real>(
    path: &SamplePath<T>,
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    h_max: usize,
) -> Result<Decomposition<T>> {
    let eps = path.eps.as_ref().ok_or_else(|| LrdError::Missing("decomposition needs the innovations".into()))?;
    let j = path.j.ok_or_else(|| LrdError::Missing("decomposition needs a finite truncation".into()))?;
    let est = sample_autocov(path, h_max)?;
    let mut diagonal = Vec::new();
    let mut off_diagonal = Vec::new();
    let mut population = Vec::new();
    for h in 0..=h_max {
        let pop = population_autocov_truncated(profile, innovations, h, j)?;
        let d = diagonal_part(eps, profile, innovations, path.n, j, h)?;
        let o = est.lags[h].sub(&pop)?.sub(&d)?;
        diagonal.push(d);
        off_diagonal.push(o);
        population.push(pop);
    }
    Ok(Decomposition { diagonal, off_diagonal, population })
}

/// `O_{N,h}` by its own double sum
/// `(1/N) Σ_n Σ_{i,j ≤ J, n+h−i ≠ n−j} u_i(r) u_j(s) ε_{n+h−i}(r) ε_{n−j}(s)`.
/// `O(N·J²·m²)`; meant for verification on small instances.
pub fn off_diagonal_direct<T: Real>(path: &SamplePath<T>, profile: &MemoryProfile<T>, h: usize) -> Result<KernelOnGrid<T>> {
    let j = path.j.ok_or_else(|| LrdError::Missing("needs a finite truncation".into()))?;
    if h > path.h_max {
        return Err(LrdError::Window("lag exceeds path extension".into()));
    }
    let m = profile.len();
    let mut out = KernelOnGrid::zeros(m);
    for r in 0..m {
        for s_ in 0..m {
            let mut acc = T::zero();
            for n in 1..=path.n as i64 {
                for i in 0..=j as i64 {
                    let t1 = n + h as i64 - i;
                    let e1 = path.eps_at(t1)?[r] * u_scalar(i as usize, profile.at(r));
                    for jj in 0..=j as i64 {
                        let t2 = n - jj;
                        if t1 != t2 {
                            acc += e1 * u_scalar(jj as usize, profile.at(s_)) * path.eps_at(t2)?[s_];
                        }
                    }
                }
            }
            out.values[(r, s_)] = acc / T::of_usize(path.n);
        }
    }
    Ok(out)
}

/// `C_{N,h}(j₁,j₂,r,s) = N^{−d(r)−d(s)} Σ_{n=1}^{N} u_{n+h−j₁}(r) u_{n−j₂}(s)`
/// restricted to coefficient indices in `0..=J` (or `0..` when untruncated).
#[derive(Debug, Clone)]
pub struct DiscreteKernel<T: Real> {
    profile: MemoryProfile<T>,
    pub n: usize,
    pub h: usize,
    pub truncation: Option<usize>,
    /// Dense table over the admissible window when truncated: axes
    /// `(j₁ − lo₁, j₂ − lo₂, r, s)`.
    table: Option<Array4<T>>,
}

impl<T: Real> DiscreteKernel<T> {
    /// Admissible window `j₁ ∈ [1+h−J, N+h]`, `j₂ ∈ [1−J, N]`.
    pub fn window(&self) -> Option<((i64, i64), (i64, i64))> {
        self.truncation.map(|j| {
            let (n, h, j) = (self.n as i64, self.h as i64, j as i64);
            ((1 + h - j, n + h), (1 - j, n))
        })
    }

    pub fn eval(&self, j1: i64, j2: i64, r: usize, s: usize) -> T {
        if let (Some(table), Some(((lo1, hi1), (lo2, hi2)))) = (&self.table, self.window()) {
            if j1 < lo1 || j1 > hi1 || j2 < lo2 || j2 > hi2 {
                return T::zero();
            }
            return table[((j1 - lo1) as usize, (j2 - lo2) as usize, r, s)];
        }
        discrete_kernel_entry(&self.profile, self.n, self.h, self.truncation, j1, j2, r, s)
    }
}

#[allow(clippy::too_many_arguments)]
fn discrete_kernel_entry<T: Real>(
    profile: &MemoryProfile<T>,
    n: usize,
    h: usize,
    truncation: Option<usize>,
    j1: i64,
    j2: i64,
    r: usize,
    s: usize,
) -> T {
    let (dr, ds) = (profile.at(r), profile.at(s));
    let cap = truncation.map(|j| j as i64).unwrap_or(i64::MAX);
    let mut acc = T::zero();
    for nn in 1..=n as i64 {
        let a = nn + h as i64 - j1;
        let b = nn - j2;
        if a >= 0 && b >= 0 && a <= cap && b <= cap {
            acc += u_scalar(a as usize, dr) * u_scalar(b as usize, ds);
        }
    }
    acc * T::of_usize(n).powf(-(dr + ds))
}

/// Builds `C_{N,h}`. With a truncation `J` the admissible window is tabulated.
pub fn discrete_kernel<T: Real>(
    profile: &MemoryProfile<T>,
    n: usize,
    h: usize,
    truncation: Option<usize>,
) -> Result<DiscreteKernel<T>> {
    if n == 0 {
        return Err(LrdError::config("discrete kernel needs N ≥ 1"));
    }
    let mut k = DiscreteKernel { profile: profile.clone(), n, h, truncation, table: None };
    if let Some(((lo1, hi1), (lo2, hi2))) = k.window() {
        let (n1, n2) = ((hi1 - lo1 + 1) as usize, (hi2 - lo2 + 1) as usize);
        let m = profile.len();
        crate::process::check_size(n1 * n2, m * m)?;
        let table = Array4::from_shape_fn((n1, n2, m, m), |(a, b, r, s)| {
            discrete_kernel_entry(profile, n, h, truncation, a as i64 + lo1, b as i64 + lo2, r, s)
        });
        k.table = Some(table);
    }
    Ok(k)
}

/// `Q₂(C)(r,s) = Σ_{j₁≠j₂} C(j₁,j₂,r,s) ε_{j₁}(r) ε_{j₂}(s)`.
pub fn q2_statistic<T: Real>(path: &SamplePath<T>, kernel: &DiscreteKernel<T>) -> Result<KernelOnGrid<T>> {
    if path.j != kernel.truncation || path.n != kernel.n || kernel.h > path.h_max {
        return Err(LrdError::Window(format!(
            "kernel (N={}, h={}, J={:?}) does not match path (N={}, H={}, J={:?})",
            kernel.n, kernel.h, kernel.truncation, path.n, path.h_max, path.j
        )));
    }
    let ((lo1, hi1), (lo2, hi2)) = kernel.window().ok_or_else(|| LrdError::Window("kernel is not truncated".into()))?;
    let m = path.m();
    let mut out = KernelOnGrid::zeros(m);
    for r in 0..m {
        for s_ in 0..m {
            let mut acc = T::zero();
            for j1 in lo1..=hi1 {
                let e1 = path.eps_at(j1)?[r];
                let mut row = T::zero();
                for j2 in lo2..=hi2 {
                    if j1 != j2 {
                        row += kernel.eval(j1, j2, r, s_) * path.eps_at(j2)?[s_];
                    }
                }
                acc += e1 * row;
            }
            out.values[(r, s_)] = acc;
        }
    }
    Ok(out)
}

/// Result of [`kernel_distance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelDistance {
    /// `‖C̃_N^σ − 𝔣^σ‖`.
    pub distance: f64,
    /// `‖C̃_N^σ‖²`.
    pub discrete_sq: f64,
    /// `⟨C̃_N^σ, 𝔣^σ⟩`.
    pub cross: f64,
    /// `‖𝔣^σ‖²`.
    pub limit_sq: f64,
}

/// Number of explicit terms in the `κ` series before its tail.
const KAPPA_HEAD: usize = 400;
/// Gauss–Legendre nodes for the cell-offset integral.
const KAPPA_NODES: usize = 48;
/// Substitution exponent `t = τ^p` smoothing the `t^d` endpoint behaviour.
const KAPPA_POWER: f64 = 6.0;

/// `κ_t(Δ) = Σ_{m ≥ max(0,−Δ)} (m+Δ+1)^{d−1} g(m,t)` with
/// `g(m,t) = ((m+t)^d − (m−1+t)₊^d)/d`.
fn kappa(d: f64, delta: i64, t: f64) -> f64 {
    let start = (-delta).max(0) as usize;
    let g = |m: usize| {
        let mf = m as f64;
        let lower = if m == 0 { 0.0 } else { (mf - 1.0 + t).powf(d) };
        ((mf + t).powf(d) - lower) / d
    };
    let head: f64 = (start..start + KAPPA_HEAD).map(|m| ((m as i64 + delta + 1) as f64).powf(d - 1.0) * g(m)).sum();
    // g(m,t) = (m+t−½)^{d−1} [1 + (d−1)(d−2)/(24 (m+t−½)²) + O(m^{−4})]
    let m0 = (start + KAPPA_HEAD) as f64;
    let a = delta as f64 + 1.0;
    let b = t - 0.5;
    let tail = power_product_tail(m0, a, d - 1.0, b, d - 1.0)
        + (d - 1.0) * (d - 2.0) / 24.0 * power_product_tail(m0, a, d - 1.0, b, d - 3.0);
    head + tail
}

/// `‖C̃_{N,h}^σ − 𝔣^σ‖_{L²(ℝ²; L²(𝕐²))}` with
/// `C̃_{N,h}(x₁,x₂) = N·C_{N,h}(⌈x₁N⌉,⌈x₂N⌉)` (untruncated coefficients).
///
/// Each of `‖C̃‖²`, `⟨C̃,𝔣⟩`, `‖𝔣‖²` is evaluated on the whole plane: the
/// first through the lag-stationary form `N^{−2d} Σ_Δ (N−|Δ|) ρ_r(Δ) ρ_s(Δ)`,
/// the second by integrating `𝔣` against each cell in closed form, the third
/// by its closed form. No truncation of `ℝ²` is involved. Entries are weighted
/// by `w_r w_s σ²(r) σ²(s)`.
pub fn kernel_distance<T: Real>(
    grid: &GridSpace<T>,
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    n: usize,
    h: usize,
) -> Result<KernelDistance> {
    if n < 2 {
        return Err(LrdError::config("kernel distance needs N ≥ 2"));
    }
    let m = profile.len();
    check_dim(m, grid.len())?;
    check_dim(m, innovations.dim())?;
    let rule = FixedRule::new(KAPPA_NODES);
    let nodes: Vec<(f64, f64)> = rule
        .mapped(0.0, 1.0)
        .map(|(tau, w): (f64, f64)| (tau.powf(KAPPA_POWER), w * KAPPA_POWER * tau.powf(KAPPA_POWER - 1.0)))
        .collect();
    let w = grid.weights();
    let mut totals = [0.0f64; 3];
    for r in 0..m {
        for s_ in 0..m {
            let (dr, ds) = (profile.at(r).as_f64(), profile.at(s_).as_f64());
            let weight = (w[r] * w[s_] * innovations.variance(r) * innovations.variance(s_)).as_f64();
            let parts = distance_terms(dr, ds, n, h, &nodes)?;
            for (t, p) in totals.iter_mut().zip(parts) {
                *t += weight * p;
            }
        }
    }
    let [discrete_sq, cross, limit_sq] = totals;
    let sq = (discrete_sq - 2.0 * cross + limit_sq).max(0.0);
    Ok(KernelDistance { distance: sq.sqrt(), discrete_sq, cross, limit_sq })
}

fn distance_terms(dr: f64, ds: f64, n: usize, h: usize, nodes: &[(f64, f64)]) -> Result<[f64; 3]> {
    let nf = n as f64;
    let norm = nf.powf(-2.0 * (dr + ds));
    let aa = pairwise_sum_by(2 * n - 1, |k| {
        let delta = k as i64 - (n as i64 - 1);
        let lag = delta.unsigned_abs() as usize;
        (nf - lag as f64) * lag_sum(dr, dr, lag, DEFAULT_J_POP) * lag_sum(ds, ds, lag, DEFAULT_J_POP)
    }) * norm;
    let ab = pairwise_sum_by(2 * n - 1, |k| {
        let delta = k as i64 - (n as i64 - 1);
        let integral: f64 =
            nodes.iter().map(|&(t, wt)| wt * kappa(dr, delta + h as i64, t) * kappa(ds, delta, t)).sum();
        (nf - delta.unsigned_abs() as f64) * integral
    }) * norm;
    let bb = kernel_inner_closed_form(dr, ds, dr, ds)?;
    Ok([aa, ab, bb])
}

/// CSV rows `h,r_index,s_index,value` for a list of lag kernels.
pub fn write_lags_csv<T: Real, W: Write>(lags: &[KernelOnGrid<T>], mut w: W) -> Result<()> {
    writeln!(w, "h,r_index,s_index,value")?;
    for (h, k) in lags.iter().enumerate() {
        for ((r, s), v) in k.values.indexed_iter() {
            writeln!(w, "{h},{r},{s},{:e}", v.as_f64())?;
        }
    }
    Ok(())
}

/// JSON sidecar for exported estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSidecar {
    pub n: usize,
    pub h_max: usize,
    pub scaling: Option<String>,
    pub profile_hash: String,
    pub weights: String,
}

impl<T: Real> AutocovEstimate<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_lags_csv(&self.lags, w)
    }

    pub fn sidecar(&self, profile: &MemoryProfile<T>) -> EstimateSidecar {
        EstimateSidecar {
            n: self.n,
            h_max: self.lags.len() - 1,
            scaling: None,
            profile_hash: profile.hash_hex(),
            weights: "grid".into(),
        }
    }
}

impl<T: Real> ScaledFluctuation<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_lags_csv(&self.lags, w)
    }

    pub fn sidecar(&self, profile: &MemoryProfile<T>) -> EstimateSidecar {
        EstimateSidecar {
            n: self.n,
            h_max: self.lags.len() - 1,
            scaling: Some(self.scaling.tag().into()),
            profile_hash: profile.hash_hex(),
            weights: "grid".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InnovationLaw;
    use crate::process::{simulate, ProcessConfig};
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn path_from_x(x: Array2<f64>, n: usize, h_max: usize) -> SamplePath<f64> {
        SamplePath { x, eps: None, n, h_max, j: None, seed: 0 }
    }

    fn small_model(m: usize) -> (MemoryProfile<f64>, InnovationModel<f64>) {
        let d: Vec<f64> = [0.3, 0.4, 0.35][..m].to_vec();
        let sigma = KernelOnGrid::from_fn(m, |(i, j)| if i == j { 1.0 + 0.5 * i as f64 } else { 0.3 });
        (MemoryProfile::from_vec(d).unwrap(), InnovationModel::new(sigma, InnovationLaw::Gaussian).unwrap())
    }

    #[test]
    fn sample_autocov_examples() {
        let x = Array2::from_shape_fn((5, 2), |(_, r)| if r == 0 { 2.0 } else { -1.5 });
        let est = sample_autocov(&path_from_x(x, 3, 2), 2).unwrap();
        for k in &est.lags {
            assert_eq!(k.values, array![[4.0, -3.0], [-3.0, 2.25]]);
        }
        let est = sample_autocov(&path_from_x(array![[3.0, -2.0]], 1, 0), 0).unwrap();
        assert_eq!(est.lags[0].values, array![[9.0, -6.0], [-6.0, 4.0]]);
        let est = sample_autocov(&path_from_x(array![[1.0], [-1.0], [2.0]], 2, 1), 1).unwrap();
        assert_eq!(est.lags[1].get(0, 0), -1.5);
        assert!(matches!(sample_autocov(&path_from_x(array![[1.0], [2.0]], 2, 0), 1), Err(LrdError::Window(_))));
    }

    #[test]
    fn scaling_examples() {
        let p = MemoryProfile::from_vec(vec![0.3, 0.45]).unwrap();
        let k = KernelOnGrid::from_fn(2, |_| 1.0);
        let est = AutocovEstimate { lags: vec![k.clone()], n: 100 };
        let f = scale_fluct(&est, &[k.clone()], &p, Scaling::XiN).unwrap();
        assert!(f.lags[0].values.iter().all(|v| *v == 0.0));
        let zero = KernelOnGrid::zeros(2);
        let f = scale_fluct(&est, &[zero.clone()], &p, Scaling::XiN).unwrap();
        assert_relative_eq!(f.lags[0].get(0, 1), 100f64.powf(0.25), max_relative = 1e-14);
        assert_relative_eq!(f.lags[0].get(0, 1), 3.162_277_660_168_38, max_relative = 1e-12);
        let q = MemoryProfile::constant(2, 0.25).unwrap();
        let a = scale_fluct(&est, &[zero.clone()], &q, Scaling::XiN).unwrap();
        let b = scale_fluct(&est, &[zero], &q, Scaling::SqrtN).unwrap();
        assert_eq!(a.lags[0].values, b.lags[0].values);
        assert!(scale_fluct(&est, &[KernelOnGrid::zeros(3)], &p, Scaling::XiN).is_err());
    }

    #[test]
    fn decomposition_identity_on_random_instances() {
        for seed in 0..5u64 {
            let (p, i) = small_model(3);
            let path = simulate(&ProcessConfig::new(p.clone(), i.clone(), 8, 16, seed).with_h_max(3)).unwrap();
            let dec = decompose(&path, &p, &i, 3).unwrap();
            let est = sample_autocov(&path, 3).unwrap();
            for h in 0..=3 {
                let lhs = est.lags[h].sub(&dec.population[h]).unwrap();
                let rhs = dec.diagonal[h].add(&dec.off_diagonal[h]).unwrap();
                assert!(lhs.max_abs_diff(&rhs) < 1e-10);
                let direct = off_diagonal_direct(&path, &p, h).unwrap();
                assert!(direct.max_abs_diff(&dec.off_diagonal[h]) < 1e-10, "h={h}");
            }
        }
    }

    #[test]
    fn single_innovation_has_no_off_diagonal_part() {
        let p = MemoryProfile::constant(1, 0.3).unwrap();
        let i = InnovationModel::identity(1, 1.0, InnovationLaw::Gaussian).unwrap();
        let eps = array![[0.0], [1.7]];
        let sim = crate::process::PathSimulator::new(ProcessConfig::new(p.clone(), i.clone(), 1, 1, 0)).unwrap();
        let path = sim.from_innovations(eps);
        let dec = decompose(&path, &p, &i, 0).unwrap();
        assert!(f64::abs(dec.off_diagonal[0].get(0, 0)) < 1e-15);
        let est = sample_autocov(&path, 0).unwrap();
        assert_relative_eq!(dec.diagonal[0].get(0, 0), est.lags[0].get(0, 0) - dec.population[0].get(0, 0), epsilon = 1e-15);
    }

    #[test]
    fn degenerate_model_has_vanishing_parts() {
        let p = MemoryProfile::constant(2, 0.3).unwrap();
        let i = InnovationModel::from_factor(Array2::zeros((2, 2)), InnovationLaw::Gaussian).unwrap();
        let path = simulate(&ProcessConfig::new(p.clone(), i.clone(), 4, 3, 0)).unwrap();
        let dec = decompose(&path, &p, &i, 0).unwrap();
        assert_eq!(dec.diagonal[0].max_abs(), 0.0);
        assert_eq!(dec.off_diagonal[0].max_abs(), 0.0);
        let mut no_eps = path.clone();
        no_eps.eps = None;
        assert!(matches!(decompose(&no_eps, &p, &i, 0), Err(LrdError::Missing(_))));
    }

    #[test]
    fn discrete_kernel_examples() {
        let p = MemoryProfile::constant(1, 0.4).unwrap();
        let k = discrete_kernel(&p, 1, 0, None).unwrap();
        assert_eq!(k.eval(1, 1, 0, 0), 1.0);
        assert_eq!(k.eval(2, 1, 0, 0), 0.0);
        assert_eq!(k.eval(1, 2, 0, 0), 0.0);
        let k = discrete_kernel(&p, 2, 0, None).unwrap();
        // n=1: u_1²; n=2: u_2²
        assert_relative_eq!(k.eval(0, 0, 0, 0), 2f64.powf(-0.8) * (2f64.powf(-1.2) + 3f64.powf(-1.2)), max_relative = 1e-14);
        assert_relative_eq!(k.eval(1, 1, 0, 0), 0.824_349_177_498_517_4, max_relative = 1e-14);
        let k = discrete_kernel(&p, 4, 2, Some(5)).unwrap();
        assert_eq!(k.eval(7, 0, 0, 0), 0.0);
        assert_eq!(k.eval(0, 5, 0, 0), 0.0);
        assert_eq!(k.eval(-10, 0, 0, 0), 0.0);
    }

    #[test]
    fn q2_equals_scaled_off_diagonal() {
        let (p, i) = small_model(2);
        let path = simulate(&ProcessConfig::new(p.clone(), i.clone(), 16, 32, 9).with_h_max(2)).unwrap();
        let dec = decompose(&path, &p, &i, 2).unwrap();
        for h in 0..=2 {
            let c = discrete_kernel(&p, 16, h, Some(32)).unwrap();
            let q2 = q2_statistic(&path, &c).unwrap();
            let xo = xi_scale(&dec.off_diagonal[h], &p, 16).unwrap();
            assert!(q2.max_abs_diff(&xo) < 1e-10);
        }
        let wrong = discrete_kernel(&p, 16, 0, Some(31)).unwrap();
        assert!(matches!(q2_statistic(&path, &wrong), Err(LrdError::Window(_))));
    }

    #[test]
    fn q2_vanishes_for_single_innovation() {
        let p = MemoryProfile::constant(1, 0.3).unwrap();
        let i = InnovationModel::identity(1, 1.0, InnovationLaw::Gaussian).unwrap();
        let sim = crate::process::PathSimulator::new(ProcessConfig::new(p.clone(), i, 4, 4, 0)).unwrap();
        let mut eps = Array2::zeros((8, 1));
        eps[(3, 0)] = 2.0;
        let path = sim.from_innovations(eps);
        let c = discrete_kernel(&p, 4, 0, Some(4)).unwrap();
        assert_eq!(q2_statistic(&path, &c).unwrap().get(0, 0), 0.0);
    }

    #[test]
    fn kappa_matches_cell_integral_by_quadrature() {
        // κ_t(Δ) N^{−d} = ∫ u_{n−⌈xN⌉} (v − x)₊^{d−1} dx with v = (p−1+t)/N, Δ = n − p
        let d = 0.4;
        let (delta, t) = (3i64, 0.37);
        let mut direct = 0.0;
        for m in 0..400_000usize {
            let lower = if m == 0 { 0.0 } else { (m as f64 - 1.0 + t).powf(d) };
            direct += ((m as i64 + delta + 1) as f64).powf(d - 1.0) * ((m as f64 + t).powf(d) - lower) / d;
        }
        // remaining terms ~ ∫ m^{2d−2}
        direct += (400_000f64).powf(2.0 * d - 1.0) / (1.0 - 2.0 * d);
        assert_relative_eq!(kappa(d, delta, t), direct, max_relative = 1e-5);
    }

    #[test]
    fn kernel_distance_is_nonnegative_and_shrinks() {
        let grid = GridSpace::counting(1).unwrap();
        let p = MemoryProfile::constant(1, 0.4).unwrap();
        let i = InnovationModel::identity(1, 1.0, InnovationLaw::Gaussian).unwrap();
        let a = kernel_distance(&grid, &p, &i, 8, 0).unwrap();
        let b = kernel_distance(&grid, &p, &i, 32, 0).unwrap();
        assert!(a.distance >= 0.0 && b.distance < a.distance);
        assert!(kernel_distance(&grid, &p, &i, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn xi_is_linear(a in prop::collection::vec(-3.0f64..3.0, 4), b in prop::collection::vec(-3.0f64..3.0, 4), c in -2.0f64..2.0, n in 1usize..5000) {
            let p = MemoryProfile::from_vec(vec![0.27, 0.41]).unwrap();
            let ka = KernelOnGrid::new(Array2::from_shape_vec((2, 2), a).unwrap()).unwrap();
            let kb = KernelOnGrid::new(Array2::from_shape_vec((2, 2), b).unwrap()).unwrap();
            let lhs = xi_scale(&ka.scale(c).add(&kb).unwrap(), &p, n).unwrap();
            let rhs = xi_scale(&ka, &p, n).unwrap().scale(c).add(&xi_scale(&kb, &p, n).unwrap()).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * (1.0 + rhs.max_abs()));
        }
    }
}
