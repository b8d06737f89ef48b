//! Covariance of the Gaussian limit of `√N(γ̂_{N,h} − γ_h)` when `max d < 1/4`.
//!
//! Kernels pair through the weighted Hilbert–Schmidt product and compose as
//! `(A∘B)(r,s) = Σ_t A(r,t) B(t,s) w_t`. For test kernels `S`, `T`,
//!
//! `lim N Cov(⟨γ̂_p, S⟩, ⟨γ̂_q, T⟩) = ⟨Σ^{(p,q)}(T), S⟩` with
//! `Σ^{(p,q)}(T) = Σ_{k∈ℤ} [γ_{k+p−q}∘T∘γ_kᵀ + γ_{k+p}∘Tᵀ∘γ_{k−q}ᵀ] + A_p K A_q(T)`,
//! `γ_{−h} = γ_hᵀ`, and `K = Λ − Λ_Gauss` the fourth-cumulant operator of `ε₀`.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{check_dim, LrdError, Result};
use crate::grid::{hs_inner_kernel, GridSpace, KernelOnGrid};
use crate::model::{classify_regime, InnovationLaw, InnovationModel, MemoryProfile, Regime};
use crate::process::{lag_sum, population_autocov, DEFAULT_J_POP};
use crate::quadrature::power_product_tail;
use crate::rng::{stream, Purpose};
use crate::scalar::Real;
use crate::special::{memory_beta, zeta_real};

/// Default number of explicit series terms on each side of `k = 0`.
pub const DEFAULT_M_SERIES: usize = 10_000;

/// `Γ_h`, the population lag-`h` autocovariance kernel.
pub fn gamma_operator<T: Real>(
    h: usize,
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    j_pop: usize,
) -> Result<KernelOnGrid<T>> {
    population_autocov(profile, innovations, h, j_pop)
}

/// `A_p(T)` with its tail beyond `m_series`.
#[derive(Debug, Clone)]
pub struct SeriesValue<T> {
    pub value: KernelOnGrid<T>,
    /// Largest magnitude of the tail `Σ_{j>m_series}` over entries.
    pub tail: T,
}

/// `A_p(T)(r,s) = T(r,s) Σ_{j≥0} u_{j+p}(r) u_j(s)`: explicit terms up to
/// `m_series`, Euler–Maclaurin remainder.
pub fn apply_a<T: Real>(p: usize, t: &KernelOnGrid<T>, profile: &MemoryProfile<T>, m_series: usize) -> Result<SeriesValue<T>> {
    check_dim(profile.len(), t.dim())?;
    let one = T::one();
    let mut tail = T::zero();
    let value = KernelOnGrid::from_fn(t.dim(), |(r, s)| {
        let (dr, ds) = (profile.at(r), profile.at(s));
        let rem = power_product_tail(T::of_usize(m_series + 1), T::of_usize(p) + one, dr - one, one, ds - one);
        tail = tail.max((t.get(r, s) * rem).abs());
        t.get(r, s) * lag_sum(dr, ds, p, m_series)
    });
    Ok(SeriesValue { value, tail })
}

/// How `Λ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LambdaMode {
    /// Gaussian fourth-moment expansion; Gaussian innovations only.
    Wick,
    /// Exact fourth moment of the innovation law (Gaussian or scaled Rademacher).
    Exact,
    /// Empirical mean over `draws` innovations.
    MonteCarlo { draws: usize, seed: u64 },
}

impl LambdaMode {
    /// Wick for Gaussian innovations, Monte Carlo with 10⁶ draws otherwise.
    pub fn default_for(law: InnovationLaw, seed: u64) -> Self {
        match law {
            InnovationLaw::Gaussian => LambdaMode::Wick,
            InnovationLaw::ScaledRademacher => LambdaMode::MonteCarlo { draws: 1_000_000, seed },
        }
    }
}

/// `Λ(T)` with the entrywise standard error (zero for closed forms).
#[derive(Debug, Clone)]
pub struct LambdaValue<T> {
    pub value: KernelOnGrid<T>,
    pub std_error: KernelOnGrid<T>,
}

fn weighted(t: &KernelOnGrid<f64>, w: &[f64]) -> Array2<f64> {
    Array2::from_shape_fn(t.values.dim(), |(a, b)| w[a] * w[b] * t.values[(a, b)])
}

fn to_f64<T: Real>(k: &KernelOnGrid<T>) -> KernelOnGrid<f64> {
    KernelOnGrid { values: k.values.mapv(|v| v.as_f64()) }
}

fn from_f64<T: Real>(k: Array2<f64>) -> KernelOnGrid<T> {
    KernelOnGrid { values: k.mapv(T::of) }
}

/// `⟨C,T⟩C + C∘T∘C + C∘Tᵀ∘C`, the fourth moment of a Gaussian field with
/// covariance `C`.
fn wick(c: &Array2<f64>, t: &KernelOnGrid<f64>, w: &[f64]) -> Array2<f64> {
    let tw = weighted(t, w);
    let ct = (c * &tw).sum();
    c * ct + c.dot(&tw).dot(c) + c.dot(&tw.t()).dot(c)
}

/// `K(T) = Λ(T) − Λ_Gauss(T)`: for `ε = Fξ` with i.i.d. Rademacher `ξ`,
/// `K(T)(r,s) = −2 Σ_k F_rk F_sk Σ_{a,b} w_a w_b F_ak F_bk T(a,b)`.
fn cumulant(innovations: &InnovationModel<f64>, t: &KernelOnGrid<f64>, w: &[f64]) -> Array2<f64> {
    let m = t.dim();
    match innovations.law() {
        InnovationLaw::Gaussian => Array2::zeros((m, m)),
        InnovationLaw::ScaledRademacher => {
            let f = innovations.factor();
            let tw = weighted(t, w);
            let mut out = Array2::zeros((m, m));
            for k in 0..f.ncols() {
                let col = f.column(k);
                let q = col.dot(&tw.dot(&col));
                for r in 0..m {
                    for s in 0..m {
                        out[(r, s)] += -2.0 * q * col[r] * col[s];
                    }
                }
            }
            out
        }
    }
}

fn f64_innovations<T: Real>(innovations: &InnovationModel<T>) -> Result<InnovationModel<f64>> {
    InnovationModel::from_factor(innovations.factor().mapv(|v| v.as_f64()), innovations.law())
}

const LAMBDA_CHUNK: usize = 4096;

/// `Λ(T) = 𝔼[⟨ε₀⊗ε₀, T⟩ ε₀⊗ε₀]`.
pub fn apply_lambda<T: Real>(
    t: &KernelOnGrid<T>,
    innovations: &InnovationModel<T>,
    grid: &GridSpace<T>,
    mode: LambdaMode,
) -> Result<LambdaValue<T>> {
    let m = innovations.dim();
    check_dim(m, t.dim())?;
    check_dim(m, grid.len())?;
    let w: Vec<f64> = grid.weights().iter().map(|v| v.as_f64()).collect();
    let tf = to_f64(t);
    let innov = f64_innovations(innovations)?;
    let c = innov.sigma().values.clone();
    match mode {
        LambdaMode::Wick => {
            if innovations.law() != InnovationLaw::Gaussian {
                return Err(LrdError::config("Wick expansion of Λ requires Gaussian innovations"));
            }
            Ok(LambdaValue { value: from_f64(wick(&c, &tf, &w)), std_error: KernelOnGrid::zeros(m) })
        }
        LambdaMode::Exact => {
            let v = wick(&c, &tf, &w) + cumulant(&innov, &tf, &w);
            Ok(LambdaValue { value: from_f64(v), std_error: KernelOnGrid::zeros(m) })
        }
        LambdaMode::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(LrdError::config("Monte Carlo Λ needs at least two draws"));
            }
            let tw = weighted(&tf, &w);
            let chunks = draws.div_ceil(LAMBDA_CHUNK);
            let partial: Vec<(Array2<f64>, Array2<f64>)> = (0..chunks)
                .into_par_iter()
                .map(|ci| {
                    let mut rng = stream(seed, Purpose::Lambda, ci as u64);
                    let count = LAMBDA_CHUNK.min(draws - ci * LAMBDA_CHUNK);
                    let mut sum = Array2::<f64>::zeros((m, m));
                    let mut sq = Array2::<f64>::zeros((m, m));
                    let mut scratch = vec![0.0; innov.factor().ncols()];
                    let mut eps = vec![0.0; m];
                    for _ in 0..count {
                        innov.sample_into(&mut rng, &mut scratch, &mut eps);
                        let e = Array1::from(eps.clone());
                        let q = e.dot(&tw.dot(&e));
                        for r in 0..m {
                            for s in 0..m {
                                let v = q * e[r] * e[s];
                                sum[(r, s)] += v;
                                sq[(r, s)] += v * v;
                            }
                        }
                    }
                    (sum, sq)
                })
                .collect();
            let mut sum = Array2::<f64>::zeros((m, m));
            let mut sq = Array2::<f64>::zeros((m, m));
            for (a, b) in partial {
                sum += &a;
                sq += &b;
            }
            let n = draws as f64;
            let mean = &sum / n;
            let var = (&sq / n - &mean * &mean) * (n / (n - 1.0));
            let se = var.mapv(|v| (v.max(0.0) / n).sqrt());
            Ok(LambdaValue { value: from_f64(mean), std_error: from_f64(se) })
        }
    }
}

/// `Φ(T) = ⟨C, T+Tᵀ⟩C + ⟨C,T⟩C` with `C = σ`.
pub fn apply_phi<T: Real>(t: &KernelOnGrid<T>, innovations: &InnovationModel<T>, grid: &GridSpace<T>) -> Result<KernelOnGrid<T>> {
    let c = innovations.sigma();
    let a = hs_inner_kernel(c, &t.add(&t.transpose())?, grid)?;
    let b = hs_inner_kernel(c, t, grid)?;
    Ok(c.scale(a + b))
}

/// Series settings for [`SigmaOperator`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaConfig {
    pub m_series: usize,
    pub j_pop: usize,
    pub lambda: LambdaMode,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig { m_series: DEFAULT_M_SERIES, j_pop: DEFAULT_J_POP, lambda: LambdaMode::Exact }
    }
}

/// `⟨Σ^{(p,q)}(T), S⟩` with its parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaPairing {
    pub value: f64,
    /// Extrapolated contribution of `|k| > m_series` (included in `value`).
    pub tail_estimate: f64,
    /// Part from the second-order (`γγ`) series.
    pub covariance_part: f64,
    /// Part from the fourth cumulant of the innovations.
    pub cumulant_part: f64,
    /// Standard error carried over from a Monte Carlo `Λ`.
    pub lambda_std_error: f64,
}

/// Precomputed lag kernels for evaluating `Σ^{(p,q)}` up to lag `h_max`.
pub struct SigmaOperator {
    grid_w: Vec<f64>,
    gammas: Vec<Array2<f64>>,
    lag_sums: Vec<Array2<f64>>,
    innovations: InnovationModel<f64>,
    config: SigmaConfig,
    h_max: usize,
    d: Vec<f64>,
}

impl SigmaOperator {
    pub fn new<T: Real>(
        grid: &GridSpace<T>,
        profile: &MemoryProfile<T>,
        innovations: &InnovationModel<T>,
        h_max: usize,
        config: SigmaConfig,
    ) -> Result<Self> {
        let m = profile.len();
        check_dim(m, innovations.dim())?;
        check_dim(m, grid.len())?;
        if classify_regime(profile) != Regime::First {
            return Err(LrdError::domain("Σ requires the first regime, max d < 1/4"));
        }
        if config.m_series < 8 + 2 * h_max {
            return Err(LrdError::config("m_series must be at least 8 + 2·h_max"));
        }
        if let LambdaMode::Wick = config.lambda {
            if innovations.law() != InnovationLaw::Gaussian {
                return Err(LrdError::config("Wick expansion of Λ requires Gaussian innovations"));
            }
        }
        let d: Vec<f64> = (0..m).map(|r| profile.at(r).as_f64()).collect();
        let innov = f64_innovations(innovations)?;
        let pf = MemoryProfile::from_vec(d.clone())?;
        let top = config.m_series + 2 * h_max + 1;
        let gammas: Vec<Array2<f64>> = (0..=top)
            .into_par_iter()
            .map(|h| population_autocov(&pf, &innov, h, config.j_pop).map(|k| k.values))
            .collect::<Result<_>>()?;
        let lag_sums = (0..=h_max)
            .map(|p| Array2::from_shape_fn((m, m), |(r, s)| lag_sum(d[r], d[s], p, config.m_series)))
            .collect();
        Ok(SigmaOperator {
            grid_w: grid.weights().iter().map(|v| v.as_f64()).collect(),
            gammas,
            lag_sums,
            innovations: innov,
            config,
            h_max,
            d,
        })
    }

    pub fn h_max(&self) -> usize {
        self.h_max
    }

    fn gamma(&self, h: i64) -> Array2<f64> {
        if h >= 0 {
            self.gammas[h as usize].clone()
        } else {
            self.gammas[(-h) as usize].t().to_owned()
        }
    }

    /// Summand of the `γγ` series at index `k`.
    fn term(&self, p: i64, q: i64, k: i64, tw: &Array2<f64>) -> Array2<f64> {
        let a = self.gamma(k + p - q).dot(tw).dot(&self.gamma(k).t());
        let b = self.gamma(k + p).dot(&tw.t()).dot(&self.gamma(k - q).t());
        a + b
    }

    fn check_lags(&self, p: usize, q: usize) -> Result<()> {
        if p > self.h_max || q > self.h_max {
            return Err(LrdError::config(format!("lag beyond the precomputed range 0..={}", self.h_max)));
        }
        Ok(())
    }

    /// `Σ_{|k|>M}` of the entries of `γ_{k+a}∘T'∘γ_{k+b}ᵀ`, from the
    /// asymptotic expansion of each lag sum; every product of expansion terms
    /// is summed with an Euler–Maclaurin tail.
    fn tail_kernel(&self, a: i64, b: i64, t: &Array2<f64>) -> Result<Array2<f64>> {
        let m = self.grid_w.len();
        let w = &self.grid_w;
        let d = &self.d;
        let sigma = &self.innovations.sigma().values;
        let start = (self.config.m_series + 1) as f64;
        let (af, bf) = (a as f64, b as f64);
        let mut out = Array2::<f64>::zeros((m, m));
        for r in 0..m {
            for s in 0..m {
                let mut acc = 0.0;
                for x in 0..m {
                    if sigma[(r, x)] == 0.0 {
                        continue;
                    }
                    for y in 0..m {
                        let c = sigma[(r, x)] * sigma[(s, y)] * w[x] * w[y] * t[(x, y)];
                        if c == 0.0 {
                            continue;
                        }
                        let mut tail = 0.0;
                        // k > M: L(d_r,d_x,k+a) L(d_s,d_y,k+b)
                        for e1 in lag_sum_expansion(d[r], d[x])? {
                            for e2 in lag_sum_expansion(d[s], d[y])? {
                                tail += e1.0 * e2.0 * power_product_tail(start, af, e1.1, bf, e2.1);
                            }
                        }
                        // k < −M: γ_{−h} = γ_hᵀ
                        for e1 in lag_sum_expansion(d[x], d[r])? {
                            for e2 in lag_sum_expansion(d[y], d[s])? {
                                tail += e1.0 * e2.0 * power_product_tail(start, -af, e1.1, -bf, e2.1);
                            }
                        }
                        acc += c * tail;
                    }
                }
                out[(r, s)] = acc;
            }
        }
        Ok(out)
    }

    /// `Σ^{(p,q)}(T)` as a kernel, its tail part and the Λ standard error
    /// propagated entrywise.
    pub fn apply<T: Real>(&self, p: usize, q: usize, t: &KernelOnGrid<T>) -> Result<(KernelOnGrid<f64>, KernelOnGrid<f64>, KernelOnGrid<f64>)> {
        self.check_lags(p, q)?;
        let m = self.grid_w.len();
        check_dim(m, t.dim())?;
        let w = &self.grid_w;
        let tf = to_f64(t);
        // (A∘T∘B) with weights: A W T W B
        let tw = Array2::from_shape_fn((m, m), |(a, b)| w[a] * tf.values[(a, b)] * w[b]);
        let (pi, qi) = (p as i64, q as i64);
        let mm = self.config.m_series as i64;
        let terms: Vec<Array2<f64>> = (-mm..=mm).into_par_iter().map(|k| self.term(pi, qi, k, &tw)).collect();
        let mut total = Array2::<f64>::zeros((m, m));
        // fixed summation order, small terms first
        for k in (1..=mm as usize).rev() {
            total += &terms[(mm as usize) + k];
            total += &terms[(mm as usize) - k];
        }
        total += &terms[mm as usize];
        let tail = self.tail_kernel(pi - qi, 0, &tf.values)? + self.tail_kernel(pi, -qi, &tf.values.t().to_owned())?;
        total += &tail;
        // fourth-cumulant part: A_p K A_q (T)
        let aq = &self.lag_sums[q] * &tf.values;
        let (kq, kse) = self.cumulant_operator(&KernelOnGrid { values: aq })?;
        total += &(&self.lag_sums[p] * &kq.values);
        let se = &self.lag_sums[p].mapv(f64::abs) * &kse.values;
        Ok((KernelOnGrid { values: total }, KernelOnGrid { values: tail }, KernelOnGrid { values: se }))
    }

    fn cumulant_operator(&self, t: &KernelOnGrid<f64>) -> Result<(KernelOnGrid<f64>, KernelOnGrid<f64>)> {
        let m = t.dim();
        let w = &self.grid_w;
        match self.config.lambda {
            LambdaMode::Wick => Ok((KernelOnGrid::zeros(m), KernelOnGrid::zeros(m))),
            LambdaMode::Exact => Ok((KernelOnGrid { values: cumulant(&self.innovations, t, w) }, KernelOnGrid::zeros(m))),
            LambdaMode::MonteCarlo { .. } => {
                let grid = GridSpace::new((0..m).map(|i| i as f64).collect(), w.clone())?;
                let lam = apply_lambda(t, &self.innovations, &grid, self.config.lambda)?;
                let g = wick(&self.innovations.sigma().values, t, w);
                Ok((KernelOnGrid { values: lam.value.values - g }, lam.std_error))
            }
        }
    }

    /// `⟨Σ^{(p,q)}(T), S⟩`.
    pub fn pairing<T: Real>(&self, p: usize, q: usize, s: &KernelOnGrid<T>, t: &KernelOnGrid<T>) -> Result<SigmaPairing> {
        let m = self.grid_w.len();
        check_dim(m, s.dim())?;
        let (full, tail, se) = self.apply(p, q, t)?;
        let w = &self.grid_w;
        let pair = |k: &Array2<f64>| {
            let mut acc = 0.0;
            for r in 0..m {
                for c in 0..m {
                    acc += w[r] * w[c] * k[(r, c)] * s.get(r, c).as_f64();
                }
            }
            acc
        };
        let tf = to_f64(t);
        let aq = &self.lag_sums[q] * &tf.values;
        let (kq, _) = self.cumulant_operator(&KernelOnGrid { values: aq })?;
        let cum = pair(&(&self.lag_sums[p] * &kq.values));
        let value = pair(&full.values);
        let se_abs = {
            let mut acc = 0.0;
            for r in 0..m {
                for c in 0..m {
                    acc += (w[r] * w[c] * se.values[(r, c)] * s.get(r, c).as_f64()).powi(2);
                }
            }
            acc.sqrt()
        };
        Ok(SigmaPairing {
            value,
            tail_estimate: pair(&tail.values),
            covariance_part: value - cum,
            cumulant_part: cum,
            lambda_std_error: se_abs,
        })
    }

    /// Ratios `(S_{4n} − S_{2n}) / (S_{2n} − S_n)` of partial sums of
    /// `‖γ_{k+p−q}∘T∘γ_kᵀ‖` over `k ≥ 0`, for `n = start, 2·start, …`.
    pub fn doubling_ratios<T: Real>(&self, p: usize, q: usize, t: &KernelOnGrid<T>, start: usize) -> Result<Vec<f64>> {
        self.check_lags(p, q)?;
        let m = self.grid_w.len();
        let w = &self.grid_w;
        let tf = to_f64(t);
        let tw = Array2::from_shape_fn((m, m), |(a, b)| w[a] * tf.values[(a, b)] * w[b]);
        let norm = |k: usize| {
            let a = self.gamma(k as i64 + p as i64 - q as i64).dot(&tw).dot(&self.gamma(k as i64).t());
            let mut acc = 0.0;
            for r in 0..m {
                for c in 0..m {
                    acc += w[r] * w[c] * a[(r, c)].powi(2);
                }
            }
            acc.sqrt()
        };
        let partial = |a: usize, b: usize| (a..b).map(norm).sum::<f64>();
        let mut out = Vec::new();
        let mut n = start;
        while 4 * n <= self.config.m_series {
            out.push(partial(2 * n, 4 * n) / partial(n, 2 * n));
            n *= 2;
        }
        Ok(out)
    }
}

/// Terms `(c, e)` of `Σ_{j≥0} (j+h+1)^{d_r−1}(j+1)^{d_s−1} ~ Σ c h^e` as
/// `h → ∞`: `B(d_s, 1−d_r−d_s) h^{d_r+d_s−1} + Σ_n binom(d_r−1, n) ζ(1−d_s−n) h^{d_r−1−n}`.
pub fn lag_sum_expansion(d_r: f64, d_s: f64) -> Result<Vec<(f64, f64)>> {
    let mut out = vec![(memory_beta(d_s, d_r)?, d_r + d_s - 1.0)];
    let mut binom = 1.0;
    for n in 0..LAG_EXPANSION_TERMS {
        if n > 0 {
            binom *= (d_r - 1.0 - (n as f64 - 1.0)) / n as f64;
        }
        out.push((binom * zeta_real(1.0 - d_s - n as f64)?, d_r - 1.0 - n as f64));
    }
    Ok(out)
}

const LAG_EXPANSION_TERMS: usize = 4;

/// `⟨Σ^{(p,q)}(T), S⟩` with a freshly built operator.
#[allow(clippy::too_many_arguments)]
pub fn sigma_pairing<T: Real>(
    p: usize,
    q: usize,
    s: &KernelOnGrid<T>,
    t: &KernelOnGrid<T>,
    grid: &GridSpace<T>,
    profile: &MemoryProfile<T>,
    innovations: &InnovationModel<T>,
    config: SigmaConfig,
) -> Result<SigmaPairing> {
    SigmaOperator::new(grid, profile, innovations, p.max(q), config)?.pairing(p, q, s, t)
}

/// CSV rows `p,q,test_id_S,test_id_T,value,tail_estimate`.
pub fn write_pairings_csv<W: Write>(rows: &[(usize, usize, usize, usize, SigmaPairing)], mut w: W) -> Result<()> {
    writeln!(w, "p,q,test_id_S,test_id_T,value,tail_estimate")?;
    for (p, q, a, b, v) in rows {
        writeln!(w, "{p},{q},{a},{b},{:e},{:e}", v.value, v.tail_estimate)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::compose;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn scalar(d: f64, law: InnovationLaw) -> (GridSpace<f64>, MemoryProfile<f64>, InnovationModel<f64>) {
        (
            GridSpace::uniform_unit(1).unwrap(),
            MemoryProfile::constant(1, d).unwrap(),
            InnovationModel::identity(1, 1.0, law).unwrap(),
        )
    }

    fn random_sigma(m: usize, seed: u64) -> InnovationModel<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = Array2::from_shape_fn((m, m), |_| rng.gen_range(-1.0..1.0));
        let s = a.dot(&a.t()) + Array2::<f64>::eye(m) * 0.2;
        InnovationModel::new(KernelOnGrid::new(s).unwrap(), InnovationLaw::Gaussian).unwrap()
    }

    fn random_kernel(m: usize, seed: u64) -> KernelOnGrid<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        KernelOnGrid::from_fn(m, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn apply_a_examples() {
        let p = MemoryProfile::constant(2, 0.1).unwrap();
        let zero = apply_a(0, &KernelOnGrid::zeros(2), &p, 1000).unwrap();
        assert_eq!(zero.value.max_abs(), 0.0);
        let one = KernelOnGrid::from_fn(2, |_| 1.0);
        let a = apply_a(0, &one, &p, 1000).unwrap();
        // ζ(1.8)
        for r in 0..2 {
            for s in 0..2 {
                assert_relative_eq!(a.value.get(r, s), 1.882_229_618_102_82, max_relative = 1e-9);
            }
        }
        assert!(a.tail > 0.0 && a.tail < 0.02);
        let far = apply_a(50, &one, &p, 1000).unwrap();
        assert!(far.value.get(0, 0) < apply_a(5, &one, &p, 1000).unwrap().value.get(0, 0));
    }

    #[test]
    fn lambda_scalar_and_zero() {
        let (g, _, i) = scalar(0.1, InnovationLaw::Gaussian);
        let one = KernelOnGrid::from_fn(1, |_| 1.0);
        assert_relative_eq!(apply_lambda(&one, &i, &g, LambdaMode::Wick).unwrap().value.get(0, 0), 3.0, epsilon = 1e-14);
        assert_eq!(apply_lambda(&KernelOnGrid::zeros(1), &i, &g, LambdaMode::Wick).unwrap().value.max_abs(), 0.0);
        let mc = apply_lambda(&one, &i, &g, LambdaMode::MonteCarlo { draws: 200_000, seed: 1 }).unwrap();
        assert!((mc.value.get(0, 0) - 3.0).abs() < 4.0 * mc.std_error.get(0, 0));
        let (_, _, r) = scalar(0.1, InnovationLaw::ScaledRademacher);
        assert!(apply_lambda(&one, &r, &g, LambdaMode::Wick).is_err());
        assert_relative_eq!(apply_lambda(&one, &r, &g, LambdaMode::Exact).unwrap().value.get(0, 0), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn wick_matches_monte_carlo_on_three_sites() {
        let i = random_sigma(3, 4);
        let g = GridSpace::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
        let t = random_kernel(3, 9);
        let w = apply_lambda(&t, &i, &g, LambdaMode::Wick).unwrap();
        let mc = apply_lambda(&t, &i, &g, LambdaMode::MonteCarlo { draws: 1_000_000, seed: 7 }).unwrap();
        for r in 0..3 {
            for s in 0..3 {
                let diff = (w.value.get(r, s) - mc.value.get(r, s)).abs();
                assert!(diff < 4.0 * mc.std_error.get(r, s), "({r},{s}) {diff} vs {}", mc.std_error.get(r, s));
            }
        }
    }

    #[test]
    fn exact_rademacher_matches_monte_carlo() {
        let f = array![[1.0, 0.3], [0.5, -0.4]];
        let i = InnovationModel::from_factor(f, InnovationLaw::ScaledRademacher).unwrap();
        let g = GridSpace::new(vec![0.0, 1.0], vec![0.4, 0.6]).unwrap();
        let t = random_kernel(2, 3);
        let ex = apply_lambda(&t, &i, &g, LambdaMode::Exact).unwrap();
        let mc = apply_lambda(&t, &i, &g, LambdaMode::MonteCarlo { draws: 400_000, seed: 2 }).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                assert!((ex.value.get(r, s) - mc.value.get(r, s)).abs() < 4.0 * mc.std_error.get(r, s) + 1e-12);
            }
        }
    }

    #[test]
    fn phi_examples() {
        let (g, _, i) = scalar(0.1, InnovationLaw::Gaussian);
        let one = KernelOnGrid::from_fn(1, |_| 1.0);
        assert_relative_eq!(apply_phi(&one, &i, &g).unwrap().get(0, 0), 3.0, epsilon = 1e-14);
        assert_eq!(apply_phi(&KernelOnGrid::zeros(1), &i, &g).unwrap().max_abs(), 0.0);
        let i3 = random_sigma(3, 1);
        let g3 = GridSpace::uniform_unit(3).unwrap();
        let t = random_kernel(3, 2);
        let sym = t.add(&t.transpose()).unwrap();
        let phi = apply_phi(&sym, &i3, &g3).unwrap();
        let c = hs_inner_kernel(i3.sigma(), &sym, &g3).unwrap();
        assert!(phi.max_abs_diff(&i3.sigma().scale(3.0 * c)) < 1e-12);
    }

    #[test]
    fn wick_uses_weighted_composition() {
        let i = random_sigma(3, 5);
        let g = GridSpace::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
        let t = random_kernel(3, 6);
        let c = i.sigma();
        let expected = c
            .scale(hs_inner_kernel(c, &t, &g).unwrap())
            .add(&compose(&compose(c, &t, &g).unwrap(), c, &g).unwrap())
            .unwrap()
            .add(&compose(&compose(c, &t.transpose(), &g).unwrap(), c, &g).unwrap())
            .unwrap();
        let w = apply_lambda(&t, &i, &g, LambdaMode::Wick).unwrap().value;
        assert!(w.max_abs_diff(&expected) < 1e-12);
    }

    fn small_config() -> SigmaConfig {
        SigmaConfig { m_series: 4000, j_pop: 100, lambda: LambdaMode::Exact }
    }

    #[test]
    fn pairing_zero_and_regime() {
        let (g, p, i) = scalar(0.1, InnovationLaw::Gaussian);
        let one = KernelOnGrid::from_fn(1, |_| 1.0);
        let zero = KernelOnGrid::zeros(1);
        assert_eq!(sigma_pairing(0, 0, &zero, &one, &g, &p, &i, small_config()).unwrap().value, 0.0);
        assert_eq!(sigma_pairing(0, 0, &one, &zero, &g, &p, &i, small_config()).unwrap().value, 0.0);
        let (g, p, i) = scalar(0.3, InnovationLaw::Gaussian);
        assert!(sigma_pairing(0, 0, &one, &one, &g, &p, &i, small_config()).is_err());
    }

    #[test]
    fn scalar_pairing_is_bartlett_limit() {
        // 2 Σ_{k∈ℤ} γ_k², summed directly to a large cutoff with an integral tail
        let d = 0.1;
        let (g, p, i) = scalar(d, InnovationLaw::Gaussian);
        let one = KernelOnGrid::from_fn(1, |_| 1.0);
        let v = sigma_pairing(0, 0, &one, &one, &g, &p, &i, small_config()).unwrap();
        let k_max = 200_000usize;
        let gam: Vec<f64> = (0..=k_max).map(|k| lag_sum(d, d, k, 100)).collect();
        let mut s = gam[0] * gam[0];
        for gk in &gam[1..] {
            s += 2.0 * gk * gk;
        }
        // Σ_{k>K} γ_k² ≈ ∫_{K+½}^∞ γ(x)² dx with γ from its asymptotic expansion;
        // x = (K+½)/t, t = τ^{5/3}
        let terms = lag_sum_expansion(d, d).unwrap();
        let x0 = k_max as f64 + 0.5;
        let f = |tau: f64| {
            let t = tau.powf(5.0 / 3.0);
            let x = x0 / t;
            let g: f64 = terms.iter().map(|(c, e)| c * x.powf(*e)).sum();
            g * g * x0 / (t * t) * (5.0 / 3.0) * tau.powf(2.0 / 3.0)
        };
        let tail = 2.0 * crate::quadrature::integrate(f, 0.0, 1.0, crate::quadrature::Tolerance { abs: 0.0, rel: 1e-12, max_intervals: 200 }).value;
        let oracle = 2.0 * (s + tail);
        assert_relative_eq!(v.value, oracle, max_relative = 1e-6);
        assert!(v.tail_estimate > 0.0);
        assert_eq!(v.cumulant_part, 0.0);
        // Rademacher: fourth cumulant −2 adds −2 (Σ u_j²)²
        let (g, p, i) = scalar(d, InnovationLaw::ScaledRademacher);
        let r = sigma_pairing(0, 0, &one, &one, &g, &p, &i, small_config()).unwrap();
        assert_relative_eq!(r.cumulant_part, -2.0 * gam[0] * gam[0], max_relative = 1e-9);
    }

    #[test]
    fn pairing_symmetry() {
        let g = GridSpace::new(vec![0.0, 0.5, 1.0], vec![0.2, 0.5, 0.3]).unwrap();
        let p = MemoryProfile::from_vec(vec![0.05, 0.1, 0.2]).unwrap();
        let f = array![[1.0, 0.3, 0.0], [0.5, -0.4, 0.2], [0.1, 0.1, 0.7]];
        let i = InnovationModel::from_factor(f, InnovationLaw::ScaledRademacher).unwrap();
        let op = SigmaOperator::new(&g, &p, &i, 2, small_config()).unwrap();
        let s = random_kernel(3, 11);
        let t = random_kernel(3, 12);
        for (pp, qq) in [(0, 1), (2, 0), (1, 1)] {
            let a = op.pairing(pp, qq, &s, &t).unwrap().value;
            let b = op.pairing(qq, pp, &t, &s).unwrap().value;
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gram_matrix_is_psd() {
        let g = GridSpace::uniform_unit(2).unwrap();
        let p = MemoryProfile::from_vec(vec![0.1, 0.15]).unwrap();
        let i = random_sigma(2, 8);
        let op = SigmaOperator::new(&g, &p, &i, 1, small_config()).unwrap();
        let tests: Vec<KernelOnGrid<f64>> = (0..3).map(|k| random_kernel(2, 20 + k)).collect();
        let idx: Vec<(usize, usize)> = (0..=1).flat_map(|h| (0..3).map(move |a| (h, a))).collect();
        let n = idx.len();
        let mut gram = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (x, &(p1, a)) in idx.iter().enumerate() {
            for (y, &(p2, b)) in idx.iter().enumerate() {
                gram[(x, y)] = op.pairing(p1, p2, &tests[a], &tests[b]).unwrap().value;
            }
        }
        let sym = (&gram + gram.transpose()) * 0.5;
        let min = sym.symmetric_eigen().eigenvalues.min();
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }

    #[test]
    fn doubling_ratios_match_power_decay() {
        // partial sums are Cauchy with geometric ratio 2^{4d−1} per doubling
        let d = 0.2;
        let (g, p, i) = scalar(d, InnovationLaw::Gaussian);
        let op = SigmaOperator::new(&g, &p, &i, 0, SigmaConfig { m_series: 2048, ..small_config() }).unwrap();
        let one = KernelOnGrid::from_fn(1, |_| 1.0);
        let ratios = op.doubling_ratios(0, 0, &one, 64).unwrap();
        assert!(!ratios.is_empty());
        // ratios decrease toward 2^{4d−1} as the lag sums reach their power law
        assert!(ratios.iter().all(|r| *r < 1.0));
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
        assert!(*ratios.last().unwrap() > 2f64.powf(4.0 * d - 1.0));
    }

    #[test]
    fn lag_sum_expansion_matches_direct_sum() {
        for &(dr, ds) in &[(0.05, 0.2), (0.2, 0.05), (0.1, 0.1), (0.4, 0.3)] {
            for &h in &[200usize, 2000] {
                let direct = lag_sum(dr, ds, h, 400);
                let asym: f64 = lag_sum_expansion(dr, ds).unwrap().iter().map(|(c, e)| c * (h as f64).powf(*e)).sum();
                let tol = if h == 200 { 1e-7 } else { 1e-9 };
                assert_relative_eq!(asym, direct, max_relative = tol);
            }
        }
    }

    #[test]
    fn pairings_csv() {
        let v = SigmaPairing { value: 1.5, tail_estimate: 0.1, covariance_part: 1.5, cumulant_part: 0.0, lambda_std_error: 0.0 };
        let mut buf = Vec::new();
        write_pairings_csv(&[(0, 1, 2, 3, v)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("p,q,test_id_S,test_id_T,value,tail_estimate\n0,1,2,3,"));
    }
}
