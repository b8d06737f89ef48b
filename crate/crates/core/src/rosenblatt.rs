//! The Rosenblatt kernel
//! `𝔣^{(r,s)}(x₁,x₂) = ∫₀¹ (v−x₁)₊^{d(r)−1} (v−x₂)₊^{d(s)−1} dv`, its norms, and
//! sampling of the function-valued Rosenblatt law through special kernels
//! driven by spatially correlated Gaussian measures.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, LrdError, Result};
use crate::grid::KernelOnGrid;
use crate::model::{classify_regime, InnovationModel, MemoryProfile, Regime};
use crate::quadrature::{integrate, FixedRule, Tolerance};
use crate::rng::{stream, Purpose};
use crate::scalar::{pairwise_sum, Real};
use crate::special::{beta_c, memory_beta};

const KERNEL_TOL: Tolerance = Tolerance { abs: 1e-300, rel: 1e-11, max_intervals: 400 };

/// `𝔣^{(r,s)}(x₁, x₂)` for exponents `d_r = d(r)`, `d_s = d(s)`.
///
/// Returns `+∞` on the diagonal `x₁ = x₂ ∈ [0, 1)` when `d_r + d_s ≤ 1`,
/// where the defining integral diverges.
pub fn kernel_f<T: Real>(d_r: T, d_s: T, x1: T, x2: T) -> T {
    if x1 <= x2 {
        oriented(d_r, d_s, x1, x2)
    } else {
        oriented(d_s, d_r, x2, x1)
    }
}

/// `∫_{max(q,0)}^{1} (v−p)^{e_p−1} (v−q)^{e_q−1} dv` for `p ≤ q`.
fn oriented<T: Real>(e_p: T, e_q: T, p: T, q: T) -> T {
    let one = T::one();
    if q >= one {
        return T::zero();
    }
    let delta = q - p;
    let t0 = (-q).max(T::zero());
    let t1 = one - q;
    if t0 == T::zero() {
        if delta == T::zero() {
            return if e_p + e_q <= one {
                T::infinity()
            } else {
                t1.powf(e_p + e_q - one) / (e_p + e_q - one)
            };
        }
        let c = delta.min(t1);
        head_piece(e_p, e_q, delta, c) + log_piece(e_p, e_q, delta, c, t1)
    } else {
        log_piece(e_p, e_q, delta, t0, t1)
    }
}

/// `∫_0^c t^{e_q−1}(t+δ)^{e_p−1} dt` with `t = c z^{1/e_q}`.
fn head_piece<T: Real>(e_p: T, e_q: T, delta: T, c: T) -> T {
    let one = T::one();
    let inv = one / e_q;
    let f = move |z: T| (c * z.powf(inv) + delta).powf(e_p - one);
    c.powf(e_q) / e_q * integrate(f, T::zero(), one, KERNEL_TOL).value
}

/// `∫_a^b t^{e_q−1}(t+δ)^{e_p−1} dt` with `t = e^u`.
fn log_piece<T: Real>(e_p: T, e_q: T, delta: T, a: T, b: T) -> T {
    if a >= b {
        return T::zero();
    }
    let one = T::one();
    let f = move |u: T| {
        let t = u.exp();
        t.powf(e_q) * (t + delta).powf(e_p - one)
    };
    integrate(f, a.ln(), b.ln(), KERNEL_TOL).value
}

/// `⟨𝔣^{(i,j)}, 𝔣^{(k,l)}⟩_{L²(ℝ²)}` in closed form,
/// `[c(d_i,d_k) c(d_j,d_l) + c(d_k,d_i) c(d_l,d_j)] / ((γ+1)(γ+2))` with
/// `c(a,b) = B(a, 1−a−b)` and `γ = d_i+d_j+d_k+d_l−2`.
pub fn kernel_inner_closed_form<T: Real>(d_i: T, d_j: T, d_k: T, d_l: T) -> Result<T> {
    let one = T::one();
    let gamma = d_i + d_j + d_k + d_l - T::of(2.0);
    if !(gamma + one > T::zero()) {
        return Err(LrdError::domain(format!(
            "kernel inner product needs d_i+d_j+d_k+d_l > 1 (got {})",
            gamma + T::of(2.0)
        )));
    }
    let a = memory_beta(d_i, d_k)? * memory_beta(d_j, d_l)?;
    let b = memory_beta(d_k, d_i)? * memory_beta(d_l, d_j)?;
    Ok((a + b) / ((gamma + one) * (gamma + T::of(2.0))))
}

/// `‖𝔣^{(r,s)}‖² = 2 c(r) c(s) / ((2d(r,s)−1)·2d(r,s))`, `c(r) = B(d(r), 1−2d(r))`,
/// `d(r,s) = d(r)+d(s)`.
pub fn kernel_norm_closed_form<T: Real>(d_r: T, d_s: T) -> Result<T> {
    if !(d_r + d_s > T::of(0.5)) {
        return Err(LrdError::domain("kernel norm needs 2(d(r)+d(s)) > 1"));
    }
    kernel_inner_closed_form(d_r, d_s, d_r, d_s)
}

/// The expression `4 B(d_r,d_r) B(d_s,d_s) / ((2d(r,s)−1)·2d(r,s))` evaluated
/// literally. Kept for comparison only; it is not the norm of `𝔣`.
pub fn kernel_norm_display_form<T: Real>(d_r: T, d_s: T) -> Result<T> {
    let drs = d_r + d_s;
    if !(drs > T::of(0.5)) {
        return Err(LrdError::domain("kernel norm needs 2(d(r)+d(s)) > 1"));
    }
    let two = T::of(2.0);
    Ok(T::of(4.0) * beta_c(d_r, d_r)? * beta_c(d_s, d_s)? / ((two * drs - T::one()) * two * drs))
}

/// `K_d(δ) = ∫_{−∞}^{v} (v−x)^{d−1}(v+δ−x)^{d−1} dx = ∫_0^∞ y^{d−1}(y+δ)^{d−1} dy`
/// by numerical quadrature (no closed form used).
fn overlap_integral<T: Real>(d: T, delta: T) -> T {
    let one = T::one();
    // y ∈ [0, δ]: y = δ z^{1/d}
    let inv = one / d;
    let near = delta.powf(d + d - one) / d
        * integrate(move |z: T| (z.powf(inv) + one).powf(d - one), T::zero(), one, KERNEL_TOL).value;
    // y ∈ [δ, ∞): y = δ / t, t = τ^{1/(1−2d)}
    let s = one - d - d;
    let q = one / s;
    let far = delta.powf(d + d - one) / s
        * integrate(move |tau: T| (one + tau.powf(q)).powf(d - one), T::zero(), one, KERNEL_TOL).value;
    near + far
}

/// `‖𝔣^{(r,s)}‖²` by quadrature, independent of the closed form.
///
/// By Fubini `∫∫𝔣² dx = ∫₀¹∫₀¹ K_{d(r)}(|v−v'|) K_{d(s)}(|v−v'|) dv dv'` with the
/// inner `x`-integrals `K` computed numerically; the symmetric `(v, v')`
/// square reduces to `2∫₀¹ (1−δ) K K dδ`, integrated after `δ = τ^p` to
/// remove the `δ^{2d(r,s)−2}` endpoint singularity.
pub fn kernel_norm_quadrature<T: Real>(d_r: T, d_s: T) -> Result<T> {
    let one = T::one();
    let e = d_r + d_s + d_r + d_s - T::of(2.0); // δ exponent
    if !(e > -one) {
        return Err(LrdError::domain("kernel norm needs 2(d(r)+d(s)) > 1"));
    }
    let p = one / (e + one);
    let f = move |tau: T| {
        let delta = tau.powf(p);
        // δ^{e} dδ = p τ^{p(e+1)−1} τ^{... } dτ; with p(e+1) = 1: δ^e dδ = p dτ
        let kr = overlap_integral(d_r, delta) / delta.powf(d_r + d_r - one);
        let ks = overlap_integral(d_s, delta) / delta.powf(d_s + d_s - one);
        T::of(2.0) * (one - delta) * kr * ks * p
    };
    Ok(integrate(f, T::zero(), one, Tolerance { abs: 0.0, rel: 1e-10, max_intervals: 200 }).value)
}

/// `∫∫_{[−L,1]²} 𝔣^{(r,s)}(x₁,x₂)² dx₁dx₂`.
pub fn kernel_norm_box<T: Real>(d_r: T, d_s: T, l: T) -> Result<T> {
    let one = T::one();
    if !(l > T::zero()) {
        return Err(LrdError::config("box needs L > 0"));
    }
    let full = kernel_norm_closed_form(d_r, d_s)?;
    let br = memory_beta(d_r, d_r)?;
    let bs = memory_beta(d_s, d_s)?;
    let rule = FixedRule::new(24);
    // I_d(v, δ; L) = δ^{2d−1} B(d,1−2d) − R_d(v+L, δ), R_d(Y,δ) = ∫_Y^∞ y^{d−1}(y+δ)^{d−1}dy
    let remainder = |d: T, y0: T, delta: T| {
        let s = one - d - d;
        let q = one / s;
        y0.powf(-s) / s * rule.integrate(|tau: T| (one + delta / y0 * tau.powf(q)).powf(d - one), T::zero(), one)
    };
    // ∫∫_{[0,1]²} I_r I_s = full − 2∫_{δ}∫_{v} [K_r R_s + R_r K_s − R_r R_s]
    let deficit = |delta: T| {
        let kr = if delta > T::zero() { br * delta.powf(d_r + d_r - one) } else { T::zero() };
        let ks = if delta > T::zero() { bs * delta.powf(d_s + d_s - one) } else { T::zero() };
        let g = |v: T| {
            let rr = remainder(d_r, v + l, delta);
            let rs = remainder(d_s, v + l, delta);
            kr * rs + rr * ks - rr * rs
        };
        integrate(g, T::zero(), one - delta, Tolerance { abs: 0.0, rel: 1e-10, max_intervals: 100 }).value
    };
    let e = d_r + d_s + d_r + d_s - T::of(2.0);
    let p = one / (e + one + one); // soften the δ^{2d−1} factors near δ = 0
    let outer = integrate(
        move |tau: T| {
            let delta = tau.powf(one / p);
            deficit(delta) * tau.powf(one / p - one) / p
        },
        T::zero(),
        one,
        Tolerance { abs: 0.0, rel: 1e-9, max_intervals: 200 },
    )
    .value;
    Ok(full - T::of(2.0) * outer)
}

/// Second-regime Rosenblatt kernel data: memory profile and the covariance
/// `σ(r,s)` of the integrators `W^{(r)}`.
#[derive(Debug, Clone)]
pub struct RosenblattKernelSpec<T: Real> {
    pub profile: MemoryProfile<T>,
    pub innovations: InnovationModel<T>,
}

impl<T: Real> RosenblattKernelSpec<T> {
    pub fn new(profile: MemoryProfile<T>, innovations: InnovationModel<T>) -> Result<Self> {
        check_dim(profile.len(), innovations.dim())?;
        if classify_regime(&profile) != Regime::Second {
            return Err(LrdError::domain("Rosenblatt kernel needs d(r) ∈ (1/4, 1/2) at every site"));
        }
        Ok(RosenblattKernelSpec { profile, innovations })
    }

    pub fn m(&self) -> usize {
        self.profile.len()
    }

    pub fn f(&self, r: usize, s: usize, x1: T, x2: T) -> T {
        kernel_f(self.profile.at(r), self.profile.at(s), x1, x2)
    }

    /// `Cov(𝔯(i,j), 𝔯(k,l)) = σ_ik σ_jl ⟨𝔣^{ij},𝔣^{kl}⟩ + σ_il σ_jk ⟨𝔣^{ij},𝔣^{lk}⟩`.
    pub fn covariance(&self, i: usize, j: usize, k: usize, l: usize) -> Result<T> {
        let d = |a: usize| self.profile.at(a);
        let s = self.innovations.sigma();
        let first = s.get(i, k) * s.get(j, l) * kernel_inner_closed_form(d(i), d(j), d(k), d(l))?;
        let second = s.get(i, l) * s.get(j, k) * kernel_inner_closed_form(d(i), d(j), d(l), d(k))?;
        Ok(first + second)
    }

    /// `‖𝔣^σ‖² = Σ_{r,s} w_r w_s σ²(r) σ²(s) ‖𝔣^{(r,s)}‖²`.
    pub fn sigma_norm_sq(&self, weights: &[T]) -> Result<T> {
        check_dim(self.m(), weights.len())?;
        let mut acc = T::zero();
        for r in 0..self.m() {
            for s in 0..self.m() {
                acc += weights[r]
                    * weights[s]
                    * self.innovations.variance(r)
                    * self.innovations.variance(s)
                    * kernel_norm_closed_form(self.profile.at(r), self.profile.at(s))?;
            }
        }
        Ok(acc)
    }

    /// The admissibility integral `∫ σ²(r) / ((1−2d(r))(2d(r)−1/2)) μ(dr)`.
    pub fn admissibility_integral(&self, weights: &[T]) -> Result<T> {
        check_dim(self.m(), weights.len())?;
        let two = T::of(2.0);
        Ok((0..self.m())
            .map(|r| {
                let d = self.profile.at(r);
                weights[r] * self.innovations.variance(r) / ((T::one() - two * d) * (two * d - T::of(0.5)))
            })
            .sum())
    }
}

/// `𝔼𝔯(r,s)² = σ²(r)σ²(s)‖𝔣^{(r,s)}‖² + σ(r,s)² ⟨𝔣^{(r,s)}, 𝔣^{(s,r)}⟩`.
pub fn second_moment<T: Real>(r: usize, s: usize, spec: &RosenblattKernelSpec<T>) -> Result<T> {
    spec.covariance(r, s, r, s)
}

/// Geometric refinement of the half-line `(−∞, −L]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FarField {
    /// Ratio of consecutive bin edges (> 1).
    pub ratio: f64,
    /// Bins stop once the left edge passes `−extent`.
    pub extent: f64,
}

impl Default for FarField {
    fn default() -> Self {
        FarField { ratio: 1.05, extent: 1e8 }
    }
}

/// Parameters of a special kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecialKernelParams {
    /// Uniform bins on `[−L, 1]`.
    pub bins: usize,
    pub l: f64,
    /// Optional geometric bins left of `−L`.
    pub far_field: Option<FarField>,
    /// Use the corner minimum over each bin pair (dominated by `𝔣`) instead of
    /// the midpoint value.
    pub clamped: bool,
}

impl SpecialKernelParams {
    pub fn uniform(bins: usize, l: f64) -> Self {
        SpecialKernelParams { bins, l, far_field: None, clamped: false }
    }

    pub fn with_far_field(mut self, far: FarField) -> Self {
        self.far_field = Some(far);
        self
    }

    pub fn edges(&self) -> Result<Vec<f64>> {
        if self.bins < 2 {
            return Err(LrdError::config("special kernel needs at least two bins"));
        }
        if !(self.l > 0.0) {
            return Err(LrdError::config("special kernel needs L > 0"));
        }
        let mut edges = Vec::new();
        if let Some(far) = self.far_field {
            if !(far.ratio > 1.0) || !(far.extent > self.l) {
                return Err(LrdError::config("far field needs ratio > 1 and extent > L"));
            }
            let mut e = vec![-self.l];
            while -*e.last().unwrap() < far.extent {
                let next = *e.last().unwrap() * far.ratio;
                e.push(next);
            }
            e.reverse();
            e.pop();
            edges.extend(e);
        }
        let width = (1.0 + self.l) / self.bins as f64;
        edges.extend((0..=self.bins).map(|i| -self.l + i as f64 * width));
        Ok(edges)
    }
}

/// `Σ_{i₁≠i₂} c_{i₁,i₂}(r,s) 1_{Δ_{i₁}}(x₁) 1_{Δ_{i₂}}(x₂)`.
#[derive(Debug, Clone)]
pub struct SpecialKernel<T> {
    pub edges: Vec<f64>,
    pub params: SpecialKernelParams,
    /// Coefficient matrix per site pair, indexed `r * m + s`; diagonals are zero.
    pub coefficients: Vec<Array2<T>>,
    m: usize,
}

impl<T: Real> SpecialKernel<T> {
    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn coefficient(&self, r: usize, s: usize) -> &Array2<T> {
        &self.coefficients[r * self.m + s]
    }

    pub fn bin_width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    pub fn midpoint(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// `Σ_{i≠j} a_ij b_ij |Δ_i||Δ_j|`, the `L²(ℝ²)` pairing of two coefficient
    /// tables on these bins.
    fn pairing(&self, a: &Array2<T>, b: &Array2<T>) -> f64 {
        let n = self.len();
        let terms: Vec<f64> = (0..n)
            .map(|i| {
                let wi = self.bin_width(i);
                (0..n).map(|j| a[(i, j)].as_f64() * b[(i, j)].as_f64() * self.bin_width(j)).sum::<f64>() * wi
            })
            .collect();
        pairwise_sum(&terms)
    }

    /// Exact covariance `Cov(𝓘₂(i,j), 𝓘₂(k,l))` of the discretized integral.
    pub fn covariance(&self, sigma: &KernelOnGrid<T>, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let cij = self.coefficient(i, j);
        let ckl = self.coefficient(k, l);
        let clk = self.coefficient(l, k).t().to_owned();
        sigma.get(i, k).as_f64() * sigma.get(j, l).as_f64() * self.pairing(cij, ckl)
            + sigma.get(i, l).as_f64() * sigma.get(j, k).as_f64() * self.pairing(cij, &clk)
    }

    /// `‖S^{(r,s)} − 𝔣^{(r,s)}‖²_{L²(ℝ²)}` via
    /// `‖S‖² − 2⟨S,𝔣⟩ + ‖𝔣‖²`, where `⟨S,𝔣⟩ = ∫₀¹ G(v)ᵀ C G(v) dv` and
    /// `G_i(v) = ∫_{Δ_i} (v−x)₊^{d−1} dx` in closed form.
    pub fn distance_sq_to_f(&self, d_r: T, d_s: T, r: usize, s: usize) -> Result<f64> {
        let (dr, ds) = (d_r.as_f64(), d_s.as_f64());
        let c = self.coefficient(r, s);
        let n = self.len();
        let g = |d: f64, v: f64, i: usize| {
            let (a, b) = (self.edges[i], self.edges[i + 1]);
            ((v - a).max(0.0).powf(d) - (v - b).max(0.0).powf(d)) / d
        };
        // breakpoints in [0,1]: bin edges
        let mut breaks: Vec<f64> = self.edges.iter().copied().filter(|e| *e > 0.0 && *e < 1.0).collect();
        breaks.insert(0, 0.0);
        breaks.push(1.0);
        let rule = FixedRule::new(12);
        let mut cross = 0.0;
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            // v = a + (b−a) τ², smoothing the (v−edge)^d behaviour at the left end
            for (tau, wt) in rule.mapped(0.0, 1.0) {
                let v = a + (b - a) * tau * tau;
                let jac = 2.0 * (b - a) * tau;
                let gr: Vec<f64> = (0..n).map(|i| g(dr, v, i)).collect();
                let gs: Vec<f64> = (0..n).map(|i| g(ds, v, i)).collect();
                let mut quad = 0.0;
                for i in 0..n {
                    if gr[i] == 0.0 {
                        continue;
                    }
                    let mut row = 0.0;
                    for j in 0..n {
                        row += c[(i, j)].as_f64() * gs[j];
                    }
                    quad += gr[i] * row;
                }
                cross += wt * jac * quad;
            }
        }
        let self_sq = self.pairing(c, c);
        let f_sq = kernel_norm_closed_form(dr, ds)?;
        Ok(self_sq - 2.0 * cross + f_sq)
    }
}

/// Builds the special kernel approximating `𝔣^{(r,s)}` for all site pairs.
///
/// Midpoint coefficients on the uniform part are computed through cumulative
/// integrals along each diagonal offset, which costs `O(M²)` smooth
/// quadratures instead of `M²` adaptive ones. Far-field and clamped
/// coefficients are evaluated pointwise.
pub fn build_special_kernel<T: Real>(spec: &RosenblattKernelSpec<T>, params: SpecialKernelParams) -> Result<SpecialKernel<T>> {
    let edges = params.edges()?;
    let m = spec.m();
    let n_far = edges.len() - 1 - params.bins;
    crate::process::check_size(edges.len() * edges.len(), m * m)?;
    let mut coefficients: Vec<Array2<T>> = Vec::with_capacity(m * m);
    for r in 0..m {
        for s in 0..m {
            let (dr, ds) = (spec.profile.at(r).as_f64(), spec.profile.at(s).as_f64());
            if s < r && dr == ds {
                // 𝔣^{(s,r)} = 𝔣^{(r,s)}ᵀ when the exponents agree
                let t: Array2<T> = coefficients[s * m + r].t().to_owned();
                coefficients.push(t);
                continue;
            }
            let table = if params.clamped {
                clamped_table(dr, ds, &edges)
            } else {
                midpoint_table(dr, ds, &edges, n_far, params)
            };
            coefficients.push(table.mapv(T::of));
        }
    }
    Ok(SpecialKernel { edges, params, coefficients, m })
}

fn midpoint_table(dr: f64, ds: f64, edges: &[f64], n_far: usize, params: SpecialKernelParams) -> Array2<f64> {
    let n = edges.len() - 1;
    let mid: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let mut c = Array2::<f64>::zeros((n, n));
    // uniform block: (ep, eq) = (dr, ds) above the diagonal, (ds, dr) below
    let upper = lattice_upper(dr, ds, params.l, params.bins);
    let lower = if dr == ds { None } else { Some(lattice_upper(ds, dr, params.l, params.bins)) };
    for k in 1..params.bins {
        for (a, v) in upper[k - 1].iter().enumerate() {
            // pair (i, j) = (a, a + k) in the uniform block, p = x_i earlier
            c[(n_far + a, n_far + a + k)] = *v;
        }
        let lo = lower.as_ref().unwrap_or(&upper);
        for (a, v) in lo[k - 1].iter().enumerate() {
            c[(n_far + a + k, n_far + a)] = *v;
        }
    }
    // far-field rows and columns
    let far_rows: Vec<Vec<(usize, f64)>> = (0..n_far)
        .into_par_iter()
        .map(|i| {
            let mut out = Vec::with_capacity(2 * n);
            for j in 0..n {
                if j != i {
                    out.push((j, kernel_f(dr, ds, mid[i], mid[j])));
                }
            }
            out
        })
        .collect();
    for (i, row) in far_rows.into_iter().enumerate() {
        for (j, v) in row {
            c[(i, j)] = v;
        }
    }
    if n_far > 0 {
        let far_cols: Vec<Vec<(usize, f64)>> = (n_far..n)
            .into_par_iter()
            .map(|i| (0..n_far).map(|j| (j, kernel_f(dr, ds, mid[i], mid[j]))).collect())
            .collect();
        for (k, col) in far_cols.into_iter().enumerate() {
            for (j, v) in col {
                c[(n_far + k, j)] = v;
            }
        }
    }
    c
}

/// Midpoint values `∫_{max(q,0)}^1 (v−p)^{e_p−1}(v−q)^{e_q−1} dv` for the
/// uniform midpoints `x_i = −L + (i+½)δ`, `p = x_i`, `q = x_{i+k}`; entry
/// `[k−1][i]`.
///
/// With `t = v − q`, the value is `P_k(1−q) − P_k(max(−q, 0))` where
/// `P_k(y) = ∫_0^y (t+kδ)^{e_p−1} t^{e_q−1} dt`. The points `1 − q` lie on the
/// lattice `(n+½)δ` and `−q` on the same lattice shifted by one, so each
/// offset needs two cumulative sweeps of cell integrals.
fn lattice_upper(e_p: f64, e_q: f64, l: f64, bins: usize) -> Vec<Vec<f64>> {
    let delta = (1.0 + l) / bins as f64;
    let rule = FixedRule::new(8);
    let nodes: Vec<(f64, f64)> = rule.mapped(0.0, 1.0).collect();
    let head = |off: f64, c: f64| -> f64 {
        // ∫_0^c t^{e_q−1}(t+off)^{e_p−1} dt, t = c z^{1/e_q}
        let inv = 1.0 / e_q;
        c.powf(e_q) / e_q * nodes.iter().map(|&(z, w)| w * (c * z.powf(inv) + off).powf(e_p - 1.0)).sum::<f64>()
    };
    let cell = |off: f64, a: f64, b: f64| -> f64 {
        let h = b - a;
        nodes
            .iter()
            .map(|&(z, w)| {
                let t = a + h * z;
                w * t.powf(e_q - 1.0) * (t + off).powf(e_p - 1.0)
            })
            .sum::<f64>()
            * h
    };
    (1..bins)
        .into_par_iter()
        .map(|k| {
            let off = k as f64 * delta;
            let count = bins - k; // i = 0..count, j = i + k
            // P at y_n = (n+½)δ, n = 0..count−1
            let mut p_y = Vec::with_capacity(count);
            let mut acc = head(off, 0.5 * delta);
            p_y.push(acc);
            for nn in 1..count {
                let a = (nn as f64 - 0.5) * delta;
                acc += cell(off, a, a + delta);
                p_y.push(acc);
            }
            // P at z_n = y_n − 1 where positive
            let mut p_z = vec![0.0; count];
            let mut started = false;
            let mut acc = 0.0;
            for nn in 0..count {
                let z = (nn as f64 + 0.5) * delta - 1.0;
                if z <= 0.0 {
                    continue;
                }
                if !started {
                    acc = head(off, z);
                    started = true;
                } else {
                    acc += cell(off, z - delta, z);
                }
                p_z[nn] = acc;
            }
            // j = i + k ↦ n = bins − 1 − j
            (0..count)
                .map(|i| {
                    let nn = bins - 1 - (i + k);
                    p_y[nn] - p_z[nn]
                })
                .collect()
        })
        .collect()
}

/// `min` of `𝔣` over the four corners of each bin pair; a lower bound of `𝔣`
/// on the whole rectangle since `𝔣` is increasing in the earlier argument and
/// unimodal in the later one.
fn clamped_table(dr: f64, ds: f64, edges: &[f64]) -> Array2<f64> {
    let n = edges.len() - 1;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let corners = [
                        (edges[i], edges[j]),
                        (edges[i], edges[j + 1]),
                        (edges[i + 1], edges[j]),
                        (edges[i + 1], edges[j + 1]),
                    ];
                    corners.iter().map(|&(a, b)| kernel_f(dr, ds, a, b)).fold(f64::INFINITY, f64::min)
                })
                .collect()
        })
        .collect();
    Array2::from_shape_fn((n, n), |(i, j)| rows[i][j])
}

/// Draw of `𝓘₂` with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RosenblattSample<T> {
    pub value: KernelOnGrid<T>,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub bins: usize,
    pub total_bins: usize,
    pub l: f64,
    pub seed: u64,
    pub replication: u64,
}

/// Samples `𝓘₂(r,s) = Σ_{i≠j} c_ij(r,s) W^{(r)}(Δ_i) W^{(s)}(Δ_j)` with
/// `W(Δ_i) = √|Δ_i| η_i`, `η_i ~ N(0, σ)` independent across bins.
pub struct RosenblattSampler<T: Real> {
    kernel: SpecialKernel<T>,
    factor: Array2<T>,
    sqrt_width: Vec<T>,
}

/// Replications are grouped into fixed batches so results do not depend on
/// the number of worker threads.
pub const SAMPLER_BATCH: usize = 32;

impl<T: Real> RosenblattSampler<T> {
    pub fn new(spec: &RosenblattKernelSpec<T>, params: SpecialKernelParams) -> Result<Self> {
        let kernel = build_special_kernel(spec, params)?;
        Ok(Self::from_kernel(kernel, spec.innovations.factor().clone()))
    }

    pub fn from_kernel(kernel: SpecialKernel<T>, factor: Array2<T>) -> Self {
        let sqrt_width = (0..kernel.len()).map(|i| T::of(kernel.bin_width(i).sqrt())).collect();
        RosenblattSampler { kernel, factor, sqrt_width }
    }

    pub fn kernel(&self) -> &SpecialKernel<T> {
        &self.kernel
    }

    /// Integrator values for one replication, one `M × 1` column per site.
    fn integrators(&self, seed: u64, rep: u64) -> Array2<T> {
        let mut rng = stream(seed, Purpose::Rosenblatt, rep);
        let n = self.kernel.len();
        let k = self.factor.ncols();
        let z = Array2::from_shape_fn((n, k), |_| T::standard_normal(&mut rng));
        let mut w = z.dot(&self.factor.t()); // n × m
        for (i, mut row) in w.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|v| v * self.sqrt_width[i]);
        }
        w
    }

    fn batch(&self, seed: u64, reps: std::ops::Range<u64>) -> Vec<KernelOnGrid<T>> {
        let m = self.kernel.m();
        let n = self.kernel.len();
        let b = (reps.end - reps.start) as usize;
        let draws: Vec<Array2<T>> = reps.clone().map(|rep| self.integrators(seed, rep)).collect();
        let mut out = vec![KernelOnGrid::zeros(m); b];
        for s in 0..m {
            let ws = Array2::from_shape_fn((n, b), |(i, c)| draws[c][(i, s)]);
            for r in 0..m {
                let y = self.kernel.coefficient(r, s).dot(&ws);
                for (c, o) in out.iter_mut().enumerate() {
                    let terms: Vec<T> = (0..n).map(|i| draws[c][(i, r)] * y[(i, c)]).collect();
                    o.values[(r, s)] = pairwise_sum(&terms);
                }
            }
        }
        out
    }

    /// Replication `rep` from the `(seed, Rosenblatt, rep)` stream.
    pub fn sample(&self, seed: u64, rep: u64) -> RosenblattSample<T> {
        let value = self.batch(seed, rep..rep + 1).pop().expect("one draw");
        RosenblattSample { value, meta: self.meta(seed, rep) }
    }

    pub fn meta(&self, seed: u64, rep: u64) -> SampleMeta {
        SampleMeta {
            bins: self.kernel.params.bins,
            total_bins: self.kernel.len(),
            l: self.kernel.params.l,
            seed,
            replication: rep,
        }
    }

    /// Replications `0..count`, computed in parallel over fixed batches.
    pub fn sample_many(&self, seed: u64, count: usize) -> Vec<KernelOnGrid<T>> {
        let batches: Vec<(u64, u64)> = (0..count)
            .step_by(SAMPLER_BATCH)
            .map(|a| (a as u64, (a + SAMPLER_BATCH).min(count) as u64))
            .collect();
        batches.into_par_iter().map(|(a, b)| self.batch(seed, a..b)).collect::<Vec<_>>().into_iter().flatten().collect()
    }
}

/// One draw of `𝔯` from replication `rep` of `seed`.
pub fn sample_rosenblatt<T: Real>(
    spec: &RosenblattKernelSpec<T>,
    params: SpecialKernelParams,
    seed: u64,
    rep: u64,
) -> Result<RosenblattSample<T>> {
    Ok(RosenblattSampler::new(spec, params)?.sample(seed, rep))
}
