//! Beta function by quadrature and the Riemann zeta function on the real line.

use crate::error::{LrdError, Result};
use crate::quadrature::{integrate, Tolerance};
use crate::scalar::Real;

/// `B(a, b) = ∫₀¹ x^{a−1}(1−x)^{b−1} dx` by adaptive quadrature.
///
/// The interval is split at 1/2. On the left half `x = t^{1/a}` removes the
/// `x^{a−1}` singularity exactly; the right half is mirrored with `b`. Both
/// pieces are then smooth, so Gauss–Kronrod reaches ~1e-13 relative error.
pub fn beta_c<T: Real>(a: T, b: T) -> Result<T> {
    if !(a > T::zero()) || !(b > T::zero()) {
        return Err(LrdError::domain(format!("beta requires a, b > 0 (got a={a}, b={b})")));
    }
    Ok(half_beta(a, b) + half_beta(b, a))
}

// ∫₀^{1/2} x^{a−1}(1−x)^{b−1} dx with x = t^{1/a}:
// dx = (1/a) t^{1/a − 1} dt, x^{a−1} dx = (1/a) dt.
fn half_beta<T: Real>(a: T, b: T) -> T {
    let inv_a = T::one() / a;
    let upper = T::of(0.5).powf(a);
    let f = move |t: T| (T::one() - t.powf(inv_a)).powf(b - T::one()) * inv_a;
    integrate(f, T::zero(), upper, Tolerance { abs: 0.0, rel: 1e-13, max_intervals: 500 }).value
}

/// `c(r, s) = ∫₀^∞ x^{d_r−1}(1+x)^{d_s−1} dx = B(d_r, 1 − d_r − d_s)`.
///
/// This is the constant attached to the lag asymptotics
/// `Σ_j (j+h+1)^{d_r−1}(j+1)^{d_s−1} ~ c(s, r) h^{d_r+d_s−1}` and to the
/// closed-form norm of the Rosenblatt kernel. Requires `d_r + d_s < 1`.
pub fn memory_beta<T: Real>(d_r: T, d_s: T) -> Result<T> {
    let b = T::one() - d_r - d_s;
    if !(b > T::zero()) {
        return Err(LrdError::domain(format!("memory beta requires d_r + d_s < 1 (got {d_r} + {d_s})")));
    }
    beta_c(d_r, b)
}

/// Upper bound `1/a + 1/(1 − a − b)` for `∫₀^∞ x^{a−1}(1+x)^{b−1} dx`, valid
/// for `a, b ∈ (0, 1/2)`. Returns `+∞` if `a + b ≥ 1`.
pub fn beta_upper_bound<T: Real>(a: T, b: T) -> T {
    let s = T::one() - a - b;
    if s <= T::zero() {
        return T::infinity();
    }
    T::one() / a + T::one() / s
}

const BERNOULLI_2K: [f64; 10] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
];

/// Riemann `ζ(s)` for real `s ≠ 1` (analytically continued for `s < 1`) by
/// Euler–Maclaurin summation with 20 explicit terms.
pub fn zeta_real(s: f64) -> Result<f64> {
    if s == 1.0 || !s.is_finite() {
        return Err(LrdError::domain("zeta has a pole at s = 1"));
    }
    if s < -8.0 {
        return Err(LrdError::domain("zeta_real supports s ≥ −8"));
    }
    let n = 20.0_f64;
    let mut acc: f64 = (1..20).map(|k| (k as f64).powf(-s)).sum();
    acc += n.powf(1.0 - s) / (s - 1.0) + 0.5 * n.powf(-s);
    // B_{2k}/(2k)! · s(s+1)…(s+2k−2) · N^{−s−2k+1}
    let mut rising = s;
    let mut fact = 2.0;
    for (k, b) in BERNOULLI_2K.iter().enumerate() {
        let kk = (k + 1) as f64;
        if k > 0 {
            rising *= (s + 2.0 * kk - 3.0) * (s + 2.0 * kk - 2.0);
            fact *= (2.0 * kk - 1.0) * (2.0 * kk);
        }
        acc += b / fact * rising * n.powf(-s - 2.0 * kk + 1.0);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::ln_gamma;

    fn beta_via_gamma(a: f64, b: f64) -> f64 {
        (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)).exp()
    }

    #[test]
    fn unit_arguments() {
        assert_relative_eq!(beta_c(1.0_f64, 1.0).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn half_half_is_pi() {
        assert_relative_eq!(beta_c(0.5_f64, 0.5).unwrap(), std::f64::consts::PI, max_relative = 1e-10);
    }

    #[test]
    fn matches_gamma_identity() {
        // B(0.4, 0.4) = Γ(0.4)²/Γ(0.8) ≈ 4.226169
        let b = beta_c(0.4_f64, 0.4).unwrap();
        assert_relative_eq!(b, beta_via_gamma(0.4, 0.4), max_relative = 1e-8);
        assert_relative_eq!(b, 4.226_169_203_171_73, max_relative = 1e-8);
        for &(a, c) in &[(0.05, 0.9), (0.02, 0.3), (0.45, 0.1), (2.5, 0.7)] {
            assert_relative_eq!(beta_c(a, c).unwrap(), beta_via_gamma(a, c), max_relative = 1e-8);
        }
    }

    #[test]
    fn rejects_nonpositive_arguments() {
        assert!(matches!(beta_c(0.0_f64, 1.0), Err(LrdError::Domain(_))));
        assert!(beta_c(0.3_f64, -1.0).is_err());
    }

    #[test]
    fn symmetric() {
        for &(a, b) in &[(0.1, 0.3), (0.07, 0.41), (0.25, 0.49)] {
            let x: f64 = beta_c(a, b).unwrap();
            let y: f64 = beta_c(b, a).unwrap();
            assert!((x - y).abs() <= 1e-10 * x.abs());
        }
    }

    #[test]
    fn memory_beta_is_the_half_line_integral() {
        // ∫₀^∞ x^{-0.6}(1+x)^{-0.7} dx: x = τ^{2.5} on [0, 1], x = 1/t on [1, ∞)
        let tol = Tolerance { abs: 0.0, rel: 1e-12, max_intervals: 4000 };
        let near = integrate(|tau: f64| 2.5 * (1.0 + tau.powf(2.5)).powf(-0.7), 0.0, 1.0, tol).value;
        let far = integrate(|t: f64| t.powf(0.6 + 0.7 - 2.0) * (1.0 + t).powf(-0.7), 0.0, 1.0, tol).value;
        assert_relative_eq!(memory_beta(0.4_f64, 0.3).unwrap(), near + far, max_relative = 1e-6);
        assert_relative_eq!(memory_beta(0.4_f64, 0.3).unwrap(), beta_via_gamma(0.4, 0.3), max_relative = 1e-8);
        assert!(memory_beta(0.6_f64, 0.5).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let b = beta_c(0.5_f32, 0.5).unwrap();
        assert!((b - std::f32::consts::PI).abs() < 1e-5);
    }

    #[test]
    fn zeta_reference_values() {
        assert_relative_eq!(zeta_real(2.0).unwrap(), std::f64::consts::PI.powi(2) / 6.0, max_relative = 1e-14);
        assert_relative_eq!(zeta_real(0.0).unwrap(), -0.5, max_relative = 1e-14);
        assert_relative_eq!(zeta_real(-1.0).unwrap(), -1.0 / 12.0, max_relative = 1e-13);
        assert_relative_eq!(zeta_real(-3.0).unwrap(), 1.0 / 120.0, max_relative = 1e-12);
        assert_relative_eq!(zeta_real(0.5).unwrap(), -1.460_354_508_809_586_8, max_relative = 1e-13);
        assert_relative_eq!(zeta_real(1.8).unwrap(), 1.882_229_618_102_82, max_relative = 1e-13);
        assert!(zeta_real(1.0).is_err());
    }
}
