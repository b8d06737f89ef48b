//! Numerical integration: adaptive Gauss–Kronrod, fixed Gauss–Legendre rules,
//! and Euler–Maclaurin tails for slowly decaying power-law series.

use crate::scalar::Real;

// Gauss–Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult<T> {
    pub value: T,
    pub error: T,
    pub evaluations: usize,
}

/// Tolerances for [`integrate`]. Subdivision stops once the summed error
/// estimate is below `max(abs, rel * |value|)` or `max_intervals` is hit.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-14, rel: 1e-10, max_intervals: 2_000 }
    }
}

impl Tolerance {
    pub fn rel(rel: f64) -> Self {
        Tolerance { rel, ..Default::default() }
    }
}

fn gk15<T: Real, F: Fn(T) -> T>(f: &F, a: T, b: T) -> (T, T) {
    let center = (a + b) * T::of(0.5);
    let half = (b - a) * T::of(0.5);
    let fc = f(center);
    let mut kronrod = fc * T::of(WGK[7]);
    let mut gauss = fc * T::of(WG[3]);
    for (k, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * T::of(x);
        let pair = f(center - dx) + f(center + dx);
        kronrod += pair * T::of(WGK[k]);
        if k % 2 == 1 {
            gauss += pair * T::of(WG[k / 2]);
        }
    }
    let value = kronrod * half;
    let err = ((kronrod - gauss) * half).abs();
    (value, err)
}

/// Adaptive 15-point Gauss–Kronrod integration on `[a, b]`.
///
/// The rule never samples the endpoints, so integrable endpoint singularities
/// are tolerated, although convergence is slow unless they are transformed
/// away first.
pub fn integrate<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, tol: Tolerance) -> QuadResult<T> {
    if a == b {
        return QuadResult { value: T::zero(), error: T::zero(), evaluations: 0 };
    }
    let mut intervals: Vec<(T, T, T, T)> = Vec::with_capacity(64);
    let (v, e) = gk15(&f, a, b);
    intervals.push((a, b, v, e));
    let mut evaluations = 15;
    loop {
        let total: T = intervals.iter().map(|iv| iv.2).sum();
        let err: T = intervals.iter().map(|iv| iv.3).sum();
        let target = T::of(tol.abs).max(T::of(tol.rel) * total.abs());
        if err <= target || intervals.len() >= tol.max_intervals {
            return QuadResult { value: total, error: err, evaluations };
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |best, (i, iv)| if iv.3 > best.1 { (i, iv.3) } else { best });
        let (lo, hi, _, _) = intervals.swap_remove(idx);
        let mid = (lo + hi) * T::of(0.5);
        if mid <= lo || mid >= hi {
            // interval exhausted in floating point; keep its estimate
            let (v, e) = gk15(&f, lo, hi);
            intervals.push((lo, hi, v, e * T::zero()));
            continue;
        }
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        evaluations += 30;
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// Gauss–Legendre rule on `[-1, 1]` with `n` nodes (Newton iteration on the
/// Legendre recurrence). Returned as `(nodes, weights)` in ascending order.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
#[derive(Debug, Clone)]
pub struct FixedRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl FixedRule {
    pub fn new(n: usize) -> Self {
        let (nodes, weights) = gauss_legendre(n);
        FixedRule { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped<T: Real>(&self, a: T, b: T) -> impl Iterator<Item = (T, T)> + '_ {
        let half = (b - a) * T::of(0.5);
        let center = (a + b) * T::of(0.5);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (center + half * T::of(x), half * T::of(w)))
    }

    pub fn integrate<T: Real, F: Fn(T) -> T>(&self, f: F, a: T, b: T) -> T {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Euler–Maclaurin tail `Σ_{j ≥ start} (j + a)^α (j + b)^β` for `α + β < -1`
/// and `start + a > 0`, `start + b > 0`.
///
/// The integral part is evaluated exactly after the substitution
/// `x + a = (start + a) / t`, `t = τ^q`, which turns the algebraic decay into a
/// bounded smooth integrand on `[0, 1]`. Boundary corrections run to the third
/// derivative. Large offsets `|b − a| > start + a` are integrated adaptively.
pub fn power_product_tail<T: Real>(start: T, a: T, alpha: T, b: T, beta: T) -> T {
    if b < a {
        // measure from the nearer singularity so the inner integrand stays bounded away from 0
        return power_product_tail(start, b, beta, a, alpha);
    }
    let y0 = start + a;
    let shift = b - a;
    let s1 = -(alpha + beta) - T::one(); // > 0 for a convergent tail
    assert!(s1 > T::zero(), "power-product tail requires alpha + beta < -1");
    let q = T::one() / s1;
    // ∫_{y0}^∞ y^α (y + shift)^β dy = y0^{α+β+1} / s1 ∫_0^1 (1 + shift τ^q / y0)^β dτ
    let ratio = shift / y0;
    let g = move |tau: T| (T::one() + ratio * tau.powf(q)).powf(beta);
    let inner = if ratio <= T::one() {
        tail_rule().integrate(g, T::zero(), T::one())
    } else {
        // the integrand turns over near τ ≈ ratio^{−1/q}; let the adaptive rule find it
        integrate(g, T::zero(), T::one(), Tolerance { abs: 0.0, rel: 1e-14, max_intervals: 200 }).value
    };
    let integral = y0.powf(alpha + beta + T::one()) / s1 * inner;

    let x = start;
    let ya = x + a;
    let yb = x + b;
    let f = ya.powf(alpha) * yb.powf(beta);
    let g1 = alpha / ya + beta / yb;
    let g2 = -(alpha / (ya * ya) + beta / (yb * yb));
    let g3 = T::of(2.0) * (alpha / (ya * ya * ya) + beta / (yb * yb * yb));
    let f1 = f * g1;
    let f3 = f * (g1 * g1 * g1 + T::of(3.0) * g1 * g2 + g3);
    // Σ_{j≥x} f(j) = ∫_x^∞ f + f(x)/2 − f'(x)/12 + f'''(x)/720 − …
    integral + f * T::of(0.5) - f1 / T::of(12.0) + f3 / T::of(720.0)
}

fn tail_rule() -> &'static FixedRule {
    use std::sync::OnceLock;
    static RULE: OnceLock<FixedRule> = OnceLock::new();
    RULE.get_or_init(|| FixedRule::new(24))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = FixedRule::new(5);
        // degree 9 polynomial is exact for 5 nodes
        let v = rule.integrate(|x: f64| x.powi(8) + 3.0 * x.powi(3), -1.0, 1.0);
        assert_relative_eq!(v, 2.0 / 9.0, epsilon = 1e-14);
        let w: f64 = gauss_legendre(12).1.iter().sum();
        assert_relative_eq!(w, 2.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_handles_smooth_and_singular_integrands() {
        let r = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, Tolerance::default());
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-12);
        let r = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, Tolerance { rel: 1e-9, ..Default::default() });
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn power_tail_matches_brute_force() {
        // Σ_{j ≥ 1000} (j+1)^{-0.7} (j+6)^{-0.6}, brute force to 10^7 plus crude remainder
        let start = 1000.0_f64;
        let tail = power_product_tail(start, 1.0, -0.7, 6.0, -0.6);
        let mut brute = 0.0;
        let big = 10_000_000u64;
        for j in 1000..big {
            let j = j as f64;
            brute += (j + 1.0).powf(-0.7) * (j + 6.0).powf(-0.6);
        }
        brute += power_product_tail(big as f64, 1.0, -0.7, 6.0, -0.6);
        assert_relative_eq!(tail, brute, max_relative = 1e-10);
        // zeta(1.3) tail consistency: Σ_{j≥1} j^{-1.3} from j = 1 with a = b = 0
        let z = power_product_tail(50.0, 0.0, -0.65, 0.0, -0.65)
            + (1..50).map(|j| (j as f64).powf(-1.3)).sum::<f64>();
        assert_relative_eq!(z, 3.931_949_211_809_54, max_relative = 1e-9);
    }
}
