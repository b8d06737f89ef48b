//! Summary statistics for Monte Carlo output.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::scalar::pairwise_sum_by;

/// A statistic with its standard error and the replication count behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub replications: usize,
}

/// First four moments of a scalar sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Estimate,
    /// Unbiased variance.
    pub variance: Estimate,
    /// `m₃ / m₂^{3/2}`.
    pub skewness: Estimate,
    /// `m₄ / m₂² − 3`.
    pub excess_kurtosis: Estimate,
    /// Raw second moment `𝔼 x²`.
    pub second_moment: Estimate,
}

/// Moments of `xs`, summed in index order. Standard errors: `√(s²/n)` for the
/// mean, `√((m₄ − m₂²)/n)` for the variance and second moment, and the
/// normal-theory formulas for skewness and kurtosis.
pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len();
    let nf = n as f64;
    let est = |value: f64, std_error: f64| Estimate { value, std_error, replications: n };
    if n == 0 {
        let nan = est(f64::NAN, f64::NAN);
        return Moments { mean: nan, variance: nan, skewness: nan, excess_kurtosis: nan, second_moment: nan };
    }
    let mean = pairwise_sum_by(n, |i| xs[i]) / nf;
    let central = |p: i32| pairwise_sum_by(n, |i| (xs[i] - mean).powi(p)) / nf;
    let (m2, m3, m4) = (central(2), central(3), central(4));
    let raw2 = pairwise_sum_by(n, |i| xs[i] * xs[i]) / nf;
    let raw4 = pairwise_sum_by(n, |i| xs[i].powi(4)) / nf;
    let var = if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 };
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    let se_skew = if n > 2 { (6.0 * nf * (nf - 1.0) / ((nf - 2.0) * (nf + 1.0) * (nf + 3.0))).sqrt() } else { f64::NAN };
    let se_kurt = if n > 3 {
        2.0 * se_skew * ((nf * nf - 1.0) / ((nf - 3.0) * (nf + 5.0))).sqrt()
    } else {
        f64::NAN
    };
    Moments {
        mean: est(mean, (var / nf).sqrt()),
        variance: est(var, ((m4 - m2 * m2).max(0.0) / nf).sqrt()),
        skewness: est(skew, se_skew),
        excess_kurtosis: est(kurt, se_kurt),
        second_moment: est(raw2, ((raw4 - raw2 * raw2).max(0.0) / nf).sqrt()),
    }
}

/// Anderson–Darling test of normality with estimated mean and variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    pub statistic: f64,
    /// `A²(1 + 0.75/n + 2.25/n²)`.
    pub adjusted: f64,
    pub p_value: f64,
}

/// `None` when fewer than 8 values or the sample has no spread.
pub fn anderson_darling(xs: &[f64]) -> Option<AndersonDarling> {
    let n = xs.len();
    if n < 8 || xs.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let mean = pairwise_sum_by(n, |i| sorted[i]) / nf;
    let sd = (pairwise_sum_by(n, |i| (sorted[i] - mean).powi(2)) / (nf - 1.0)).sqrt();
    if !(sd > 1e-300) || sorted[n - 1] == sorted[0] {
        return None;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let z: Vec<f64> = sorted.iter().map(|x| (x - mean) / sd).collect();
    let s = pairwise_sum_by(n, |i| {
        let lo = normal.cdf(z[i]).max(f64::MIN_POSITIVE).ln();
        let hi = normal.cdf(-z[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
        (2.0 * (i as f64) + 1.0) * (lo + hi)
    });
    let a2 = -nf - s / nf;
    let aa = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if aa < 0.2 {
        1.0 - (-13.436 + 101.14 * aa - 223.73 * aa * aa).exp()
    } else if aa < 0.34 {
        1.0 - (-8.318 + 42.796 * aa - 59.938 * aa * aa).exp()
    } else if aa < 0.6 {
        (0.9177 - 4.279 * aa - 1.38 * aa * aa).exp()
    } else if aa < 13.0 {
        (1.2937 - 5.709 * aa + 0.0186 * aa * aa).exp()
    } else {
        0.0
    };
    Some(AndersonDarling { statistic: a2, adjusted: aa, p_value: p.clamp(0.0, 1.0) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn moments_of_small_sample() {
        let m = moments(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert_relative_eq!(m.mean.value, 4.0);
        assert_relative_eq!(m.variance.value, 12.5);
        // deviations −3, −2, −1, 0, 6
        let m2 = (9.0 + 4.0 + 1.0 + 0.0 + 36.0) / 5.0;
        let m3 = (-27.0 - 8.0 - 1.0 + 0.0 + 216.0) / 5.0;
        let m4 = (81.0 + 16.0 + 1.0 + 0.0 + 1296.0) / 5.0;
        assert_relative_eq!(m.skewness.value, m3 / f64::powf(m2, 1.5), max_relative = 1e-14);
        assert_relative_eq!(m.excess_kurtosis.value, m4 / (m2 * m2) - 3.0, max_relative = 1e-14);
        assert_relative_eq!(m.second_moment.value, (1.0 + 4.0 + 9.0 + 16.0 + 100.0) / 5.0);
        assert_eq!(m.mean.replications, 5);
    }

    #[test]
    fn zero_sample_has_zero_moments_and_no_test() {
        let m = moments(&[0.0; 50]);
        assert_eq!((m.mean.value, m.variance.value, m.skewness.value, m.excess_kurtosis.value), (0.0, 0.0, 0.0, 0.0));
        assert!(anderson_darling(&[0.0; 50]).is_none());
        assert!(anderson_darling(&[1.0, 2.0]).is_none());
    }

    #[test]
    fn reference_statistic() {
        // A² for this sample, computed independently with scipy.stats.anderson
        let xs = [-1.1, 0.2, -0.4, 0.0, -0.7, 1.2, -0.1, 0.8, 0.5, -0.9];
        let ad = anderson_darling(&xs).unwrap();
        assert_relative_eq!(ad.statistic, 0.131_479_452_106_150_42, max_relative = 1e-6);
        assert!(ad.p_value > 0.05);
        let skewed: Vec<f64> = (0..200).map(|i| ((i as f64 + 0.5) / 200.0).powi(6)).collect();
        assert!(anderson_darling(&skewed).unwrap().p_value < 1e-6);
    }

    #[test]
    fn normal_samples_calibrated() {
        let meta = 100;
        let mut passes = 0;
        let mut skew_ok = 0;
        for k in 0..meta {
            let mut rng = stream(11, Purpose::Test(1), k);
            let xs: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
            if anderson_darling(&xs).unwrap().p_value > 0.01 {
                passes += 1;
            }
            let m = moments(&xs);
            if m.skewness.value.abs() < 3.0 * m.skewness.std_error {
                skew_ok += 1;
            }
        }
        assert!(passes >= 95, "{passes}");
        assert!(skew_ok >= 95, "{skew_ok}");
    }

    #[test]
    fn exponential_rejected() {
        let mut rng = stream(3, Purpose::Test(2), 0);
        let xs: Vec<f64> = (0..2000).map(|_| -f64::ln(rng.gen::<f64>())).collect();
        assert!(anderson_darling(&xs).unwrap().p_value < 0.01);
        let m = moments(&xs);
        assert_relative_eq!(m.skewness.value, 2.0, max_relative = 0.3);
    }

    proptest! {
        #[test]
        fn affine_invariance(xs in proptest::collection::vec(-10.0f64..10.0, 10..60), a in 0.5f64..3.0, b in -5.0f64..5.0) {
            prop_assume!(xs.iter().any(|v| (v - xs[0]).abs() > 1e-3));
            let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let (mx, my) = (moments(&xs), moments(&ys));
            prop_assert!((mx.skewness.value - my.skewness.value).abs() < 1e-8);
            prop_assert!((mx.variance.value * a * a - my.variance.value).abs() < 1e-8 * my.variance.value.max(1.0));
            let (ax, ay) = (anderson_darling(&xs).unwrap(), anderson_darling(&ys).unwrap());
            prop_assert!((ax.statistic - ay.statistic).abs() < 1e-8);
        }
    }
}
