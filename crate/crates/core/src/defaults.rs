//! Versioned verification tolerances. A config may override any field.

use serde::{Deserialize, Serialize};

/// Bumped whenever a default value changes.
pub const TOLERANCES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub version: u32,
    /// Slack required in the memory-beta bound.
    pub beta_bound_slack: f64,
    /// Relative error of the kernel-norm quadrature.
    pub kernel_norm_rel: f64,
    /// Absolute error of exact algebraic identities.
    pub identity_abs: f64,
    /// Required drop of `𝔼‖Ξ_N D_{N,0}‖²` between the smallest and largest `N`.
    pub diagonal_drop: f64,
    /// Multiplier on the fitted diagonal envelope.
    pub diagonal_envelope: f64,
    /// Relative error of the Monte Carlo variance against Σ (first regime).
    pub clt_variance_rel: f64,
    /// Anderson–Darling significance level.
    pub normality_level: f64,
    /// Relative error of second moments against the Rosenblatt limit.
    pub rosenblatt_rel: f64,
    /// Skewness above which a sample counts as non-Gaussian.
    pub min_skewness: f64,
    /// Relative error of lifted second moments.
    pub lift_rel: f64,
    /// Direct vs lifted path agreement.
    pub lift_path_abs: f64,
    /// Relative size of the Σ series tail that triggers a warning.
    pub series_tail_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            version: TOLERANCES_VERSION,
            beta_bound_slack: 0.0,
            kernel_norm_rel: 1e-3,
            identity_abs: 1e-10,
            diagonal_drop: 2.0,
            diagonal_envelope: 10.0,
            clt_variance_rel: 0.10,
            normality_level: 0.01,
            rosenblatt_rel: 0.15,
            min_skewness: 0.5,
            lift_rel: 0.15,
            lift_path_abs: 1e-8,
            series_tail_rel: 1e-6,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_override() {
        let t: Tolerances = toml::from_str("lift_rel = 0.2").unwrap();
        assert_eq!(t.lift_rel, 0.2);
        assert_eq!(t.clt_variance_rel, Tolerances::default().clt_variance_rel);
        assert!(toml::from_str::<Tolerances>("bogus = 1").is_err());
    }
}
