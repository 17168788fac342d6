//! zCDP and (ε, δ) accounting for linear Gaussian mechanisms.
//!
//! All parameters are functions of the cost matrix diagonal:
//! `ρ = c_max / 2`, personal `ρᵢ = cᵢ / 2`, and
//! `δ(ε) = Φ(√c/2 − ε/√c) − e^ε Φ(−√c/2 − ε/√c)`.

use libm::erfc;
use serde::{Deserialize, Serialize};

use super::{LinearGaussianMechanism, PrivacyCostMatrix};

/// Standard normal CDF, `½ erfc(−x/√2)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// δ at which a Gaussian mechanism with largest cost diagonal `c_max`
/// satisfies (ε, δ)-DP. Returns 0 when `c_max == 0`.
pub fn approx_dp_delta(c_max: f64, epsilon: f64) -> f64 {
    debug_assert!(c_max >= 0.0 && epsilon >= 0.0);
    if c_max <= 0.0 {
        return 0.0;
    }
    let s = c_max.sqrt();
    let a = s / 2.0 - epsilon / s;
    let b = -s / 2.0 - epsilon / s;
    let tail = normal_cdf(b);
    // e^ε Φ(b) in log space; Φ(b) may underflow long before e^ε overflows
    let second = if tail > 0.0 {
        (epsilon + tail.ln()).exp()
    } else {
        0.0
    };
    (normal_cdf(a) - second).clamp(0.0, 1.0 - f64::EPSILON)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyAccount {
    pub rho: f64,
    pub per_record_rho: Vec<f64>,
    /// `(ε, δ)` pairs at the requested ε values.
    pub epsilon_delta: Vec<(f64, f64)>,
}

impl PrivacyAccount {
    pub fn from_cost(cost: &PrivacyCostMatrix, epsilons: &[f64]) -> Self {
        let c_max = cost.c_max();
        PrivacyAccount {
            rho: c_max / 2.0,
            per_record_rho: cost.per_record_rho(),
            epsilon_delta: epsilons
                .iter()
                .map(|&e| (e, approx_dp_delta(c_max, e)))
                .collect(),
        }
    }

    pub fn of(mech: &LinearGaussianMechanism, epsilons: &[f64]) -> Self {
        Self::from_cost(&mech.cost_matrix(), epsilons)
    }

    /// Personalized δᵢ(ε) for record type `i`.
    pub fn personal_delta(&self, record: usize, epsilon: f64) -> Option<f64> {
        self.per_record_rho
            .get(record)
            .map(|&r| approx_dp_delta(2.0 * r, epsilon))
    }
}
