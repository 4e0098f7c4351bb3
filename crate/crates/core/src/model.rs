//! Power-law capacity-fade model `Q_k = 1 - a k^b` and its Gaussian measurement
//! likelihood.

use std::f64::consts::{LN_10, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Median fleet parameters of the reference LFP training set.
pub const REFERENCE_LOG10_A: f64 = -15.77;
pub const REFERENCE_B: f64 = 5.45;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("fade coefficient is zero, capacity never reaches the threshold")]
    ZeroFadeCoefficient,
    #[error("invalid power-law parameters a={a}, b={b}")]
    InvalidParams { a: f64, b: f64 },
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
}

/// Power-law fade parameters. `a` is tiny in practice (order `1e-16`), so most
/// arithmetic happens in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    pub a: f64,
    pub b: f64,
}

impl PowerLawParams {
    pub fn new(a: f64, b: f64) -> Result<Self, ModelError> {
        if !(a.is_finite() && a >= 0.0 && b.is_finite() && b > 0.0) {
            return Err(ModelError::InvalidParams { a, b });
        }
        Ok(Self { a, b })
    }

    pub fn from_log10(log10_a: f64, b: f64) -> Result<Self, ModelError> {
        Self::new(10f64.powf(log10_a), b)
    }

    /// Fleet-median reference point, the default filter prior.
    pub fn reference() -> Self {
        Self::from_log10(REFERENCE_LOG10_A, REFERENCE_B).expect("reference parameters are valid")
    }

    pub fn log10_a(&self) -> f64 {
        self.a.log10()
    }

    /// Normalized capacity at (real-valued) cycle `k`.
    pub fn capacity(&self, k: f64) -> f64 {
        capacity(*self, k)
    }
}

/// `1 - a k^b`, evaluated as `1 - exp(ln a + b ln k)`. Not clamped: the value
/// goes negative far past end of life.
pub fn capacity(params: PowerLawParams, k: f64) -> f64 {
    if params.a == 0.0 {
        return 1.0;
    }
    1.0 - (params.a.ln() + params.b * k.ln()).exp()
}

/// Capacity for a parameter pair stored as `(log10 a, b)`.
#[inline]
pub fn capacity_log10(log10_a: f64, b: f64, k: f64) -> f64 {
    1.0 - (log10_a * LN_10 + b * k.ln()).exp()
}

/// Real-valued cycle at which capacity falls to `threshold`:
/// `((1 - threshold) / a)^(1/b)`.
pub fn analytic_eol(params: PowerLawParams, threshold: f64) -> Result<f64, ModelError> {
    if params.a == 0.0 {
        return Err(ModelError::ZeroFadeCoefficient);
    }
    Ok(eol_log10(params.a.log10(), params.b, threshold))
}

#[inline]
pub fn eol_log10(log10_a: f64, b: f64, threshold: f64) -> f64 {
    (((1.0 - threshold).ln() - log10_a * LN_10) / b).exp()
}

/// Gaussian measurement noise and random-walk process noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Std of the normalized-capacity measurement.
    pub sigma_meas: f64,
    /// Per-cycle random-walk std on `log10 a`.
    pub sigma_log_a: f64,
    /// Per-cycle random-walk std on `b`.
    pub sigma_b: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            sigma_meas: 0.01,
            sigma_log_a: 0.05,
            sigma_b: 0.05,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("sigma_meas", self.sigma_meas),
            ("sigma_log_a", self.sigma_log_a),
            ("sigma_b", self.sigma_b),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidNoise(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Log of the Gaussian density of `q_obs` around the model capacity at `k`.
pub fn log_likelihood(params: PowerLawParams, k: f64, q_obs: f64, sigma_meas: f64) -> f64 {
    gaussian_log_density(q_obs - capacity(params, k), sigma_meas)
}

#[inline]
pub fn gaussian_log_density(residual: f64, sigma: f64) -> f64 {
    let z = residual / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(a: f64, b: f64) -> PowerLawParams {
        PowerLawParams::new(a, b).unwrap()
    }

    #[test]
    fn capacity_examples() {
        assert_eq!(capacity(p(0.0, 5.45), 1e6), 1.0);
        assert!((capacity(p(1e-3, 1.0), 100.0) - 0.9).abs() < 1e-12);
        let median = PowerLawParams::reference();
        assert!((capacity(median, 689.0) - 0.5).abs() < 0.005);
    }

    #[test]
    fn eol_examples() {
        assert!((analytic_eol(p(1e-3, 1.0), 0.9).unwrap() - 100.0).abs() < 1e-9);
        let oracle = 10f64.powf((15.77 + 0.5f64.log10()) / 5.45);
        let eol = analytic_eol(PowerLawParams::reference(), 0.5).unwrap();
        assert!((eol - oracle).abs() < 1e-9);
        assert!((eol - 689.0).abs() < 1.0);
        assert_eq!(analytic_eol(p(0.0, 2.0), 0.5), Err(ModelError::ZeroFadeCoefficient));
    }

    #[test]
    fn likelihood_examples() {
        let params = p(1e-3, 1.0);
        let peak = (1.0 / (0.01 * (2.0 * PI).sqrt())).ln();
        let at = capacity(params, 100.0);
        assert!((log_likelihood(params, 100.0, at, 0.01) - peak).abs() < 1e-12);
        assert!((log_likelihood(params, 100.0, at + 0.01, 0.01) - (peak - 0.5)).abs() < 1e-9);
        assert!((log_likelihood(params, 100.0, at - 0.03, 0.01) - (peak - 4.5)).abs() < 1e-9);
    }

    #[test]
    fn likelihood_integrates_to_one() {
        for (a, b, k, sigma) in [(1e-10, 3.0, 200.0, 0.01), (1e-16, 5.5, 700.0, 0.02), (1e-4, 1.2, 50.0, 0.005)] {
            let params = p(a, b);
            let mean = capacity(params, k);
            let (lo, hi) = (mean - 12.0 * sigma, mean + 12.0 * sigma);
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            // composite Simpson
            let mut sum = 0.0;
            for i in 0..=n {
                let x = lo + h * i as f64;
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * log_likelihood(params, k, x, sigma).exp();
            }
            let integral = sum * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-9, "integral {integral}");
        }
    }

    #[test]
    fn invalid_params() {
        assert!(PowerLawParams::new(-1.0, 2.0).is_err());
        assert!(PowerLawParams::new(1e-3, 0.0).is_err());
        assert!(PowerLawParams::new(f64::NAN, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn log_space_matches_direct(log10_a in -20.0f64..-3.0, b in 0.5f64..8.0, k in 1u32..5000) {
            let params = PowerLawParams::from_log10(log10_a, b).unwrap();
            let k = f64::from(k);
            let direct = 1.0 - params.a * k.powf(b);
            let logspace = capacity(params, k);
            prop_assert!((logspace - direct).abs() <= 1e-12 * direct.abs().max(1.0),
                "{logspace} vs {direct}");
        }

        #[test]
        fn capacity_decreasing(log10_a in -20.0f64..-3.0, b in 0.5f64..8.0, k in 1u32..5000) {
            let params = PowerLawParams::from_log10(log10_a, b).unwrap();
            let k = f64::from(k);
            prop_assert!(capacity(params, k + 1.0) <= capacity(params, k));
            // the fade term itself is strictly increasing even when 1 - fade rounds to 1
            let fade = |k: f64| (params.a.ln() + b * k.ln()).exp();
            prop_assert!(fade(k + 1.0) > fade(k));
        }

        #[test]
        fn eol_round_trip_within_one_cycle(log10_a in -18.0f64..-4.0, b in 0.5f64..8.0, t in 0.3f64..0.95) {
            let params = PowerLawParams::from_log10(log10_a, b).unwrap();
            let eol = analytic_eol(params, t).unwrap();
            prop_assume!(eol > 1.0 && eol < 1e7);
            let fade_step = (capacity(params, eol) - capacity(params, eol + 1.0)).abs()
                .max((capacity(params, eol - 1.0) - capacity(params, eol)).abs());
            let q = capacity(params, eol.round());
            prop_assert!((q - t).abs() <= fade_step + 1e-12);
        }
    }
}
