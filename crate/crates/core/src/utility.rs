//! Exponential utilities and the weighted multi-attribute combiner.
//!
//! A utility over attribute value `v` is `phi(v) = sigma - tau * exp(-v / r)`
//! with `sigma` and `tau` chosen so that `phi(l_u) = 0` and `phi(h_u) = 1`.
//! Values are clamped to `[l_u, h_u]` first by default, so utilities stay in
//! `[0, 1]` instead of approaching the asymptote `sigma > 1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Constant-current discharge rate of the reference fleet, in C.
pub const DEFAULT_DISCHARGE_RATE_C: f64 = 4.0;

/// Tolerance on the sum of attribute weights.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("upper bound {h_u} must exceed lower bound {l_u}")]
    DegenerateBounds { l_u: f64, h_u: f64 },
    #[error("risk tolerance must be positive, got {0}")]
    NonPositiveRisk(f64),
    #[error("{specs} attribute specs but {values} values")]
    LengthMismatch { specs: usize, values: usize },
    #[error("attribute weights must be non-negative and sum to 1, got sum {0}")]
    BadWeights(f64),
    #[error("trajectory covers {have} cycles, need {need}")]
    IncompleteTrajectory { have: usize, need: usize },
    #[error("discharge rate must be positive, got {0}")]
    NonPositiveRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpUtility {
    pub l_u: f64,
    pub h_u: f64,
    pub r: f64,
    pub sigma_coef: f64,
    pub tau_coef: f64,
    pub clamp: bool,
}

/// Builds the exponential utility that maps `[l_u, h_u]` onto `[0, 1]` with
/// risk tolerance `r`.
pub fn make_exp_utility(l_u: f64, h_u: f64, r: f64) -> Result<ExpUtility, UtilityError> {
    if !(l_u.is_finite() && h_u.is_finite() && h_u > l_u) {
        return Err(UtilityError::DegenerateBounds { l_u, h_u });
    }
    if !(r.is_finite() && r > 0.0) {
        return Err(UtilityError::NonPositiveRisk(r));
    }
    // Both exponentials are rescaled by exp(l_u / r); the ratios below are
    // unchanged, and tau picks the factor back up. This avoids underflow when
    // l_u / r is large (e.g. 0.21 / 0.015 = 14).
    let lower = 1.0;
    let upper = (-(h_u - l_u) / r).exp();
    let denom = lower - upper;
    Ok(ExpUtility {
        l_u,
        h_u,
        r,
        sigma_coef: lower / denom,
        tau_coef: (l_u / r).exp() / denom,
        clamp: true,
    })
}

impl ExpUtility {
    pub fn unclamped(mut self) -> Self {
        self.clamp = false;
        self
    }

    pub fn value(&self, v: f64) -> f64 {
        eval_utility(self, v)
    }
}

/// `sigma - tau * exp(-v / r)`, with `v` clamped to `[l_u, h_u]` when the
/// utility is clamped.
pub fn eval_utility(u: &ExpUtility, v: f64) -> f64 {
    if u.clamp {
        if v <= u.l_u {
            return 0.0;
        }
        if v >= u.h_u {
            return 1.0;
        }
    }
    // sigma - tau e^{-v/r}, written relative to l_u for precision:
    // tau e^{-v/r} = e^{-(v - l_u)/r} / denom, and sigma = 1 / denom.
    let denom = 1.0 - (-(u.h_u - u.l_u) / u.r).exp();
    (1.0 - (-(v - u.l_u) / u.r).exp()) / denom
}

/// Which quantity an attribute measures at a candidate retirement cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Extractor {
    /// Cumulative discharge throughput in ampere-hours.
    #[serde(rename = "total_ah", alias = "TotalAh")]
    TotalAh,
    /// Full-discharge duration in hours at the operating C-rate.
    #[serde(rename = "mtbc", alias = "MeanTimeBetweenCharges")]
    MeanTimeBetweenCharges,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeSpec {
    pub name: String,
    pub utility: ExpUtility,
    pub extractor: Extractor,
    pub weight: f64,
}

impl AttributeSpec {
    pub fn new(
        name: impl Into<String>,
        extractor: Extractor,
        l_u: f64,
        h_u: f64,
        r: f64,
        weight: f64,
    ) -> Result<Self, UtilityError> {
        Ok(Self {
            name: name.into(),
            utility: make_exp_utility(l_u, h_u, r)?,
            extractor,
            weight,
        })
    }
}

/// The two-attribute set of the reference fleet: total Ah on `[300, 1000]`
/// with `r = 200`, and MTBC on `[0.21, 0.25]` h with `r = 0.015`, equally
/// weighted.
pub fn reference_attributes() -> Vec<AttributeSpec> {
    vec![
        AttributeSpec::new("total_ah", Extractor::TotalAh, 300.0, 1000.0, 200.0, 0.5)
            .expect("valid"),
        AttributeSpec::new("mtbc", Extractor::MeanTimeBetweenCharges, 0.21, 0.25, 0.015, 0.5)
            .expect("valid"),
    ]
}

/// One entry of the `{name, extractor, l_u, h_u, r, weight}` config list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeConfig {
    pub name: String,
    pub extractor: Extractor,
    pub l_u: f64,
    pub h_u: f64,
    pub r: f64,
    pub weight: f64,
}

impl AttributeConfig {
    pub fn build(&self) -> Result<AttributeSpec, UtilityError> {
        AttributeSpec::new(self.name.clone(), self.extractor, self.l_u, self.h_u, self.r, self.weight)
    }
}

impl From<&AttributeSpec> for AttributeConfig {
    fn from(spec: &AttributeSpec) -> Self {
        Self {
            name: spec.name.clone(),
            extractor: spec.extractor,
            l_u: spec.utility.l_u,
            h_u: spec.utility.h_u,
            r: spec.utility.r,
            weight: spec.weight,
        }
    }
}

pub fn validate_weights(specs: &[AttributeSpec]) -> Result<(), UtilityError> {
    let sum: f64 = specs.iter().map(|s| s.weight).sum();
    if specs.iter().any(|s| !(s.weight.is_finite() && s.weight >= 0.0))
        || (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE
    {
        return Err(UtilityError::BadWeights(sum));
    }
    Ok(())
}

/// Rescales weights to sum to one.
pub fn normalize_weights(specs: &mut [AttributeSpec]) -> Result<(), UtilityError> {
    let sum: f64 = specs.iter().map(|s| s.weight).sum();
    if !(sum > 0.0 && sum.is_finite()) || specs.iter().any(|s| s.weight < 0.0) {
        return Err(UtilityError::BadWeights(sum));
    }
    for s in specs.iter_mut() {
        s.weight /= sum;
    }
    Ok(())
}

/// Cumulative discharge throughput `sum_{k=1..x_c} q(k) * q0_ah`.
///
/// `q_by_cycle[i]` is the normalized capacity at cycle `i + 1`.
pub fn total_ah(q_by_cycle: &[f64], q0_ah: f64, x_c: usize) -> Result<f64, UtilityError> {
    if q_by_cycle.len() < x_c {
        return Err(UtilityError::IncompleteTrajectory {
            have: q_by_cycle.len(),
            need: x_c,
        });
    }
    Ok(q_by_cycle[..x_c].iter().sum::<f64>() * q0_ah)
}

/// Mean time between charges: full-depth discharge duration in hours at
/// `discharge_rate_c`, i.e. `q / rate`.
pub fn mtbc(q_at_xc: f64, discharge_rate_c: f64) -> Result<f64, UtilityError> {
    if !(discharge_rate_c.is_finite() && discharge_rate_c > 0.0) {
        return Err(UtilityError::NonPositiveRate(discharge_rate_c));
    }
    Ok(q_at_xc / discharge_rate_c)
}

/// Per-attribute utilities for `values`.
pub fn attribute_utilities(
    specs: &[AttributeSpec],
    values: &[f64],
) -> Result<Vec<f64>, UtilityError> {
    if specs.len() != values.len() {
        return Err(UtilityError::LengthMismatch {
            specs: specs.len(),
            values: values.len(),
        });
    }
    Ok(specs
        .iter()
        .zip(values)
        .map(|(s, &v)| eval_utility(&s.utility, v))
        .collect())
}

/// Weighted sum of attribute utilities. Equal weights `1/n` give the plain
/// average.
pub fn combined_utility(specs: &[AttributeSpec], values: &[f64]) -> Result<f64, UtilityError> {
    validate_weights(specs)?;
    let phis = attribute_utilities(specs, values)?;
    Ok(specs.iter().zip(&phis).map(|(s, phi)| s.weight * phi).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Coefficients straight from their definition, as an independent check.
    fn textbook(l: f64, h: f64, r: f64) -> (f64, f64) {
        let el = (-l / r).exp();
        let eh = (-h / r).exp();
        (el / (el - eh), 1.0 / (el - eh))
    }

    #[test]
    fn reference_constants() {
        let ah = make_exp_utility(300.0, 1000.0, 200.0).unwrap();
        assert!((ah.sigma_coef - 1.0311).abs() < 5e-4);
        assert!((ah.tau_coef - 4.6212).abs() < 5e-4);
        let m = make_exp_utility(0.21, 0.25, 0.015).unwrap();
        assert!((m.sigma_coef - 1.0746).abs() < 5e-4);
        assert!((m.tau_coef / 1.292_405e6 - 1.0).abs() < 1e-3, "tau {}", m.tau_coef);
    }

    #[test]
    fn reference_evaluations() {
        let ah = make_exp_utility(300.0, 1000.0, 200.0).unwrap();
        let direct = 1.0311 - 4.6212 * (-650.0f64 / 200.0).exp();
        assert!((ah.value(650.0) - direct).abs() < 1e-3);
        assert!((ah.value(650.0) - 0.852).abs() < 1e-3);
        assert_eq!(ah.value(2000.0), 1.0);
        assert_eq!(ah.value(100.0), 0.0);
        let m = make_exp_utility(0.21, 0.25, 0.015).unwrap();
        assert!((m.value(0.23) - 0.791).abs() < 1e-3, "{}", m.value(0.23));
    }

    #[test]
    fn unclamped_exceeds_one() {
        let ah = make_exp_utility(300.0, 1000.0, 200.0).unwrap().unclamped();
        assert!(ah.value(5000.0) > 1.0);
        assert!(ah.value(5000.0) < ah.sigma_coef + 1e-12);
        assert!(ah.value(0.0) < 0.0);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(
            make_exp_utility(1.0, 1.0, 1.0),
            Err(UtilityError::DegenerateBounds { l_u: 1.0, h_u: 1.0 })
        );
        assert_eq!(make_exp_utility(0.0, 1.0, 0.0), Err(UtilityError::NonPositiveRisk(0.0)));
    }

    #[test]
    fn total_ah_examples() {
        assert!((total_ah(&[1.0; 100], 1.1, 100).unwrap() - 110.0).abs() < 1e-9);
        let ah = total_ah(&[0.95; 750], 1.1, 750).unwrap();
        assert!((ah - 783.75).abs() < 1e-9);
        assert!((300.0..=1000.0).contains(&ah));
        assert_eq!(total_ah(&[], 1.1, 0).unwrap(), 0.0);
        assert_eq!(
            total_ah(&[1.0; 10], 1.1, 11),
            Err(UtilityError::IncompleteTrajectory { have: 10, need: 11 })
        );
    }

    #[test]
    fn mtbc_examples() {
        assert_eq!(mtbc(1.0, 4.0).unwrap(), 0.25);
        assert!((mtbc(0.84, 4.0).unwrap() - 0.21).abs() < 1e-15);
        assert_eq!(mtbc(0.5, 2.0).unwrap(), 0.25);
        assert!(mtbc(0.5, 0.0).is_err());
    }

    #[test]
    fn combined_examples() {
        let specs = reference_attributes();
        assert!((combined_utility(&specs, &[2000.0, 0.3]).unwrap() - 1.0).abs() < 1e-12);
        let phi1 = specs[0].utility.value(650.0);
        let phi2 = specs[1].utility.value(0.23);
        let lambda = combined_utility(&specs, &[650.0, 0.23]).unwrap();
        assert!((lambda - 0.5 * (phi1 + phi2)).abs() < 1e-15);
        assert!((lambda - 0.8215).abs() < 1e-3);

        let third = |name: &str| {
            AttributeSpec::new(name, Extractor::TotalAh, 0.0, 1.0, 1.0, 1.0 / 3.0).unwrap()
        };
        let three = vec![third("a"), third("b"), third("c")];
        assert!((combined_utility(&three, &[0.0, 0.0, 1.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(
            combined_utility(&three, &[0.0]),
            Err(UtilityError::LengthMismatch { specs: 3, values: 1 })
        );
    }

    #[test]
    fn weights_must_sum_to_one() {
        let mut specs = reference_attributes();
        specs[0].weight = 2.0;
        assert!(matches!(combined_utility(&specs, &[1.0, 1.0]), Err(UtilityError::BadWeights(_))));
        normalize_weights(&mut specs).unwrap();
        assert!((specs[0].weight - 0.8).abs() < 1e-15);
        assert!(combined_utility(&specs, &[500.0, 0.22]).is_ok());
    }

    #[test]
    fn config_roundtrip() {
        let json = r#"{"name":"mtbc","extractor":"mtbc","l_u":0.21,"h_u":0.25,"r":0.015,"weight":0.5}"#;
        let cfg: AttributeConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.extractor, Extractor::MeanTimeBetweenCharges);
        let spec = cfg.build().unwrap();
        assert_eq!(AttributeConfig::from(&spec), cfg);
    }

    #[test]
    fn boundaries_on_random_grid() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..100 {
            let l: f64 = rng.random_range(-100.0..100.0);
            let h = l + rng.random_range(0.01..200.0);
            let r: f64 = rng.random_range(0.01..500.0);
            let u = make_exp_utility(l, h, r).unwrap();
            let (sigma, tau) = textbook(l, h, r);
            if sigma.is_finite() && tau.is_finite() {
                assert!((u.sigma_coef / sigma - 1.0).abs() < 1e-9);
                assert!((u.tau_coef / tau - 1.0).abs() < 1e-9);
            }
            let raw = u.unclamped();
            assert!(raw.value(l).abs() < 1e-9);
            assert!((raw.value(h) - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn utility_is_monotone(l in -10.0f64..10.0, width in 0.01f64..20.0, r in 0.01f64..50.0,
                               mut xs in proptest::collection::vec(-50.0f64..50.0, 2..40)) {
            let u = make_exp_utility(l, l + width, r).unwrap();
            xs.sort_by(f64::total_cmp);
            for w in xs.windows(2) {
                prop_assert!(u.value(w[0]) <= u.value(w[1]));
                prop_assert!(u.unclamped().value(w[0]) <= u.unclamped().value(w[1]));
            }
        }

        #[test]
        fn combined_is_monotone_per_attribute(ah in 0.0f64..1500.0, m in 0.15f64..0.3, d in 0.0f64..100.0) {
            let specs = reference_attributes();
            let base = combined_utility(&specs, &[ah, m]).unwrap();
            prop_assert!(combined_utility(&specs, &[ah + d, m]).unwrap() >= base);
            prop_assert!(combined_utility(&specs, &[ah, m + d / 1000.0]).unwrap() >= base);
        }

        #[test]
        fn total_ah_is_additive(q in proptest::collection::vec(0.5f64..1.1, 1..200), split in 0usize..200) {
            let x = q.len();
            let y = split.min(x);
            let whole = total_ah(&q, 1.1, x).unwrap();
            let head = total_ah(&q, 1.1, y).unwrap();
            let tail: f64 = q[y..x].iter().sum::<f64>() * 1.1;
            prop_assert!((whole - (head + tail)).abs() < 1e-9);
        }
    }
}
