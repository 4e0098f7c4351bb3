//! Offline least-squares calibration of the power-law model on a training fleet.
//!
//! A fit starts from the closed-form log-linear solution
//! `ln(1 - q) = ln a + b ln k` over points with `q < 1 - epsilon`, then (by
//! default) polishes it with damped Gauss-Newton on the capacity-space mean
//! squared error. The log transform inflates noise wherever the fade is small
//! compared with the measurement noise, so the linear solve alone is only
//! trustworthy on clean data.
//!
//! Only measured points are used; synthetic extension points are ignored.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NormalizedTrace;
use crate::model::{capacity, PowerLawParams};
use crate::stats::{lower_median, lower_quantile, ols_line};

/// Percentile levels reported for fleet total-Ah throughput.
pub const AH_PERCENTILES: [u32; 3] = [5, 50, 95];

#[derive(Debug, Error, PartialEq)]
pub enum CalibError {
    #[error("cell {cell_id}: only {have} points below 1 - epsilon, need {need}")]
    InsufficientFade { cell_id: String, have: usize, need: usize },
    #[error("cell {cell_id}: fitted exponent {b} is not positive")]
    NonPositiveExponent { cell_id: String, b: f64 },
    #[error("no training cell could be fitted")]
    NoFitsSucceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Points with `q >= 1 - epsilon` are excluded from the log-linear solve.
    pub epsilon: f64,
    pub min_points: usize,
    /// Polish the log-linear solution on the capacity-space squared error.
    pub refine: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            min_points: 10,
            refine: true,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub params: PowerLawParams,
    pub log10_a: f64,
    pub b: f64,
    /// Root-mean-square error of the reconstructed capacity over the measured
    /// points.
    pub rmse: f64,
}

pub fn fit_power_law(trace: &NormalizedTrace) -> Result<PowerLawFit, CalibError> {
    fit_power_law_with(trace, &FitOptions::default())
}

pub fn fit_power_law_with(
    trace: &NormalizedTrace,
    options: &FitOptions,
) -> Result<PowerLawFit, CalibError> {
    let cycles = trace.measured_cycles();
    let q = trace.measured_q();
    let (x, y): (Vec<f64>, Vec<f64>) = cycles
        .iter()
        .zip(q)
        .filter(|(_, &q)| q < 1.0 - options.epsilon)
        .map(|(&k, &q)| (f64::from(k).ln(), (1.0 - q).ln()))
        .unzip();
    let need = options.min_points.max(2);
    let insufficient = || CalibError::InsufficientFade {
        cell_id: trace.cell_id.clone(),
        have: x.len(),
        need,
    };
    if x.len() < need {
        return Err(insufficient());
    }
    let line = ols_line(&x, &y).ok_or_else(insufficient)?;
    let (mut ln_a, mut b) = (line.intercept, line.slope);

    let k: Vec<f64> = cycles.iter().map(|&c| f64::from(c)).collect();
    if options.refine {
        (ln_a, b) = refine_least_squares(&k, q, ln_a, b, options.max_iterations);
    }
    if !(b > 0.0 && b.is_finite() && ln_a.is_finite()) {
        return Err(CalibError::NonPositiveExponent {
            cell_id: trace.cell_id.clone(),
            b,
        });
    }
    let params = PowerLawParams { a: ln_a.exp(), b };
    let sse: f64 = k
        .iter()
        .zip(q)
        .map(|(&k, &q)| (q - capacity(params, k)).powi(2))
        .sum();
    Ok(PowerLawFit {
        params,
        log10_a: ln_a / std::f64::consts::LN_10,
        b,
        rmse: (sse / k.len() as f64).sqrt(),
    })
}

fn sse(k: &[f64], q: &[f64], ln_a: f64, b: f64) -> f64 {
    k.iter()
        .zip(q)
        .map(|(&k, &q)| {
            let r = q - 1.0 + (ln_a + b * k.ln()).exp();
            r * r
        })
        .sum()
}

/// Levenberg-damped Gauss-Newton on `sum (q - 1 + exp(ln_a + b ln k))^2`.
fn refine_least_squares(k: &[f64], q: &[f64], ln_a: f64, b: f64, max_iter: usize) -> (f64, f64) {
    let (mut ln_a, mut b) = (ln_a, b);
    let mut cost = sse(k, q, ln_a, b);
    if !cost.is_finite() {
        return (ln_a, b);
    }
    let mut lambda = 1e-6;
    for _ in 0..max_iter {
        // J^T J and J^T r with residual r = q - 1 + e, J = [e, e ln k].
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&k, &q) in k.iter().zip(q) {
            let lk = k.ln();
            let e = (ln_a + b * lk).exp();
            let r = q - 1.0 + e;
            jaa += e * e;
            jab += e * e * lk;
            jbb += e * e * lk * lk;
            ga += e * r;
            gb += e * r * lk;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (a11, a22) = (jaa * (1.0 + lambda), jbb * (1.0 + lambda));
            let det = a11 * a22 - jab * jab;
            if !(det.is_finite() && det > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let da = -(a22 * ga - jab * gb) / det;
            let db = -(a11 * gb - jab * ga) / det;
            let trial = sse(k, q, ln_a + da, b + db);
            if trial.is_finite() && trial <= cost {
                let converged = (cost - trial) <= 1e-15 * cost.max(f64::MIN_POSITIVE)
                    || (da.abs() < 1e-14 * ln_a.abs().max(1.0) && db.abs() < 1e-14 * b.abs().max(1.0));
                ln_a += da;
                b += db;
                cost = trial;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (ln_a, b)
}

/// Per-cell entry of the fleet fit export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub cell_id: String,
    pub log10_a: f64,
    pub b: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedFit {
    pub cell_id: String,
    pub reason: String,
}

/// Fleet calibration result; serializes to
/// `{median_log10_a, median_b, ah_percentiles, per_cell, failed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetFit {
    pub median_log10_a: f64,
    pub median_b: f64,
    /// Percentile (as a string key, e.g. `"95"`) to total measured Ah.
    pub ah_percentiles: BTreeMap<String, f64>,
    pub per_cell: Vec<CellFit>,
    #[serde(default)]
    pub failed: Vec<FailedFit>,
}

impl FleetFit {
    pub fn ah_percentile(&self, pct: u32) -> Option<f64> {
        self.ah_percentiles.get(&pct.to_string()).copied()
    }
}

/// Cumulative measured discharge throughput of a trace, in Ah.
pub fn measured_total_ah(trace: &NormalizedTrace) -> f64 {
    trace.measured_q().iter().sum::<f64>() * trace.q0_ah
}

/// Fits every training cell, then takes lower medians of the successful fits.
/// Total-Ah percentiles cover every cell's measured life, fitted or not.
pub fn fleet_calibrate(
    train: &[NormalizedTrace],
    options: &FitOptions,
) -> Result<FleetFit, CalibError> {
    let mut results: Vec<(String, Result<PowerLawFit, CalibError>)> = train
        .par_iter()
        .map(|t| (t.cell_id.clone(), fit_power_law_with(t, options)))
        .collect();
    results.sort_by(|x, y| x.0.cmp(&y.0));

    let mut per_cell = Vec::new();
    let mut failed = Vec::new();
    for (cell_id, result) in results {
        match result {
            Ok(fit) => per_cell.push(CellFit {
                cell_id,
                log10_a: fit.log10_a,
                b: fit.b,
                rmse: fit.rmse,
            }),
            Err(e) => failed.push(FailedFit {
                cell_id,
                reason: e.to_string(),
            }),
        }
    }
    if per_cell.is_empty() {
        return Err(CalibError::NoFitsSucceeded);
    }
    let log10_a: Vec<f64> = per_cell.iter().map(|c| c.log10_a).collect();
    let b: Vec<f64> = per_cell.iter().map(|c| c.b).collect();

    let mut totals: Vec<f64> = train.iter().map(measured_total_ah).collect();
    totals.sort_by(f64::total_cmp);
    let ah_percentiles = AH_PERCENTILES
        .iter()
        .map(|&p| {
            let v = lower_quantile(&totals, f64::from(p) / 100.0).expect("non-empty fleet");
            (p.to_string(), v)
        })
        .collect();

    Ok(FleetFit {
        median_log10_a: lower_median(&log10_a).expect("non-empty"),
        median_b: lower_median(&b).expect("non-empty"),
        ah_percentiles,
        per_cell,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(id: &str, log10_a: f64, b: f64, n: u32, noise: f64, seed: u64) -> NormalizedTrace {
        let params = PowerLawParams::from_log10(log10_a, b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
        let cycles: Vec<u32> = (1..=n).collect();
        let q = cycles
            .iter()
            .map(|&k| {
                let e = if noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                capacity(params, f64::from(k)) + e
            })
            .collect();
        NormalizedTrace {
            cell_id: id.into(),
            q0_ah: 1.1,
            extrapolated_from: None,
            cycles,
            q,
        }
    }

    #[test]
    fn noise_free_fit_is_exact() {
        let t = synthetic("c", -12.0, 4.0, 800, 0.0, 0);
        for refine in [false, true] {
            let fit = fit_power_law_with(&t, &FitOptions { refine, ..FitOptions::default() }).unwrap();
            assert!((fit.log10_a + 12.0).abs() < 1e-9, "{}", fit.log10_a);
            assert!((fit.b - 4.0).abs() < 1e-9);
            assert!(fit.rmse < 1e-12);
        }
    }

    #[test]
    fn flat_trace_has_insufficient_fade() {
        let t = NormalizedTrace {
            cell_id: "flat".into(),
            q0_ah: 1.1,
            extrapolated_from: None,
            cycles: (1..=100).collect(),
            q: vec![1.0; 100],
        };
        assert!(matches!(fit_power_law(&t), Err(CalibError::InsufficientFade { have: 0, .. })));
    }

    #[test]
    fn noisy_fit_recovers_exponent() {
        for seed in 0..50 {
            let t = synthetic("c", -12.0, 4.0, 800, 0.01, seed);
            let fit = fit_power_law(&t).unwrap();
            assert!((fit.b - 4.0).abs() <= 0.2, "seed {seed}: b = {}", fit.b);
        }
    }

    #[test]
    fn halving_epsilon_is_harmless_on_clean_data() {
        let t = synthetic("c", -15.77, 5.45, 700, 0.0, 0);
        let a = fit_power_law_with(&t, &FitOptions { refine: false, ..FitOptions::default() }).unwrap();
        let b = fit_power_law_with(
            &t,
            &FitOptions { refine: false, epsilon: 5e-5, ..FitOptions::default() },
        )
        .unwrap();
        assert!((a.b - b.b).abs() < 1e-9);
        assert!((a.log10_a - b.log10_a).abs() < 1e-9);
        // every point qualifies once epsilon is tiny: identical inputs, identical fits
        let c = fit_power_law_with(&t, &FitOptions { epsilon: 1e-300, ..FitOptions::default() }).unwrap();
        let d = fit_power_law_with(&t, &FitOptions { epsilon: 5e-301, ..FitOptions::default() }).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn extrapolated_points_are_ignored() {
        let mut t = synthetic("c", -12.0, 4.0, 800, 0.0, 0);
        let clean = fit_power_law(&t).unwrap();
        t.extrapolated_from = Some(801);
        t.cycles.extend(801..=900);
        t.q.extend(std::iter::repeat_n(0.3, 100));
        assert_eq!(fit_power_law(&t).unwrap(), clean);
    }

    #[test]
    fn fleet_medians() {
        let train = vec![
            synthetic("c3", -14.0, 6.0, 600, 0.0, 0),
            synthetic("c1", -10.0, 4.0, 600, 0.0, 0),
            synthetic("c2", -12.0, 5.0, 600, 0.0, 0),
        ];
        let fleet = fleet_calibrate(&train, &FitOptions::default()).unwrap();
        assert!((fleet.median_b - 5.0).abs() < 1e-9);
        assert!((fleet.median_log10_a + 12.0).abs() < 1e-9);
        assert_eq!(
            fleet.per_cell.iter().map(|c| c.cell_id.as_str()).collect::<Vec<_>>(),
            ["c1", "c2", "c3"]
        );
        let mut reversed = train.clone();
        reversed.reverse();
        assert_eq!(fleet_calibrate(&reversed, &FitOptions::default()).unwrap(), fleet);
        assert!(fleet.ah_percentile(5).unwrap() <= fleet.ah_percentile(95).unwrap());
    }

    #[test]
    fn failed_fits_are_recorded() {
        let flat = NormalizedTrace {
            cell_id: "flat".into(),
            q0_ah: 1.1,
            extrapolated_from: None,
            cycles: (1..=20).collect(),
            q: vec![1.0; 20],
        };
        let fleet =
            fleet_calibrate(&[flat.clone(), synthetic("ok", -12.0, 4.0, 500, 0.0, 0)], &FitOptions::default())
                .unwrap();
        assert_eq!(fleet.failed.len(), 1);
        assert_eq!(fleet.per_cell.len(), 1);
        assert_eq!(fleet_calibrate(&[flat], &FitOptions::default()), Err(CalibError::NoFitsSucceeded));
    }

    #[test]
    fn fleet_fit_json_shape() {
        let fleet = fleet_calibrate(&[synthetic("ok", -12.0, 4.0, 500, 0.0, 0)], &FitOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&fleet).unwrap();
        for key in ["median_log10_a", "median_b", "ah_percentiles", "per_cell"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert!(v["ah_percentiles"].get("95").is_some());
    }
}
