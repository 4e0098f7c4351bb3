//! RUL error trajectories and probabilistic calibration curves.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NormalizedTrace;
use crate::prognosis::{EolDistribution, RulPrediction};

/// Default expected-confidence grid.
pub const DEFAULT_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("cell {cell_id} never reaches capacity {threshold}")]
    NoTrueEol { cell_id: String, threshold: f64 },
    #[error("{distributions} predictive distributions but {observations} observations")]
    LengthMismatch { distributions: usize, observations: usize },
    #[error("confidence level {0} is outside (0, 1)")]
    InvalidLevel(f64),
    #[error("no observations to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RulErrorPoint {
    pub cycle: u32,
    pub true_rul: f64,
    pub predicted_rul: f64,
    /// `predicted - true`; negative means the cell was expected to die early.
    pub signed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RulErrorSeries {
    pub cell_id: String,
    pub true_eol: u32,
    pub points: Vec<RulErrorPoint>,
}

impl RulErrorSeries {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,true_rul,pred_rul,err\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                p.cycle, p.true_rul, p.predicted_rul, p.signed_error
            );
        }
        out
    }

    pub fn median_signed_error(&self) -> Option<f64> {
        let errors: Vec<f64> = self.points.iter().map(|p| p.signed_error).collect();
        crate::stats::lower_median(&errors)
    }
}

/// First cycle, measured or extrapolated, at which capacity is at or below
/// `threshold`.
pub fn true_eol(trace: &NormalizedTrace, threshold: f64) -> Option<u32> {
    trace
        .cycles
        .iter()
        .zip(&trace.q)
        .find(|(_, &q)| q <= threshold)
        .map(|(&c, _)| c)
}

/// Signed errors against the trace's true EOL. Predictions made after the
/// true EOL have no defined true RUL and are dropped.
pub fn rul_errors(
    trace: &NormalizedTrace,
    predictions: &[RulPrediction],
    eol_threshold: f64,
) -> Result<RulErrorSeries, EvalError> {
    let eol = true_eol(trace, eol_threshold).ok_or_else(|| EvalError::NoTrueEol {
        cell_id: trace.cell_id.clone(),
        threshold: eol_threshold,
    })?;
    let points = predictions
        .iter()
        .filter(|p| p.at_cycle <= eol)
        .map(|p| {
            let true_rul = f64::from(eol - p.at_cycle);
            RulErrorPoint {
                cycle: p.at_cycle,
                true_rul,
                predicted_rul: p.rul_median,
                signed_error: p.rul_median - true_rul,
            }
        })
        .collect();
    Ok(RulErrorSeries {
        cell_id: trace.cell_id.clone(),
        true_eol: eol,
        points,
    })
}

/// Anything that can invert its own CDF.
pub trait PredictiveDistribution {
    fn quantile(&self, level: f64) -> f64;

    /// Equal-tailed interval holding `confidence` of the mass.
    fn central_interval(&self, confidence: f64) -> (f64, f64) {
        (
            self.quantile((1.0 - confidence) / 2.0),
            self.quantile((1.0 + confidence) / 2.0),
        )
    }
}

impl PredictiveDistribution for EolDistribution {
    fn quantile(&self, level: f64) -> f64 {
        EolDistribution::quantile(self, level)
    }
}

impl<D: PredictiveDistribution + ?Sized> PredictiveDistribution for &D {
    fn quantile(&self, level: f64) -> f64 {
        (**self).quantile(level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub levels: Vec<f64>,
    pub observed: Vec<f64>,
    pub n_samples: usize,
    /// Mean `|observed - level|` over the grid.
    pub area_deviation: f64,
}

impl CalibrationCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,observed\n");
        for (l, o) in self.levels.iter().zip(&self.observed) {
            let _ = writeln!(out, "{l},{o}");
        }
        out
    }
}

/// Fraction of observations inside each central interval, bounds inclusive.
pub fn calibration_curve<D: PredictiveDistribution>(
    predictive: &[D],
    observations: &[f64],
    levels: &[f64],
) -> Result<CalibrationCurve, EvalError> {
    if predictive.len() != observations.len() {
        return Err(EvalError::LengthMismatch {
            distributions: predictive.len(),
            observations: observations.len(),
        });
    }
    if observations.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = levels.iter().find(|&&c| !(c > 0.0 && c < 1.0)) {
        return Err(EvalError::InvalidLevel(bad));
    }
    let n = observations.len();
    let observed: Vec<f64> = levels
        .iter()
        .map(|&c| {
            let hits = predictive
                .iter()
                .zip(observations)
                .filter(|(d, &y)| {
                    let (lo, hi) = d.central_interval(c);
                    lo <= y && y <= hi
                })
                .count();
            hits as f64 / n as f64
        })
        .collect();
    let area_deviation = if levels.is_empty() {
        0.0
    } else {
        levels
            .iter()
            .zip(&observed)
            .map(|(c, o)| (o - c).abs())
            .sum::<f64>()
            / levels.len() as f64
    };
    Ok(CalibrationCurve {
        levels: levels.to_vec(),
        observed,
        n_samples: n,
        area_deviation,
    })
}
