//! First-life retirement planning.
//!
//! Every integer cycle from the current one up to the first cycle where the
//! projected median capacity reaches the floor is a candidate. Each candidate
//! `x_c` is scored with the combined utility of its attributes, computed on a
//! hybrid trajectory: measured capacity for cycles before the current one, the
//! projected median from the current cycle on. Starting the projection at the
//! current cycle keeps single noisy measurements from creating a step between
//! the two halves, so the projected capacity seen by the candidates is
//! monotone. The optimum is the earliest cycle with the
//! highest score; the scan is exhaustive and assumes nothing about the shape of
//! the utility curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{NormalizedTrace, DEFAULT_TRIGGER_THRESHOLD};
use crate::filter::ParticleEnsemble;
use crate::prognosis::{project, CapacityProjection, PrognosisError, DEFAULT_EOL_THRESHOLD};
use crate::utility::{
    attribute_utilities, mtbc, validate_weights, AttributeSpec, Extractor, UtilityError,
    DEFAULT_DISCHARGE_RATE_C,
};

#[derive(Debug, Error, PartialEq)]
pub enum RetirementError {
    #[error("no candidate retirement cycles at or after cycle {current}")]
    EmptyCandidateSet { current: u32 },
    #[error("cycle {current}: capacity {q} is still above the trigger threshold {threshold}")]
    NotTriggered { current: u32, q: f64, threshold: f64 },
    #[error("cycle {0} has no measurement in the trace")]
    MissingMeasurement(u32),
    #[error("current cycle {current} precedes the projection start {from_cycle}")]
    BeforeProjection { current: u32, from_cycle: u32 },
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error(transparent)]
    Prognosis(#[from] PrognosisError),
}

/// Thresholds and operating conditions for [`optimize_retirement`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetirementOptions {
    /// Measured capacity at or below which optimization is allowed.
    pub trigger: f64,
    /// End-of-life threshold for the projection.
    pub eol_threshold: f64,
    /// Candidates stop at the first projected-median crossing of this floor.
    pub retire_floor: f64,
    pub discharge_rate_c: f64,
}

impl Default for RetirementOptions {
    fn default() -> Self {
        Self {
            trigger: DEFAULT_TRIGGER_THRESHOLD,
            eol_threshold: DEFAULT_EOL_THRESHOLD,
            retire_floor: DEFAULT_EOL_THRESHOLD,
            discharge_rate_c: DEFAULT_DISCHARGE_RATE_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub cycles: Vec<u32>,
    /// Set when the median never reached the floor and candidates stop at the
    /// projection horizon instead.
    pub capped: bool,
}

/// Cycles `current..=c_end`, where `c_end` is the first cycle at or after
/// `current` whose projected median is at or below `floor`.
///
/// Empty when the median had already crossed the floor before `current`, or
/// when `current` lies beyond the projection horizon.
pub fn candidate_cycles(
    current: u32,
    proj: &CapacityProjection,
    floor: f64,
) -> Result<CandidateSet, RetirementError> {
    if current < proj.from_cycle {
        return Err(RetirementError::BeforeProjection {
            current,
            from_cycle: proj.from_cycle,
        });
    }
    if current > proj.horizon_cycle {
        return Err(RetirementError::EmptyCandidateSet { current });
    }
    if current > proj.from_cycle && proj.median_at(current - 1).is_some_and(|q| q <= floor) {
        return Err(RetirementError::EmptyCandidateSet { current });
    }
    let crossing = (current..=proj.horizon_cycle)
        .find(|&k| proj.median_at(k).is_some_and(|q| q <= floor));
    let (end, capped) = match crossing {
        Some(k) => (k, false),
        None => (proj.horizon_cycle, true),
    };
    Ok(CandidateSet {
        cycles: (current..=end).collect(),
        capped,
    })
}

/// One evaluated candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityPoint {
    pub cycle: u32,
    pub utility: f64,
    /// Per-attribute utilities, in spec order.
    pub phi: Vec<f64>,
    /// Per-attribute raw values, in spec order.
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetirementDecision {
    pub current_cycle: u32,
    pub candidates: Vec<u32>,
    pub utility_curve: Vec<UtilityPoint>,
    pub optimal_cycle: u32,
    pub optimal_utility: f64,
    /// Column labels for the per-attribute entries.
    pub attribute_labels: Vec<String>,
    pub capped: bool,
}

/// JSON summary written next to the utility curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionSummary {
    pub cell_id: String,
    pub current_cycle: u32,
    pub optimal_cycle: u32,
    pub optimal_utility: f64,
    pub n_candidates: usize,
    pub candidates_capped_at_horizon: bool,
    pub utilities_clamped: bool,
}

impl RetirementDecision {
    pub fn summary(&self, cell_id: &str, utilities_clamped: bool) -> DecisionSummary {
        DecisionSummary {
            cell_id: cell_id.to_string(),
            current_cycle: self.current_cycle,
            optimal_cycle: self.optimal_cycle,
            optimal_utility: self.optimal_utility,
            n_candidates: self.candidates.len(),
            candidates_capped_at_horizon: self.capped,
            utilities_clamped,
        }
    }

    /// Plot feed: `cycle,utility,phi_ah,phi_mtbc,ah,mtbc` for the reference
    /// attribute pair.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,utility");
        for label in &self.attribute_labels {
            let _ = write!(out, ",phi_{label}");
        }
        for label in &self.attribute_labels {
            let _ = write!(out, ",{label}");
        }
        out.push('\n');
        for p in &self.utility_curve {
            let _ = write!(out, "{},{}", p.cycle, p.utility);
            for v in p.phi.iter().chain(&p.raw) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

fn extractor_label(extractor: Extractor) -> &'static str {
    match extractor {
        Extractor::TotalAh => "ah",
        Extractor::MeanTimeBetweenCharges => "mtbc",
    }
}

/// Short extractor names when they are unique, spec names otherwise.
pub fn attribute_labels(specs: &[AttributeSpec]) -> Vec<String> {
    specs
        .iter()
        .map(|s| {
            let duplicated = specs.iter().filter(|o| o.extractor == s.extractor).count() > 1;
            if duplicated {
                s.name.clone()
            } else {
                extractor_label(s.extractor).to_string()
            }
        })
        .collect()
}

/// Scores every candidate on a dense trajectory (`q_by_cycle[i]` is cycle
/// `i + 1`) and returns the earliest arg-max.
pub fn evaluate_candidates(
    q_by_cycle: &[f64],
    q0_ah: f64,
    current: u32,
    candidates: &[u32],
    specs: &[AttributeSpec],
    discharge_rate_c: f64,
) -> Result<RetirementDecision, RetirementError> {
    validate_weights(specs)?;
    let Some(&last) = candidates.last() else {
        return Err(RetirementError::EmptyCandidateSet { current });
    };
    if q_by_cycle.len() < last as usize {
        return Err(UtilityError::IncompleteTrajectory {
            have: q_by_cycle.len(),
            need: last as usize,
        }
        .into());
    }

    // Running prefix sums make each total-Ah lookup O(1).
    let mut prefix = Vec::with_capacity(q_by_cycle.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for q in q_by_cycle {
        acc += q;
        prefix.push(acc);
    }

    let mut curve = Vec::with_capacity(candidates.len());
    let mut best: Option<(u32, f64)> = None;
    for &cycle in candidates {
        let q = q_by_cycle[cycle as usize - 1];
        let raw = specs
            .iter()
            .map(|s| match s.extractor {
                Extractor::TotalAh => Ok(prefix[cycle as usize] * q0_ah),
                Extractor::MeanTimeBetweenCharges => mtbc(q, discharge_rate_c),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let phi = attribute_utilities(specs, &raw)?;
        let utility: f64 = specs.iter().zip(&phi).map(|(s, p)| s.weight * p).sum();
        if best.is_none_or(|(_, u)| utility > u) {
            best = Some((cycle, utility));
        }
        curve.push(UtilityPoint { cycle, utility, phi, raw });
    }
    let (optimal_cycle, optimal_utility) = best.expect("at least one candidate");
    Ok(RetirementDecision {
        current_cycle: current,
        candidates: candidates.to_vec(),
        utility_curve: curve,
        optimal_cycle,
        optimal_utility,
        attribute_labels: attribute_labels(specs),
        capped: false,
    })
}

/// Dense trajectory over cycles `1..=last`: measured values before `current`,
/// projected median from `current` on.
pub fn hybrid_trajectory(
    trace: &NormalizedTrace,
    proj: &CapacityProjection,
    current: u32,
    last: u32,
) -> Result<Vec<f64>, RetirementError> {
    let mut q = Vec::with_capacity(last as usize);
    for k in 1..current.min(last + 1) {
        q.push(trace.q_at(k).ok_or(RetirementError::MissingMeasurement(k))?);
    }
    for k in current..=last {
        let v = proj.median_at(k).ok_or(UtilityError::IncompleteTrajectory {
            have: q.len(),
            need: last as usize,
        })?;
        q.push(v);
    }
    Ok(q)
}

/// Projects the ensemble from `current` and picks the utility-maximizing
/// retirement cycle.
pub fn optimize_retirement(
    trace: &NormalizedTrace,
    ens: &ParticleEnsemble,
    specs: &[AttributeSpec],
    current: u32,
    options: &RetirementOptions,
) -> Result<RetirementDecision, RetirementError> {
    validate_weights(specs)?;
    let q_now = trace
        .q_at(current)
        .ok_or(RetirementError::MissingMeasurement(current))?;
    if q_now > options.trigger {
        return Err(RetirementError::NotTriggered {
            current,
            q: q_now,
            threshold: options.trigger,
        });
    }
    let proj = project(ens, current, options.eol_threshold, &[])?;
    let candidates = candidate_cycles(current, &proj, options.retire_floor)?;
    let last = *candidates.cycles.last().expect("non-empty candidate set");
    let q_by_cycle = hybrid_trajectory(trace, &proj, current, last)?;
    let mut decision = evaluate_candidates(
        &q_by_cycle,
        trace.q0_ah,
        current,
        &candidates.cycles,
        specs,
        options.discharge_rate_c,
    )?;
    decision.capped = candidates.capped;
    Ok(decision)
}
