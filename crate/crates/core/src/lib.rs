//! Battery digital twin: power-law capacity-fade calibration, particle-filter
//! prognosis and multi-attribute utility planning of first-life retirement.
//!
//! The pipeline runs `dataset` (ingest, normalize, extend) into `calib`
//! (offline fleet fit), then `filter` and `prognosis` (online tracking and
//! projection), `retirement` (utility-optimal retirement cycle) and `eval`
//! (RUL errors, calibration curves). The `cli` module wires these into the
//! `cell-twin` binary.

pub mod calib;
pub mod cli;
pub mod dataset;
pub mod eval;
pub mod filter;
pub mod model;
pub mod prognosis;
pub mod retirement;
pub mod stats;
pub mod synthetic;
pub mod utility;

pub use calib::{fit_power_law, fleet_calibrate, FitOptions, FleetFit};
pub use dataset::{load_cells, normalize, CellRecord, NormalizedTrace, Split};
pub use eval::{calibration_curve, rul_errors, CalibrationCurve, PredictiveDistribution};
pub use filter::{FilterConfig, ParticleEnsemble};
pub use model::{analytic_eol, capacity, NoiseSpec, PowerLawParams};
pub use prognosis::{eol_distribution, project, rul, CapacityProjection, EolDistribution};
pub use retirement::{optimize_retirement, RetirementDecision, RetirementOptions};
pub use utility::{make_exp_utility, AttributeSpec, ExpUtility};
