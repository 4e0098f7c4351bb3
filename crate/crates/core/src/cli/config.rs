//! Run configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calib::FitOptions;
use crate::dataset::{DEFAULT_EXTEND_FLOOR, DEFAULT_EXTEND_TAIL, DEFAULT_NORMALIZE_WINDOW, DEFAULT_TRIGGER_THRESHOLD};
use crate::filter::FilterConfig;
use crate::prognosis::DEFAULT_EOL_THRESHOLD;
use crate::retirement::RetirementOptions;
use crate::utility::{reference_attributes, validate_weights, AttributeConfig, AttributeSpec, DEFAULT_DISCHARGE_RATE_C};

use super::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub trigger: f64,
    pub eol: f64,
    pub retire_floor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            trigger: DEFAULT_TRIGGER_THRESHOLD,
            eol: DEFAULT_EOL_THRESHOLD,
            retire_floor: DEFAULT_EOL_THRESHOLD,
        }
    }
}

/// Prediction cycles: `{"stride": 100}` (from the trigger cycle onward) or an
/// explicit `{"cycles": [...]}` list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    Stride(u32),
    Cycles(Vec<u32>),
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Stride(100)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocess {
    pub normalize_window: usize,
    pub extend: bool,
    pub extend_tail: usize,
    pub extend_floor: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            normalize_window: DEFAULT_NORMALIZE_WINDOW,
            extend: true,
            extend_tail: DEFAULT_EXTEND_TAIL,
            extend_floor: DEFAULT_EXTEND_FLOOR,
        }
    }
}

fn default_utilities() -> Vec<AttributeConfig> {
    reference_attributes().iter().map(AttributeConfig::from).collect()
}

fn default_rate() -> f64 {
    DEFAULT_DISCHARGE_RATE_C
}

fn default_true() -> bool {
    true
}

fn default_persist() -> usize {
    1
}

/// Relative paths are resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    #[serde(default)]
    pub split_manifest: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub preprocess: Preprocess,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Centre the filter prior on the fleet medians when `fleet_fit.json`
    /// exists in the output directory.
    #[serde(default = "default_true")]
    pub use_fleet_prior: bool,
    #[serde(default)]
    pub thresholds: Thresholds,
    /// Consecutive points at or below the trigger needed to fire it.
    #[serde(default = "default_persist")]
    pub trigger_persist: usize,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "default_utilities")]
    pub utilities: Vec<AttributeConfig>,
    #[serde(default = "default_rate")]
    pub discharge_rate_c: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.split_manifest = cfg.split_manifest.map(|p| base.join(p));
        cfg.output_dir = cfg.output_dir.map(|p| base.join(p));
        Ok(cfg)
    }

    /// Checks everything that can be checked without touching the outputs.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if !self.dataset.is_file() {
            return bad(format!("dataset {} does not exist", self.dataset.display()));
        }
        if let Some(m) = &self.split_manifest {
            if !m.is_file() {
                return bad(format!("split manifest {} does not exist", m.display()));
            }
        }
        let Thresholds { trigger, eol, retire_floor } = self.thresholds;
        for (name, v) in [("trigger", trigger), ("eol", eol), ("retire_floor", retire_floor)] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("thresholds.{name} must lie in (0, 1), got {v}"));
            }
        }
        let p = &self.preprocess;
        if p.normalize_window == 0 {
            return bad("preprocess.normalize_window must be positive".into());
        }
        if p.extend_tail < 2 {
            return bad(format!("preprocess.extend_tail must be at least 2, got {}", p.extend_tail));
        }
        if !(p.extend_floor > 0.0 && p.extend_floor < 1.0) {
            return bad(format!("preprocess.extend_floor must lie in (0, 1), got {}", p.extend_floor));
        }
        if !(self.fit.epsilon > 0.0 && self.fit.epsilon < 1.0) {
            return bad(format!("fit.epsilon must lie in (0, 1), got {}", self.fit.epsilon));
        }
        match &self.schedule {
            Schedule::Stride(0) => return bad("schedule.stride must be positive".into()),
            Schedule::Stride(_) => {}
            Schedule::Cycles(c) => {
                if c.is_empty() {
                    return bad("schedule.cycles is empty".into());
                }
                if c[0] == 0 || c.windows(2).any(|w| w[0] >= w[1]) {
                    return bad("schedule.cycles must be positive and strictly increasing".into());
                }
            }
        }
        self.filter.validate().map_err(|e| CliError::Config(format!("filter: {e}")))?;
        if self.trigger_persist == 0 {
            return bad("trigger_persist must be at least 1".into());
        }
        if !(self.discharge_rate_c > 0.0 && self.discharge_rate_c.is_finite()) {
            return bad(format!("discharge_rate_c must be positive, got {}", self.discharge_rate_c));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.attributes()?;
        Ok(())
    }

    pub fn attributes(&self) -> Result<Vec<AttributeSpec>, CliError> {
        let specs = self
            .utilities
            .iter()
            .map(|u| u.build().map_err(|e| CliError::Config(format!("utility {}: {e}", u.name))))
            .collect::<Result<Vec<_>, _>>()?;
        validate_weights(&specs).map_err(|e| CliError::Config(format!("utilities: {e}")))?;
        Ok(specs)
    }

    pub fn retirement_options(&self) -> RetirementOptions {
        RetirementOptions {
            trigger: self.thresholds.trigger,
            eol_threshold: self.thresholds.eol,
            retire_floor: self.thresholds.retire_floor,
            discharge_rate_c: self.discharge_rate_c,
        }
    }
}
