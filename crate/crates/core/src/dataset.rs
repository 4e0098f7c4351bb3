//! Per-cycle capacity ingestion and preprocessing.
//!
//! Input is a CSV of per-cycle discharge capacity summaries, one row per
//! `(cell_id, cycle)`:
//!
//! ```text
//! cell_id,split,cycle,discharge_capacity_ah,nominal_capacity_ah
//! b1c0,train,1,1.0707,1.1
//! ```
//!
//! The `split` column may be omitted when a separate `cell_id,split` manifest is
//! supplied. Records are normalized by their early-life peak capacity and can be
//! extended linearly down to an end-of-second-life floor.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::ols_line;

/// Upper sanity bound on normalized capacity (allows for the initial capacity
/// rise of LFP cells).
pub const MAX_NORMALIZED_CAPACITY: f64 = 1.15;

/// Default early-life window for the normalization denominator.
pub const DEFAULT_NORMALIZE_WINDOW: usize = 100;

/// Default number of trailing points used for linear extension.
pub const DEFAULT_EXTEND_TAIL: usize = 30;

/// Default end-of-second-life floor.
pub const DEFAULT_EXTEND_FLOOR: f64 = 0.5;

/// Default optimization trigger threshold.
pub const DEFAULT_TRIGGER_THRESHOLD: f64 = 0.95;

/// Hard cap on the number of synthetic points appended by [`extend_linear`].
pub const MAX_EXTENSION: u32 = 200_000;

#[derive(Debug, Error, PartialEq)]
pub enum DatasetError {
    #[error("{path}: {source_msg}")]
    Io { path: String, source_msg: String },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("cell {cell_id}: duplicate cycle {cycle} (line {line})")]
    DuplicateCycle { cell_id: String, cycle: u32, line: u64 },
    #[error("cell {cell_id} is not listed in the split manifest")]
    UnknownCell { cell_id: String },
    #[error("cell {cell_id}: cycles are not strictly increasing at index {index}")]
    NonMonotoneCycles { cell_id: String, index: usize },
    #[error("cell {cell_id}: invalid record: {reason}")]
    InvalidRecord { cell_id: String, reason: String },
    #[error("no split column in the data file and no split manifest was supplied")]
    MissingSplit,
    #[error("cell {cell_id}: normalized capacity {max_q} exceeds the sanity bound {MAX_NORMALIZED_CAPACITY}")]
    ImplausibleRise { cell_id: String, max_q: f64 },
    #[error("cell {cell_id}: need at least {needed} points to extrapolate, have {have}")]
    TooShortToExtend { cell_id: String, needed: usize, have: usize },
    #[error("cell {cell_id}: tail slope {slope} is not negative, cannot extrapolate to the floor")]
    NonDecreasingTail { cell_id: String, slope: f64 },
    #[error("cell {cell_id}: last capacity {last_q} is already at or below the floor {floor}")]
    AlreadyBelowFloor { cell_id: String, last_q: f64, floor: f64 },
    #[error("cell {cell_id}: trace is already extended from cycle {from}")]
    AlreadyExtended { cell_id: String, from: u32 },
    #[error("cell {cell_id}: extension would exceed {MAX_EXTENSION} cycles")]
    ExtensionTooLong { cell_id: String },
}

/// Dataset partition a cell belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "test1")]
    PrimaryTest,
    #[serde(rename = "test2")]
    SecondaryTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::PrimaryTest, Split::SecondaryTest];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::PrimaryTest => "test1",
            Split::SecondaryTest => "test2",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "test1" => Ok(Split::PrimaryTest),
            "test2" => Ok(Split::SecondaryTest),
            other => Err(format!("unknown split {other:?} (expected train, test1 or test2)")),
        }
    }
}

/// Mapping from cell id to split.
pub type SplitManifest = BTreeMap<String, Split>;

/// Reads a two-column `cell_id,split` manifest.
pub fn load_split_manifest(path: &Path) -> Result<SplitManifest, DatasetError> {
    let mut reader = open_csv(path)?;
    let headers = header_names(&mut reader, path)?;
    if headers != ["cell_id", "split"] {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: format!("manifest header must be cell_id,split, got {}", headers.join(",")),
        });
    }
    let mut manifest = SplitManifest::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_row_error(&e))?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != 2 {
            return Err(DatasetError::MalformedRow {
                line,
                reason: format!("expected 2 columns, found {}", row.len()),
            });
        }
        let split = row[1]
            .parse()
            .map_err(|reason| DatasetError::MalformedRow { line, reason })?;
        manifest.insert(row[0].trim().to_string(), split);
    }
    Ok(manifest)
}

/// One cell's measured per-cycle discharge capacity history.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub cell_id: String,
    pub split: Split,
    pub cycles: Vec<u32>,
    pub capacity_ah: Vec<f64>,
    pub nominal_capacity_ah: f64,
    pub extrapolated_from: Option<u32>,
}

impl CellRecord {
    /// Builds a validated measured record.
    pub fn new(
        cell_id: impl Into<String>,
        split: Split,
        cycles: Vec<u32>,
        capacity_ah: Vec<f64>,
        nominal_capacity_ah: f64,
    ) -> Result<Self, DatasetError> {
        let record = Self {
            cell_id: cell_id.into(),
            split,
            cycles,
            capacity_ah,
            nominal_capacity_ah,
            extrapolated_from: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: String| DatasetError::InvalidRecord {
            cell_id: self.cell_id.clone(),
            reason,
        };
        if self.cycles.is_empty() {
            return Err(invalid("no cycles".into()));
        }
        if self.cycles.len() != self.capacity_ah.len() {
            return Err(invalid(format!(
                "{} cycles but {} capacities",
                self.cycles.len(),
                self.capacity_ah.len()
            )));
        }
        if self.cycles[0] == 0 {
            return Err(invalid("cycle indices start at 1".into()));
        }
        check_monotone(&self.cell_id, &self.cycles)?;
        if let Some(i) = self.capacity_ah.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(invalid(format!("capacity at cycle {} is not positive", self.cycles[i])));
        }
        if !(self.nominal_capacity_ah.is_finite() && self.nominal_capacity_ah > 0.0) {
            return Err(invalid("nominal capacity must be positive".into()));
        }
        Ok(())
    }
}

fn check_monotone(cell_id: &str, cycles: &[u32]) -> Result<(), DatasetError> {
    match cycles.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(DatasetError::NonMonotoneCycles {
            cell_id: cell_id.to_string(),
            index: i + 1,
        }),
        None => Ok(()),
    }
}

/// Normalized capacity trace, `q[i] = capacity_ah[i] / q0_ah`.
///
/// Serializes to the per-cell preprocessing document
/// `{cell_id, q0_ah, extrapolated_from, cycles, q}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrace {
    pub cell_id: String,
    pub q0_ah: f64,
    pub extrapolated_from: Option<u32>,
    pub cycles: Vec<u32>,
    pub q: Vec<f64>,
}

impl NormalizedTrace {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Normalized capacity at `cycle`, if that cycle is present.
    pub fn q_at(&self, cycle: u32) -> Option<f64> {
        self.cycles.binary_search(&cycle).ok().map(|i| self.q[i])
    }

    pub fn first_cycle(&self) -> u32 {
        self.cycles[0]
    }

    pub fn last_cycle(&self) -> u32 {
        *self.cycles.last().expect("trace is non-empty")
    }

    /// Number of leading points that were measured rather than extrapolated.
    pub fn measured_len(&self) -> usize {
        match self.extrapolated_from {
            Some(from) => self.cycles.partition_point(|&c| c < from),
            None => self.cycles.len(),
        }
    }

    pub fn measured_cycles(&self) -> &[u32] {
        &self.cycles[..self.measured_len()]
    }

    pub fn measured_q(&self) -> &[f64] {
        &self.q[..self.measured_len()]
    }

    /// Last measured (non-synthetic) cycle.
    pub fn last_measured_cycle(&self) -> u32 {
        self.cycles[self.measured_len().max(1) - 1]
    }

    /// Re-expresses the trace in ampere-hours, using `q0_ah` as the nominal
    /// capacity.
    pub fn to_record(&self, split: Split) -> CellRecord {
        CellRecord {
            cell_id: self.cell_id.clone(),
            split,
            cycles: self.cycles.clone(),
            capacity_ah: self.q.iter().map(|q| q * self.q0_ah).collect(),
            nominal_capacity_ah: self.q0_ah,
            extrapolated_from: self.extrapolated_from,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let invalid = |reason: &str| DatasetError::InvalidRecord {
            cell_id: self.cell_id.clone(),
            reason: reason.to_string(),
        };
        if self.cycles.is_empty() {
            return Err(invalid("empty trace"));
        }
        if self.cycles.len() != self.q.len() {
            return Err(invalid("cycles and q differ in length"));
        }
        if self.cycles[0] == 0 {
            return Err(invalid("cycle indices start at 1"));
        }
        if !(self.q0_ah.is_finite() && self.q0_ah > 0.0) {
            return Err(invalid("q0_ah must be positive"));
        }
        if self.q.iter().any(|q| !q.is_finite()) {
            return Err(invalid("non-finite capacity"));
        }
        check_monotone(&self.cell_id, &self.cycles)
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>, DatasetError> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DatasetError::Io {
            path: path.display().to_string(),
            source_msg: e.to_string(),
        })
}

fn header_names(
    reader: &mut csv::Reader<std::fs::File>,
    path: &Path,
) -> Result<Vec<String>, DatasetError> {
    let headers = reader.headers().map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source_msg: e.to_string(),
    })?;
    Ok(headers.iter().map(|h| h.trim_start_matches('\u{feff}').to_string()).collect())
}

fn csv_row_error(e: &csv::Error) -> DatasetError {
    DatasetError::MalformedRow {
        line: e.position().map_or(0, |p| p.line()),
        reason: e.to_string(),
    }
}

const COLUMNS_WITH_SPLIT: [&str; 5] =
    ["cell_id", "split", "cycle", "discharge_capacity_ah", "nominal_capacity_ah"];
const COLUMNS_WITHOUT_SPLIT: [&str; 4] =
    ["cell_id", "cycle", "discharge_capacity_ah", "nominal_capacity_ah"];

struct PendingCell {
    split: Split,
    nominal: f64,
    rows: BTreeMap<u32, f64>,
}

/// Loads every cell in a per-cycle capacity CSV.
///
/// When `manifest` is given it is authoritative for splits and must list every
/// cell in the file. Otherwise the file must carry a `split` column. Records are
/// returned sorted by `cell_id`, each sorted by cycle.
pub fn load_cells(
    path: &Path,
    manifest: Option<&SplitManifest>,
) -> Result<Vec<CellRecord>, DatasetError> {
    let mut reader = open_csv(path)?;
    let headers = header_names(&mut reader, path)?;
    let has_split = if headers == COLUMNS_WITH_SPLIT {
        true
    } else if headers == COLUMNS_WITHOUT_SPLIT {
        false
    } else {
        return Err(DatasetError::MalformedRow {
            line: 1,
            reason: format!(
                "header must be {} (or without split), got {}",
                COLUMNS_WITH_SPLIT.join(","),
                headers.join(",")
            ),
        });
    };
    if !has_split && manifest.is_none() {
        return Err(DatasetError::MissingSplit);
    }
    let width = headers.len();

    let mut cells: BTreeMap<String, PendingCell> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_row_error(&e))?;
        let line = row.position().map_or(0, |p| p.line());
        let malformed = |reason: String| DatasetError::MalformedRow { line, reason };
        if row.len() != width {
            return Err(malformed(format!("expected {width} columns, found {}", row.len())));
        }
        let mut col = row.iter();
        let cell_id = col.next().unwrap_or_default().to_string();
        if cell_id.is_empty() {
            return Err(malformed("empty cell_id".into()));
        }
        let file_split = if has_split {
            Some(col.next().unwrap_or_default().parse::<Split>().map_err(malformed)?)
        } else {
            None
        };
        let cycle_text = col.next().unwrap_or_default();
        let cycle: u32 = cycle_text
            .parse()
            .map_err(|_| malformed(format!("cycle {cycle_text:?} is not a positive integer")))?;
        if cycle == 0 {
            return Err(malformed("cycle indices start at 1".into()));
        }
        let capacity = parse_positive(col.next().unwrap_or_default(), "discharge_capacity_ah")
            .map_err(malformed)?;
        let nominal = parse_positive(col.next().unwrap_or_default(), "nominal_capacity_ah")
            .map_err(malformed)?;

        let split = match manifest {
            Some(m) => *m
                .get(&cell_id)
                .ok_or_else(|| DatasetError::UnknownCell { cell_id: cell_id.clone() })?,
            None => file_split.expect("split column present"),
        };

        let pending = cells.entry(cell_id.clone()).or_insert_with(|| PendingCell {
            split,
            nominal,
            rows: BTreeMap::new(),
        });
        if pending.nominal != nominal {
            return Err(malformed(format!(
                "cell {cell_id}: nominal capacity changes from {} to {nominal}",
                pending.nominal
            )));
        }
        if pending.split != split {
            return Err(malformed(format!(
                "cell {cell_id}: split changes from {} to {split}",
                pending.split
            )));
        }
        match pending.rows.entry(cycle) {
            Entry::Occupied(_) => {
                return Err(DatasetError::DuplicateCycle { cell_id, cycle, line });
            }
            Entry::Vacant(slot) => {
                slot.insert(capacity);
            }
        }
    }

    cells
        .into_iter()
        .map(|(cell_id, pending)| {
            let (cycles, capacity_ah) = pending.rows.into_iter().unzip();
            CellRecord::new(cell_id, pending.split, cycles, capacity_ah, pending.nominal)
        })
        .collect()
}

fn parse_positive(text: &str, column: &str) -> Result<f64, String> {
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("{column} must be positive, got {v}")),
        Err(_) => Err(format!("{column} {text:?} is not numeric")),
    }
}

/// Normalizes by the peak capacity over the first `window` cycles.
///
/// LFP cells gain a little capacity early in life, so the peak rather than the
/// cycle-1 value is used as the denominator.
pub fn normalize(cell: &CellRecord, window: usize) -> Result<NormalizedTrace, DatasetError> {
    cell.validate()?;
    let window = window.max(1).min(cell.capacity_ah.len());
    let q0_ah = cell.capacity_ah[..window]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let q: Vec<f64> = cell.capacity_ah.iter().map(|c| c / q0_ah).collect();
    let max_q = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max_q > MAX_NORMALIZED_CAPACITY {
        return Err(DatasetError::ImplausibleRise {
            cell_id: cell.cell_id.clone(),
            max_q,
        });
    }
    Ok(NormalizedTrace {
        cell_id: cell.cell_id.clone(),
        q0_ah,
        extrapolated_from: cell.extrapolated_from,
        cycles: cell.cycles.clone(),
        q,
    })
}

/// Appends points on the OLS line through the last `tail` points until the line
/// reaches `floor`.
///
/// One point is appended per cycle after the last one. The final appended point
/// is the first whose line value is at or below `floor`, clamped up to `floor`.
pub fn extend_linear(
    trace: &NormalizedTrace,
    tail: usize,
    floor: f64,
) -> Result<NormalizedTrace, DatasetError> {
    trace.validate()?;
    let cell_id = || trace.cell_id.clone();
    if let Some(from) = trace.extrapolated_from {
        return Err(DatasetError::AlreadyExtended { cell_id: cell_id(), from });
    }
    let tail = tail.max(2);
    if trace.len() < tail {
        return Err(DatasetError::TooShortToExtend {
            cell_id: cell_id(),
            needed: tail,
            have: trace.len(),
        });
    }
    let start = trace.len() - tail;
    let x: Vec<f64> = trace.cycles[start..].iter().map(|&c| f64::from(c)).collect();
    let line = ols_line(&x, &trace.q[start..]).expect("tail cycles are distinct");
    if !(line.slope < 0.0) {
        return Err(DatasetError::NonDecreasingTail {
            cell_id: cell_id(),
            slope: line.slope,
        });
    }
    let last_q = *trace.q.last().expect("non-empty");
    if last_q <= floor {
        return Err(DatasetError::AlreadyBelowFloor {
            cell_id: cell_id(),
            last_q,
            floor,
        });
    }

    let mut out = trace.clone();
    let first_new = trace.last_cycle() + 1;
    let mut cycle = first_new;
    loop {
        if cycle - first_new >= MAX_EXTENSION {
            return Err(DatasetError::ExtensionTooLong { cell_id: cell_id() });
        }
        let value = line.at(f64::from(cycle));
        out.cycles.push(cycle);
        if value <= floor {
            out.q.push(floor);
            break;
        }
        out.q.push(value);
        cycle += 1;
    }
    out.extrapolated_from = Some(first_new);
    Ok(out)
}

/// First cycle whose normalized capacity is at or below `threshold`.
pub fn trigger_cycle(trace: &NormalizedTrace, threshold: f64) -> Option<u32> {
    trigger_cycle_persistent(trace, threshold, 1)
}

/// Cycle at which `persist` consecutive points at or below `threshold` have been
/// observed, i.e. the last point of the first qualifying run.
pub fn trigger_cycle_persistent(
    trace: &NormalizedTrace,
    threshold: f64,
    persist: usize,
) -> Option<u32> {
    let persist = persist.max(1);
    let mut run = 0;
    for (cycle, q) in trace.cycles.iter().zip(&trace.q) {
        if *q <= threshold {
            run += 1;
            if run >= persist {
                return Some(*cycle);
            }
        } else {
            run = 0;
        }
    }
    None
}
