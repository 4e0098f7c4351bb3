use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calib::{fleet_calibrate, CalibError, FleetFit};
use crate::dataset::{
    extend_linear, load_cells, load_split_manifest, normalize, trigger_cycle_persistent,
    DatasetError, NormalizedTrace, Split,
};
use crate::eval::{calibration_curve, rul_errors, true_eol, EvalError, DEFAULT_LEVELS};
use crate::filter::{FilterConfig, ParticleEnsemble};
use crate::model::{REFERENCE_B, REFERENCE_LOG10_A};
use crate::prognosis::{eol_distribution, project, rul, EolDistribution, RulPrediction, DEFAULT_BANDS};
use crate::retirement::{optimize_retirement, DecisionSummary, RetirementError};

use super::config::{RunConfig, Schedule};
use super::io::{cells_dir, numbered_files, read_ingested, read_json, write_atomic, write_json, IngestedCell};
use super::CliError;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub cell: Option<String>,
    pub at_cycle: Option<u32>,
}

/// Per-cell filter seed: the global seed mixed with an FNV-1a hash of the id,
/// so a cell's stream does not depend on which other cells are in the run.
pub fn derive_cell_seed(seed: u64, cell_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in cell_id.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn data(e: DatasetError) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Serialize)]
struct IngestSummary {
    n_cells: usize,
    splits: BTreeMap<String, usize>,
    extended: bool,
    cells: Vec<IngestedEntry>,
}

#[derive(Serialize)]
struct IngestedEntry {
    cell_id: String,
    split: Split,
    n_measured: usize,
    n_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    extrapolated_from: Option<u32>,
}

pub fn ingest(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    let manifest = cfg
        .split_manifest
        .as_deref()
        .map(load_split_manifest)
        .transpose()
        .map_err(data)?;
    let mut records = load_cells(&cfg.dataset, manifest.as_ref()).map_err(data)?;
    if let Some(id) = &ctx.cell {
        records.retain(|r| &r.cell_id == id);
        if records.is_empty() {
            return Err(CliError::Data(format!("unknown cell {id}")));
        }
    }
    let pre = cfg.preprocess;
    let cells: Vec<IngestedCell> = records
        .par_iter()
        .map(|record| {
            let trace = normalize(record, pre.normalize_window)?;
            let trace = if pre.extend {
                match extend_linear(&trace, pre.extend_tail, pre.extend_floor) {
                    Err(DatasetError::AlreadyBelowFloor { .. }) => trace,
                    other => other?,
                }
            } else {
                trace
            };
            Ok(IngestedCell::new(trace, record.split))
        })
        .collect::<Result<_, DatasetError>>()
        .map_err(data)?;

    let mut splits: BTreeMap<String, usize> =
        Split::ALL.iter().map(|s| (s.as_str().to_string(), 0)).collect();
    for c in &cells {
        *splits.entry(c.split.as_str().to_string()).or_default() += 1;
    }
    let dir = cells_dir(&ctx.out);
    for c in &cells {
        write_json(&dir.join(format!("{}.json", c.cell_id)), c)?;
    }
    let summary = IngestSummary {
        n_cells: cells.len(),
        extended: pre.extend,
        cells: cells
            .iter()
            .map(|c| {
                let trace = c.trace();
                IngestedEntry {
                    cell_id: c.cell_id.clone(),
                    split: c.split,
                    n_measured: trace.measured_len(),
                    n_total: trace.len(),
                    extrapolated_from: c.extrapolated_from,
                }
            })
            .collect(),
        splits,
    };
    write_json(&ctx.out.join("ingest_summary.json"), &summary)?;
    let counts: Vec<String> = summary.splits.iter().map(|(k, v)| format!("{k} {v}")).collect();
    println!("ingested {} cells: {}", summary.n_cells, counts.join(", "));
    Ok(())
}

pub fn calibrate(ctx: &Context) -> Result<(), CliError> {
    let cells = read_ingested(&ctx.out)?;
    let train: Vec<NormalizedTrace> = cells
        .iter()
        .filter(|c| c.split == Split::Train)
        .map(IngestedCell::trace)
        .collect();
    if train.is_empty() {
        return Err(CliError::Data("no cells in the train split".into()));
    }
    let fleet = fleet_calibrate(&train, &ctx.cfg.fit).map_err(|e| match e {
        CalibError::NoFitsSucceeded => CliError::Data(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    })?;
    write_json(&ctx.out.join("fleet_fit.json"), &fleet)?;
    for f in &fleet.failed {
        eprintln!("warning: fit failed for {}: {}", f.cell_id, f.reason);
    }
    println!(
        "fitted {} of {} training cells: median log10 a {}, median b {} (reference {REFERENCE_LOG10_A}, {REFERENCE_B})",
        fleet.per_cell.len(),
        train.len(),
        fleet.median_log10_a,
        fleet.median_b
    );
    Ok(())
}

/// Cells a per-cell stage works on: `--cell`, or every test cell.
fn select_cells(ctx: &Context) -> Result<Vec<IngestedCell>, CliError> {
    let cells = read_ingested(&ctx.out)?;
    let selected: Vec<IngestedCell> = match &ctx.cell {
        Some(id) => {
            let found: Vec<_> = cells.into_iter().filter(|c| &c.cell_id == id).collect();
            if found.is_empty() {
                return Err(CliError::Data(format!("unknown cell {id}")));
            }
            found
        }
        None => cells.into_iter().filter(|c| c.split != Split::Train).collect(),
    };
    if selected.is_empty() {
        return Err(CliError::Data("no test cells to process".into()));
    }
    Ok(selected)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Prior {
    log10_a: f64,
    b: f64,
    from_fleet_fit: bool,
}

fn filter_config(ctx: &Context) -> Result<(FilterConfig, Prior), CliError> {
    let cfg = &ctx.cfg;
    let path = ctx.out.join("fleet_fit.json");
    let mut prior = Prior {
        log10_a: cfg.filter.init_log10_a,
        b: cfg.filter.init_b,
        from_fleet_fit: false,
    };
    if cfg.use_fleet_prior && path.is_file() {
        let fleet: FleetFit = read_json(&path)?;
        prior = Prior {
            log10_a: fleet.median_log10_a,
            b: fleet.median_b,
            from_fleet_fit: true,
        };
    }
    let filter = cfg.filter.with_prior(prior.log10_a, prior.b);
    filter
        .validate()
        .map_err(|e| CliError::Data(format!("filter prior from {}: {e}", path.display())))?;
    Ok((filter, prior))
}

fn trigger_of(ctx: &Context, trace: &NormalizedTrace) -> Option<u32> {
    trigger_cycle_persistent(trace, ctx.cfg.thresholds.trigger, ctx.cfg.trigger_persist)
}

/// Prediction cycles for one cell, or `None` when a stride schedule has no
/// trigger to start from.
fn schedule_for(ctx: &Context, trace: &NormalizedTrace) -> Result<Option<Vec<u32>>, CliError> {
    match &ctx.cfg.schedule {
        Schedule::Cycles(cycles) => {
            if let Some(&c) = cycles.iter().find(|&&c| c > trace.last_cycle()) {
                return Err(CliError::Data(format!(
                    "cell {}: scheduled cycle {c} is past the last cycle {}",
                    trace.cell_id,
                    trace.last_cycle()
                )));
            }
            Ok(Some(cycles.clone()))
        }
        Schedule::Stride(stride) => {
            let Some(start) = trigger_of(ctx, trace) else {
                return Ok(None);
            };
            let end = true_eol(trace, ctx.cfg.thresholds.eol).unwrap_or(trace.last_cycle());
            Ok(Some((start..=end.max(start)).step_by(*stride as usize).collect()))
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    cell_id: String,
    seed: u64,
    prior: Prior,
    eol_threshold: f64,
    schedule: Vec<u32>,
    final_median_eol: f64,
}

struct SimOutput {
    cell_id: String,
    files: Vec<(String, String)>,
    final_median_eol: f64,
    n_predictions: usize,
}

fn rul_csv(predictions: &[RulPrediction]) -> String {
    let mut out = String::from("at_cycle,rul_median");
    for level in DEFAULT_BANDS {
        let _ = write!(out, ",rul_{}", crate::prognosis::band_label(level));
    }
    out.push('\n');
    for p in predictions {
        let _ = write!(out, "{},{}", p.at_cycle, p.rul_median);
        for (_, v) in &p.rul_quantiles {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn simulate_cell(
    ctx: &Context,
    cell: &IngestedCell,
    filter: &FilterConfig,
    prior: Prior,
    schedule: Vec<u32>,
) -> Result<SimOutput, CliError> {
    let trace = cell.trace();
    let seed = derive_cell_seed(ctx.seed, &cell.cell_id);
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(format!("cell {}: {e}", cell.cell_id));
    let mut ens = ParticleEnsemble::init(&FilterConfig { seed, ..*filter }).map_err(|e| runtime(&e))?;
    let eol = ctx.cfg.thresholds.eol;
    let mut files = Vec::new();
    let mut predictions = Vec::new();
    let mut final_median_eol = f64::NAN;
    for &c in &schedule {
        ens.assimilate(&trace, c, &filter.noise).map_err(|e| runtime(&e))?;
        let proj = project(&ens, c, eol, &DEFAULT_BANDS).map_err(|e| runtime(&e))?;
        predictions.push(rul(&proj, c, &DEFAULT_BANDS).map_err(|e| runtime(&e))?);
        final_median_eol = proj.median_eol();
        files.push((format!("projection_{c}.csv"), proj.to_csv()));
        files.push((format!("eol_{c}.csv"), eol_distribution(&proj).to_csv()));
    }
    files.push(("rul.csv".into(), rul_csv(&predictions)));
    files.push(("ensemble.json".into(), ens.to_json() + "\n"));
    let summary = SimulateSummary {
        cell_id: cell.cell_id.clone(),
        seed,
        prior,
        eol_threshold: eol,
        schedule,
        final_median_eol,
    };
    let mut summary_json = serde_json::to_string_pretty(&summary).map_err(|e| runtime(&e))?;
    summary_json.push('\n');
    files.push(("summary.json".into(), summary_json));
    Ok(SimOutput {
        cell_id: cell.cell_id.clone(),
        files,
        final_median_eol,
        n_predictions: predictions.len(),
    })
}

fn not_triggered(ctx: &Context, cell: &IngestedCell) -> CliError {
    let trace = cell.trace();
    CliError::Runtime(format!(
        "cell {} never reaches the trigger {} (last measured capacity {})",
        cell.cell_id,
        ctx.cfg.thresholds.trigger,
        trace.measured_q().last().copied().unwrap_or(f64::NAN)
    ))
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let cells = select_cells(ctx)?;
    let (filter, prior) = filter_config(ctx)?;
    let mut jobs = Vec::new();
    for cell in &cells {
        match schedule_for(ctx, &cell.trace())? {
            Some(s) if !s.is_empty() => jobs.push((cell, s)),
            _ if ctx.cell.is_some() => return Err(not_triggered(ctx, cell)),
            _ => eprintln!("warning: skipping {}: {}", cell.cell_id, not_triggered(ctx, cell)),
        }
    }
    let outputs: Vec<SimOutput> = jobs
        .into_par_iter()
        .map(|(cell, schedule)| simulate_cell(ctx, cell, &filter, prior, schedule))
        .collect::<Result<_, _>>()?;
    for o in &outputs {
        let dir = ctx.out.join("simulate").join(&o.cell_id);
        for (name, body) in &o.files {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
        println!(
            "{}: {} predictions, final median EOL {}",
            o.cell_id, o.n_predictions, o.final_median_eol
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct AttributeOutcome {
    name: String,
    value: f64,
    utility: f64,
}

#[derive(Serialize)]
struct RetireReport {
    #[serde(flatten)]
    decision: DecisionSummary,
    current_q: f64,
    seed: u64,
    prior: Prior,
    attributes_at_optimum: Vec<AttributeOutcome>,
}

struct RetireOutput {
    cell_id: String,
    curve: String,
    report: RetireReport,
}

fn retire_cell(
    ctx: &Context,
    cell: &IngestedCell,
    filter: &FilterConfig,
    prior: Prior,
    current: u32,
) -> Result<RetireOutput, CliError> {
    let trace = cell.trace();
    let seed = derive_cell_seed(ctx.seed, &cell.cell_id);
    let runtime = |e: &dyn std::fmt::Display| CliError::Runtime(format!("cell {}: {e}", cell.cell_id));
    if current > trace.last_cycle() {
        return Err(CliError::Data(format!(
            "cell {}: cycle {current} is past the last cycle {}",
            cell.cell_id,
            trace.last_cycle()
        )));
    }
    let mut ens = ParticleEnsemble::init(&FilterConfig { seed, ..*filter }).map_err(|e| runtime(&e))?;
    ens.assimilate(&trace, current, &filter.noise).map_err(|e| runtime(&e))?;
    let specs = ctx.cfg.attributes()?;
    let decision = optimize_retirement(&trace, &ens, &specs, current, &ctx.cfg.retirement_options())
        .map_err(|e| match e {
            RetirementError::MissingMeasurement(_) => CliError::Data(format!("cell {}: {e}", cell.cell_id)),
            other => runtime(&other),
        })?;
    let best = decision
        .utility_curve
        .iter()
        .find(|p| p.cycle == decision.optimal_cycle)
        .expect("optimum is on the curve");
    let attributes_at_optimum = specs
        .iter()
        .zip(best.raw.iter().zip(&best.phi))
        .map(|(s, (&value, &utility))| AttributeOutcome {
            name: s.name.clone(),
            value,
            utility,
        })
        .collect();
    let clamped = specs.iter().all(|s| s.utility.clamp);
    Ok(RetireOutput {
        cell_id: cell.cell_id.clone(),
        curve: decision.to_csv(),
        report: RetireReport {
            decision: decision.summary(&cell.cell_id, clamped),
            current_q: trace.q_at(current).unwrap_or(f64::NAN),
            seed,
            prior,
            attributes_at_optimum,
        },
    })
}

pub fn retire(ctx: &Context) -> Result<(), CliError> {
    let cells = select_cells(ctx)?;
    let (filter, prior) = filter_config(ctx)?;
    let mut jobs = Vec::new();
    for cell in &cells {
        match ctx.at_cycle.or_else(|| trigger_of(ctx, &cell.trace())) {
            Some(c) => jobs.push((cell, c)),
            None if ctx.cell.is_some() => return Err(not_triggered(ctx, cell)),
            None => eprintln!("warning: skipping {}: {}", cell.cell_id, not_triggered(ctx, cell)),
        }
    }
    let outputs: Vec<RetireOutput> = jobs
        .into_par_iter()
        .map(|(cell, current)| retire_cell(ctx, cell, &filter, prior, current))
        .collect::<Result<_, _>>()?;
    for o in &outputs {
        let dir = ctx.out.join("retire").join(&o.cell_id);
        write_atomic(&dir.join("utility_curve.csv"), o.curve.as_bytes())?;
        write_json(&dir.join("decision.json"), &o.report)?;
        let d = &o.report.decision;
        println!(
            "{}: retire at cycle {} (decision cycle {}, utility {})",
            o.cell_id, d.optimal_cycle, d.current_cycle, d.optimal_utility
        );
    }
    Ok(())
}

fn read_rul_csv(path: &Path, eol_threshold: f64) -> Result<Vec<RulPrediction>, CliError> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let at_cycle = row.get(0).unwrap_or_default().parse::<u32>().map_err(|e| bad(e.to_string()))?;
        let rul_median = row.get(1).unwrap_or_default().parse::<f64>().map_err(|e| bad(e.to_string()))?;
        out.push(RulPrediction {
            at_cycle,
            rul_median,
            rul_quantiles: vec![],
            eol_threshold,
        });
    }
    Ok(out)
}

#[derive(Serialize)]
struct CellEvaluation {
    cell_id: String,
    true_eol: u32,
    n_predictions: usize,
    median_signed_error: Option<f64>,
}

#[derive(Serialize)]
struct EvaluateSummary {
    n_cells: usize,
    n_samples: usize,
    area_deviation: f64,
    levels: Vec<f64>,
    observed: Vec<f64>,
    cells: Vec<CellEvaluation>,
    warnings: Vec<String>,
}

pub fn evaluate(ctx: &Context) -> Result<(), CliError> {
    let sim_dir = ctx.out.join("simulate");
    let mut ids: Vec<String> = match std::fs::read_dir(&sim_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("rul.csv").is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .collect(),
        Err(_) => vec![],
    };
    if let Some(id) = &ctx.cell {
        ids.retain(|c| c == id);
    }
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Data(format!(
            "no simulate outputs in {} (run `cell-twin simulate` first)",
            sim_dir.display()
        )));
    }
    let eol = ctx.cfg.thresholds.eol;
    let mut warnings = Vec::new();
    let mut cells = Vec::new();
    let mut series_files = Vec::new();
    let mut dists: Vec<EolDistribution> = Vec::new();
    let mut observations = Vec::new();
    for id in &ids {
        let cell: IngestedCell = read_json(&cells_dir(&ctx.out).join(format!("{id}.json")))?;
        let trace = cell.trace();
        let dir = sim_dir.join(id);
        let predictions = read_rul_csv(&dir.join("rul.csv"), eol)?;
        let series = match rul_errors(&trace, &predictions, eol) {
            Ok(s) => s,
            Err(e @ EvalError::NoTrueEol { .. }) => {
                warnings.push(format!("skipping {id}: {e}"));
                continue;
            }
            Err(e) => return Err(CliError::Runtime(e.to_string())),
        };
        for (cycle, path) in numbered_files(&dir, "eol_")? {
            if cycle > series.true_eol {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            dists.push(
                EolDistribution::from_csv(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
            );
            observations.push(f64::from(series.true_eol));
        }
        cells.push(CellEvaluation {
            cell_id: id.clone(),
            true_eol: series.true_eol,
            n_predictions: series.points.len(),
            median_signed_error: series.median_signed_error(),
        });
        series_files.push((format!("{id}_rul_errors.csv"), series.to_csv()));
    }
    if dists.is_empty() {
        return Err(CliError::Data("no predictions with a known true EOL to evaluate".into()));
    }
    let curve = calibration_curve(&dists, &observations, &DEFAULT_LEVELS)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    if curve.n_samples == 1 {
        warnings.push("calibration curve rests on a single prediction".into());
    }
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let eval_dir = ctx.out.join("evaluate");
    for (name, body) in &series_files {
        write_atomic(&eval_dir.join(name), body.as_bytes())?;
    }
    write_atomic(&eval_dir.join("calibration.csv"), curve.to_csv().as_bytes())?;
    let summary = EvaluateSummary {
        n_cells: cells.len(),
        n_samples: curve.n_samples,
        area_deviation: curve.area_deviation,
        levels: curve.levels.clone(),
        observed: curve.observed.clone(),
        cells,
        warnings,
    };
    write_json(&eval_dir.join("summary.json"), &summary)?;
    println!(
        "evaluated {} cells, {} predictions: calibration area deviation {}",
        summary.n_cells, summary.n_samples, summary.area_deviation
    );
    Ok(())
}
