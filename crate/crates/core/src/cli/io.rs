//! Output plumbing: atomic writes and reading back earlier stage outputs.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{NormalizedTrace, Split};

use super::CliError;

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("writing {}: {e}", path.display()));
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fail)?;
    tmp.write_all(contents).map_err(fail)?;
    tmp.flush().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Per-cell ingest output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedCell {
    pub cell_id: String,
    pub split: Split,
    pub q0_ah: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrapolated_from: Option<u32>,
    pub cycles: Vec<u32>,
    pub q: Vec<f64>,
}

impl IngestedCell {
    pub fn new(trace: NormalizedTrace, split: Split) -> Self {
        Self {
            cell_id: trace.cell_id,
            split,
            q0_ah: trace.q0_ah,
            extrapolated_from: trace.extrapolated_from,
            cycles: trace.cycles,
            q: trace.q,
        }
    }

    pub fn trace(&self) -> NormalizedTrace {
        NormalizedTrace {
            cell_id: self.cell_id.clone(),
            q0_ah: self.q0_ah,
            extrapolated_from: self.extrapolated_from,
            cycles: self.cycles.clone(),
            q: self.q.clone(),
        }
    }
}

pub fn cells_dir(out: &Path) -> PathBuf {
    out.join("cells")
}

/// Every ingested cell, sorted by id.
pub fn read_ingested(out: &Path) -> Result<Vec<IngestedCell>, CliError> {
    let dir = cells_dir(out);
    let entries = std::fs::read_dir(&dir).map_err(|e| {
        CliError::Data(format!("{}: {e} (run `cell-twin ingest` first)", dir.display()))
    })?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut cells: Vec<IngestedCell> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    for c in &cells {
        c.trace()
            .validate()
            .map_err(|e| CliError::Data(format!("ingested cell {}: {e}", c.cell_id)))?;
    }
    cells.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    if cells.is_empty() {
        return Err(CliError::Data(format!("no ingested cells in {}", dir.display())));
    }
    Ok(cells)
}

/// Cycle numbers of files named `<prefix><cycle>.csv`, ascending.
pub fn numbered_files(dir: &Path, prefix: &str) -> Result<Vec<(u32, PathBuf)>, CliError> {
    let entries =
        std::fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(cycle) = name
            .strip_prefix(prefix)
            .and_then(|rest| rest.strip_suffix(".csv"))
            .and_then(|c| c.parse::<u32>().ok())
        {
            out.push((cycle, path));
        }
    }
    out.sort();
    Ok(out)
}
