//! Load a per-cycle capacity CSV, normalize each cell and extend it linearly to
//! the end-of-life floor.
//!
//! cargo run --example ingest_normalize [-- path/to/cells.csv]

use cell_twin::dataset::{extend_linear, load_cells, normalize, trigger_cycle, DEFAULT_EXTEND_FLOOR, DEFAULT_EXTEND_TAIL, DEFAULT_NORMALIZE_WINDOW, DEFAULT_TRIGGER_THRESHOLD};
use cell_twin::synthetic::{fleet_csv, random_fleet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let path = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            // measured down to 80% capacity, like a first-life test campaign
            let records = random_fleet(6, 0.005, 11)
                .into_iter()
                .map(|c| c.end_q(0.8).record())
                .collect::<Result<Vec<_>, _>>()?;
            let path = tmp.path().join("cells.csv");
            std::fs::write(&path, fleet_csv(&records))?;
            path
        }
    };

    for record in load_cells(&path, None)? {
        let trace = normalize(&record, DEFAULT_NORMALIZE_WINDOW)?;
        let extended = extend_linear(&trace, DEFAULT_EXTEND_TAIL, DEFAULT_EXTEND_FLOOR)?;
        println!(
            "{:>8} {:<6} q0 {:.4} Ah, measured to cycle {} (q {:.3}), extended to cycle {}, trigger at {:?}",
            record.cell_id,
            record.split.as_str(),
            trace.q0_ah,
            trace.last_cycle(),
            trace.q.last().unwrap(),
            extended.last_cycle(),
            trigger_cycle(&trace, DEFAULT_TRIGGER_THRESHOLD),
        );
    }
    Ok(())
}
