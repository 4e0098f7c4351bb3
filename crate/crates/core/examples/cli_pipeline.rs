//! Drive the five `cell-twin` stages in-process on a synthetic fleet.
//!
//! cargo run --release --example cli_pipeline [-- output/dir]

use cell_twin::cli::main_with_args;
use cell_twin::synthetic::{fleet_csv, random_fleet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let tmp = tempfile::tempdir()?;
    let root = std::env::args().nth(1).map_or_else(|| tmp.path().to_path_buf(), Into::into);
    std::fs::create_dir_all(&root)?;

    let records = random_fleet(9, 0.005, 21)
        .into_iter()
        .map(|c| c.end_q(0.75).record())
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::write(root.join("cells.csv"), fleet_csv(&records))?;
    std::fs::write(
        root.join("run.json"),
        r#"{
  "dataset": "cells.csv",
  "output_dir": "out",
  "filter": {"n_particles": 500},
  "schedule": {"stride": 50}
}"#,
    )?;

    let config = root.join("run.json");
    for stage in ["ingest", "calibrate", "simulate", "retire", "evaluate"] {
        let code = main_with_args(["cell-twin", stage, "--config", config.to_str().unwrap(), "--seed", "7"]);
        if code != 0 {
            return Err(format!("{stage} exited with {code}").into());
        }
    }
    println!("outputs in {}", root.join("out").display());
    Ok(())
}
