//! Offline least-squares calibration of the power-law fade model on a fleet.
//!
//! cargo run --example fleet_calibration

use cell_twin::calib::{fit_power_law_with, fleet_calibrate, FitOptions};
use cell_twin::synthetic::random_fleet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cells = random_fleet(12, 0.01, 5);
    let traces: Vec<_> = cells.iter().map(|c| c.trace()).collect();

    let plain = FitOptions { refine: false, ..FitOptions::default() };
    println!("cell    true b   log-linear b   refined b");
    for (cell, trace) in cells.iter().zip(&traces) {
        let ols = fit_power_law_with(trace, &plain)?;
        let refined = fit_power_law_with(trace, &FitOptions::default())?;
        println!("{}  {:.3}    {:>8.3}      {:.3}", cell.cell_id, cell.params.b, ols.b, refined.b);
    }

    let fleet = fleet_calibrate(&traces, &FitOptions::default())?;
    println!(
        "\nfleet median log10 a {:.3}, median b {:.3}; total Ah p5/p50/p95 = {:.0}/{:.0}/{:.0}",
        fleet.median_log10_a,
        fleet.median_b,
        fleet.ah_percentile(5).unwrap(),
        fleet.ah_percentile(50).unwrap(),
        fleet.ah_percentile(95).unwrap(),
    );
    Ok(())
}
