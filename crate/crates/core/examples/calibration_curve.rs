//! Reliability of the filter's EOL predictions across a synthetic fleet.
//!
//! cargo run --release --example calibration_curve

use cell_twin::eval::{calibration_curve, DEFAULT_LEVELS};
use cell_twin::filter::{FilterConfig, ParticleEnsemble};
use cell_twin::model::analytic_eol;
use cell_twin::prognosis::{eol_distribution, project};
use cell_twin::synthetic::random_fleet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for (i, cell) in random_fleet(30, 0.01, 8).iter().enumerate() {
        let trace = cell.trace();
        let cfg = FilterConfig { n_particles: 500, seed: i as u64, ..FilterConfig::default() };
        let mut ens = ParticleEnsemble::init(&cfg)?;
        for at in [300, 400, 500] {
            ens.assimilate(&trace, at, &cfg.noise)?;
            predictions.push(eol_distribution(&project(&ens, at, 0.5, &[])?));
            truths.push(analytic_eol(cell.params, 0.5)?);
        }
    }
    let curve = calibration_curve(&predictions, &truths, &DEFAULT_LEVELS)?;
    print!("{}", curve.to_csv());
    println!("n = {}, mean |observed - expected| = {:.3}", curve.n_samples, curve.area_deviation);
    Ok(())
}
