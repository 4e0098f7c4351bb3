//! Pick the utility-optimal first-life retirement cycle for a cell that has
//! just crossed the 95% trigger.
//!
//! cargo run --release --example retirement_decision

use cell_twin::dataset::{trigger_cycle, DEFAULT_TRIGGER_THRESHOLD};
use cell_twin::filter::{FilterConfig, ParticleEnsemble};
use cell_twin::retirement::{optimize_retirement, RetirementOptions};
use cell_twin::synthetic::{params_for_eol, SyntheticCell};
use cell_twin::utility::reference_attributes;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let specs = reference_attributes();
    for s in &specs {
        println!(
            "{:<9} on [{}, {}], r = {}: sigma {:.4}, tau {:.6e}",
            s.name, s.utility.l_u, s.utility.h_u, s.utility.r, s.utility.sigma_coef, s.utility.tau_coef
        );
    }

    for (id, eol) in [("short", 600.0), ("median", 700.0), ("long", 2400.0)] {
        let trace = SyntheticCell::new(id, params_for_eol(eol, 5.45, 0.5)).noise(0.005, 3).trace();
        let current = trigger_cycle(&trace, DEFAULT_TRIGGER_THRESHOLD).expect("cell fades past 95%");
        let cfg = FilterConfig { seed: 3, ..FilterConfig::default() };
        let mut ens = ParticleEnsemble::init(&cfg)?;
        ens.assimilate(&trace, current, &cfg.noise)?;
        let decision = optimize_retirement(&trace, &ens, &specs, current, &RetirementOptions::default())?;
        println!(
            "{id:>6}: triggered at {current}, {} candidates, retire at cycle {} (utility {:.4})",
            decision.candidates.len(),
            decision.optimal_cycle,
            decision.optimal_utility
        );
    }
    Ok(())
}
