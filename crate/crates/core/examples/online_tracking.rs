//! Track one noisy cell with the particle filter and print RUL predictions as
//! measurements stream in.
//!
//! cargo run --release --example online_tracking

use cell_twin::filter::{FilterConfig, ParticleEnsemble};
use cell_twin::model::{analytic_eol, PowerLawParams};
use cell_twin::prognosis::{project, rul, DEFAULT_BANDS};
use cell_twin::synthetic::{params_for_eol, SyntheticCell};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = params_for_eol(760.0, 5.6, 0.5);
    let trace = SyntheticCell::new("demo", truth).noise(0.01, 42).trace();
    let true_eol = analytic_eol(truth, 0.5)?;

    let cfg = FilterConfig { seed: 42, ..FilterConfig::default() };
    let prior = PowerLawParams::reference();
    println!("prior EOL {:.0}, true EOL {true_eol:.0}", analytic_eol(prior, 0.5)?);

    let mut ens = ParticleEnsemble::init(&cfg)?;
    println!("cycle  median RUL  [5%, 95%]     true RUL   ESS");
    for at in (100..=700).step_by(100) {
        let steps = ens.assimilate(&trace, at, &cfg.noise)?;
        let proj = project(&ens, at, 0.5, &DEFAULT_BANDS)?;
        let r = rul(&proj, at, &DEFAULT_BANDS)?;
        println!(
            "{at:>5}  {:>10.0}  [{:.0}, {:.0}]  {:>10.0}  {:>5.0}",
            r.rul_median,
            r.rul_quantiles[0].1,
            r.rul_quantiles[1].1,
            true_eol - f64::from(at),
            steps.last().map_or(f64::NAN, |s| s.ess),
        );
    }
    let s = ens.posterior_summary();
    println!("posterior mean log10 a {:.3}, b {:.3}", s.mean_log10_a, s.mean_b);
    Ok(())
}
