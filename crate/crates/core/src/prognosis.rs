//! Capacity projection, end-of-life distribution and RUL prediction.
//!
//! Projection freezes each particle's parameters: particle `p` contributes the
//! curve `capacity(params_p, k)` and the analytic end of life
//! `analytic_eol(params_p, threshold)`, carrying its filter weight.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::filter::ParticleEnsemble;
use crate::model::{capacity_log10, eol_log10};
use crate::stats::{weighted_quantile, weighted_quantile_sorted};

/// Default end-of-life threshold (end of second life).
pub const DEFAULT_EOL_THRESHOLD: f64 = 0.5;

/// Default quantile bands exported alongside the median trajectory.
pub const DEFAULT_BANDS: [f64; 2] = [0.05, 0.95];

/// The horizon is the weighted quantile of per-particle EOL at this level.
pub const HORIZON_QUANTILE: f64 = 0.99;

/// Upper bound on the projected span, in cycles.
pub const MAX_HORIZON_SPAN: u32 = 100_000;

#[derive(Debug, Error, PartialEq)]
pub enum PrognosisError {
    #[error("projection starts at cycle {from_cycle}, before the last assimilated cycle {last_cycle}")]
    FromBeforeAssimilated { from_cycle: u32, last_cycle: u32 },
    #[error("threshold {0} must lie in (0, 1)")]
    InvalidThreshold(f64),
    #[error("quantile level {0} must lie in [0, 1]")]
    InvalidQuantile(f64),
    #[error("cycle must be positive")]
    ZeroCycle,
}

/// One quantile band of the projected capacity.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileBand {
    pub level: f64,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityProjection {
    pub from_cycle: u32,
    pub horizon_cycle: u32,
    /// Weighted lower median per cycle `from_cycle..=horizon_cycle`, clamped
    /// below at `eol_threshold`.
    pub median_q: Vec<f64>,
    pub quantile_bands: Vec<QuantileBand>,
    pub per_particle_eol: Vec<f64>,
    pub eol_weights: Vec<f64>,
    pub eol_threshold: f64,
}

impl CapacityProjection {
    pub fn cycles(&self) -> impl Iterator<Item = u32> {
        self.from_cycle..=self.horizon_cycle
    }

    /// Projected median at `cycle`, if inside the projected span.
    pub fn median_at(&self, cycle: u32) -> Option<f64> {
        if cycle < self.from_cycle {
            return None;
        }
        self.median_q.get((cycle - self.from_cycle) as usize).copied()
    }

    /// Weighted lower median of the per-particle EOL.
    pub fn median_eol(&self) -> f64 {
        weighted_quantile(&self.per_particle_eol, &self.eol_weights, 0.5).expect("non-empty")
    }

    /// Plot feed: `cycle,median_q,q05,q95` (one column per configured band).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,median_q");
        for band in &self.quantile_bands {
            let _ = write!(out, ",{}", band_label(band.level));
        }
        out.push('\n');
        for (i, cycle) in self.cycles().enumerate() {
            let _ = write!(out, "{cycle},{}", self.median_q[i]);
            for band in &self.quantile_bands {
                let _ = write!(out, ",{}", band.q[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Column label for a band level, e.g. `0.05` -> `q05`.
pub fn band_label(level: f64) -> String {
    let pct = level * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("q{:02}", pct.round() as u32)
    } else {
        format!("q{pct}")
    }
}

fn check_level(level: f64) -> Result<(), PrognosisError> {
    if (0.0..=1.0).contains(&level) {
        Ok(())
    } else {
        Err(PrognosisError::InvalidQuantile(level))
    }
}

/// Projects every particle forward from `from_cycle` and collects the
/// end-of-life sample.
pub fn project(
    ens: &ParticleEnsemble,
    from_cycle: u32,
    eol_threshold: f64,
    quantiles: &[f64],
) -> Result<CapacityProjection, PrognosisError> {
    if from_cycle == 0 {
        return Err(PrognosisError::ZeroCycle);
    }
    if from_cycle < ens.last_cycle {
        return Err(PrognosisError::FromBeforeAssimilated {
            from_cycle,
            last_cycle: ens.last_cycle,
        });
    }
    if !(eol_threshold > 0.0 && eol_threshold < 1.0) {
        return Err(PrognosisError::InvalidThreshold(eol_threshold));
    }
    for &level in quantiles {
        check_level(level)?;
    }

    let per_particle_eol: Vec<f64> = ens
        .log10_a
        .iter()
        .zip(&ens.b)
        .map(|(&la, &b)| eol_log10(la, b, eol_threshold))
        .collect();
    let eol_weights = ens.weight.clone();

    let p99 = weighted_quantile(&per_particle_eol, &eol_weights, HORIZON_QUANTILE)
        .expect("ensemble is non-empty");
    let cap = from_cycle.saturating_add(MAX_HORIZON_SPAN);
    let horizon_cycle = if p99.is_finite() {
        (p99.ceil().max(0.0).min(f64::from(cap)) as u32).max(from_cycle)
    } else {
        cap
    };

    // One row per cycle: the median followed by each band.
    let mut levels = Vec::with_capacity(quantiles.len() + 1);
    levels.push(0.5);
    levels.extend_from_slice(quantiles);
    let rows: Vec<Vec<f64>> = (from_cycle..=horizon_cycle)
        .into_par_iter()
        .map(|cycle| {
            let k = f64::from(cycle);
            let q: Vec<f64> = ens
                .log10_a
                .iter()
                .zip(&ens.b)
                .map(|(&la, &b)| capacity_log10(la, b, k))
                .collect();
            let mut order: Vec<usize> = (0..q.len()).collect();
            order.sort_by(|&i, &j| q[i].total_cmp(&q[j]).then(i.cmp(&j)));
            levels
                .iter()
                .map(|&level| {
                    weighted_quantile_sorted(&q, &ens.weight, &order, level)
                        .expect("non-empty")
                        .max(eol_threshold)
                })
                .collect()
        })
        .collect();

    let median_q = rows.iter().map(|r| r[0]).collect();
    let quantile_bands = quantiles
        .iter()
        .enumerate()
        .map(|(j, &level)| QuantileBand {
            level,
            q: rows.iter().map(|r| r[j + 1]).collect(),
        })
        .collect();

    Ok(CapacityProjection {
        from_cycle,
        horizon_cycle,
        median_q,
        quantile_bands,
        per_particle_eol,
        eol_weights,
        eol_threshold,
    })
}

/// Weighted empirical distribution of end-of-life cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct EolDistribution {
    /// `(eol, weight)` sorted by `eol`; weights sum to 1.
    pub points: Vec<(f64, f64)>,
}

impl EolDistribution {
    pub fn new(values: &[f64], weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut points: Vec<(f64, f64)> = values
            .iter()
            .zip(weights)
            .map(|(&v, &w)| (v, w / total))
            .collect();
        points.sort_by(|x, y| x.0.total_cmp(&y.0));
        Self { points }
    }

    /// Right-continuous CDF: total weight at or below `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let end = self.points.partition_point(|p| p.0 <= x);
        if end == self.points.len() {
            return 1.0;
        }
        self.points[..end].iter().map(|p| p.1).sum::<f64>().min(1.0)
    }

    /// Weighted lower quantile.
    pub fn quantile(&self, level: f64) -> f64 {
        let (values, weights): (Vec<f64>, Vec<f64>) = self.points.iter().copied().unzip();
        let order: Vec<usize> = (0..values.len()).collect();
        weighted_quantile_sorted(&values, &weights, &order, level).expect("non-empty")
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }

    /// Plot feed: `eol_cycle,weight`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eol_cycle,weight\n");
        for (eol, w) in &self.points {
            let _ = writeln!(out, "{eol},{w}");
        }
        out
    }

    /// Parses the `eol_cycle,weight` export.
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        match lines.next() {
            Some("eol_cycle,weight") => {}
            other => return Err(format!("unexpected header {other:?}")),
        }
        let mut values = Vec::new();
        let mut weights = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let (v, w) = line
                .split_once(',')
                .ok_or_else(|| format!("line {}: expected two columns", i + 2))?;
            values.push(v.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?);
            weights.push(w.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?);
        }
        if values.is_empty() {
            return Err("empty distribution".into());
        }
        Ok(Self::new(&values, &weights))
    }
}

pub fn eol_distribution(proj: &CapacityProjection) -> EolDistribution {
    EolDistribution::new(&proj.per_particle_eol, &proj.eol_weights)
}

/// Remaining useful life at `at_cycle`.
#[derive(Debug, Clone, PartialEq)]
pub struct RulPrediction {
    pub at_cycle: u32,
    pub rul_median: f64,
    /// `(level, cycles)` in ascending level order.
    pub rul_quantiles: Vec<(f64, f64)>,
    pub eol_threshold: f64,
}

/// RUL per particle is `max(eol - at_cycle, 0)`; median and quantiles are
/// weighted lower quantiles.
pub fn rul(
    proj: &CapacityProjection,
    at_cycle: u32,
    quantiles: &[f64],
) -> Result<RulPrediction, PrognosisError> {
    for &level in quantiles {
        check_level(level)?;
    }
    let at = f64::from(at_cycle);
    let remaining: Vec<f64> = proj.per_particle_eol.iter().map(|e| (e - at).max(0.0)).collect();
    let q = |level| weighted_quantile(&remaining, &proj.eol_weights, level).expect("non-empty");
    let mut levels = quantiles.to_vec();
    levels.sort_by(f64::total_cmp);
    Ok(RulPrediction {
        at_cycle,
        rul_median: q(0.5),
        rul_quantiles: levels.into_iter().map(|l| (l, q(l))).collect(),
        eol_threshold: proj.eol_threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{analytic_eol, capacity, PowerLawParams};

    fn ensemble(particles: &[(f64, f64)], weights: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble {
            last_cycle: 0,
            seed: 0,
            resample_threshold: 0.5,
            log10_a: particles.iter().map(|p| p.0).collect(),
            b: particles.iter().map(|p| p.1).collect(),
            weight: weights.to_vec(),
        }
    }

    /// `log10 a` that puts the EOL of a `b` particle exactly at `eol`.
    fn log10_a_for(eol: f64, b: f64, threshold: f64) -> f64 {
        (1.0 - threshold).log10() - b * eol.log10()
    }

    #[test]
    fn single_particle_median_is_its_curve() {
        let ens = ensemble(&[(-15.77, 5.45), (-15.77, 5.45)], &[1.0, 0.0]);
        let proj = project(&ens, 100, 0.5, &[]).unwrap();
        let params = PowerLawParams::reference();
        for (i, cycle) in proj.cycles().enumerate() {
            let expected = capacity(params, f64::from(cycle)).max(0.5);
            assert!((proj.median_q[i] - expected).abs() < 1e-12);
        }
        assert_eq!(proj.median_q.len() as u32, proj.horizon_cycle - proj.from_cycle + 1);
    }

    #[test]
    fn reference_particles_share_eol() {
        let ens = ensemble(&[(-15.77, 5.45); 5], &[0.2; 5]);
        let proj = project(&ens, 1, 0.5, &[0.05, 0.95]).unwrap();
        let oracle = 10f64.powf((15.77 + 0.5f64.log10()) / 5.45);
        for eol in &proj.per_particle_eol {
            assert!((eol - oracle).abs() < 1e-9);
            assert!((eol - 689.0).abs() < 1.0);
        }
        assert_eq!(proj.horizon_cycle, oracle.ceil() as u32);
    }

    #[test]
    fn two_point_lower_median() {
        let ens = ensemble(
            &[(log10_a_for(600.0, 5.0, 0.5), 5.0), (log10_a_for(800.0, 5.0, 0.5), 5.0)],
            &[0.5, 0.5],
        );
        let proj = project(&ens, 1, 0.5, &[]).unwrap();
        assert!((proj.median_eol() - 600.0).abs() < 1e-9);
    }

    #[test]
    fn median_matches_brute_force_and_is_non_increasing() {
        let particles: Vec<(f64, f64)> = (0..10)
            .map(|i| (-15.0 - 0.17 * i as f64, 4.8 + 0.13 * ((i * 7) % 10) as f64))
            .collect();
        let weights: Vec<f64> = (1..=10).map(|i| i as f64 / 55.0).collect();
        let ens = ensemble(&particles, &weights);
        let proj = project(&ens, 300, 0.5, &[0.05, 0.95]).unwrap();
        // brute force: sort (q, w) pairs and accumulate
        let brute = |k: f64| {
            let mut pairs: Vec<(f64, f64)> = particles
                .iter()
                .zip(&weights)
                .map(|(p, w)| (capacity(PowerLawParams::from_log10(p.0, p.1).unwrap(), k), *w))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            let mut c = 0.0;
            for (q, w) in pairs {
                c += w;
                if c >= 0.5 - 1e-12 {
                    return q;
                }
            }
            unreachable!()
        };
        assert!((proj.median_q[0] - brute(300.0).max(0.5)).abs() < 1e-12);
        assert!((proj.median_at(450).unwrap() - brute(450.0).max(0.5)).abs() < 1e-12);
        assert!(proj.median_q.windows(2).all(|w| w[1] <= w[0]));
        let lo = &proj.quantile_bands[0].q;
        let hi = &proj.quantile_bands[1].q;
        for i in 0..proj.median_q.len() {
            assert!(lo[i] <= proj.median_q[i] && proj.median_q[i] <= hi[i]);
        }
    }

    #[test]
    fn projection_is_pure() {
        let ens = ensemble(&[(-15.0, 5.0), (-16.0, 5.6), (-15.5, 5.2)], &[0.3, 0.3, 0.4]);
        assert_eq!(project(&ens, 10, 0.5, &[0.1]), project(&ens, 10, 0.5, &[0.1]));
    }

    #[test]
    fn lower_threshold_means_later_eol() {
        let ens = ensemble(&[(-15.0, 5.0), (-16.0, 5.6), (-15.5, 5.2)], &[0.3, 0.3, 0.4]);
        let deep = project(&ens, 1, 0.5, &[]).unwrap();
        let shallow = project(&ens, 1, 0.8, &[]).unwrap();
        for (d, s) in deep.per_particle_eol.iter().zip(&shallow.per_particle_eol) {
            assert!(d > s);
        }
    }

    #[test]
    fn rejects_projection_into_the_past() {
        let mut ens = ensemble(&[(-15.0, 5.0), (-16.0, 5.6)], &[0.5, 0.5]);
        ens.last_cycle = 50;
        assert_eq!(
            project(&ens, 49, 0.5, &[]),
            Err(PrognosisError::FromBeforeAssimilated { from_cycle: 49, last_cycle: 50 })
        );
        assert_eq!(project(&ens, 50, 1.5, &[]), Err(PrognosisError::InvalidThreshold(1.5)));
    }

    #[test]
    fn eol_cdf_examples() {
        let single = EolDistribution::new(&[689.0], &[1.0]);
        assert_eq!(single.cdf(688.9), 0.0);
        assert_eq!(single.cdf(689.0), 1.0);
        assert_eq!(single.cdf(1e9), 1.0);

        let three = EolDistribution::new(&[800.0, 600.0, 700.0], &[1.0, 1.0, 1.0]);
        assert!((three.cdf(700.0) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(three.cdf(599.0), 0.0);
        assert_eq!(three.median(), 700.0);

        let parsed = EolDistribution::from_csv(&three.to_csv()).unwrap();
        assert_eq!(parsed, three);
    }

    #[test]
    fn cdf_at_own_median() {
        let n = 1000;
        let particles: Vec<(f64, f64)> = (0..n)
            .map(|i| (-15.77 + 0.4 * ((i as f64 * 0.618).fract() - 0.5), 5.45))
            .collect();
        let weights: Vec<f64> = (0..n).map(|i| 1.0 + (i % 5) as f64).collect();
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let proj = project(&ensemble(&particles, &weights), 1, 0.5, &[]).unwrap();
        let dist = eol_distribution(&proj);
        let cdf = dist.cdf(dist.median());
        let max_w = weights.iter().cloned().fold(0.0, f64::max);
        assert!(cdf >= 0.5 - 1e-12 && cdf <= 0.5 + max_w.max(1.0 / n as f64) + 1e-12, "cdf {cdf}");
    }

    #[test]
    fn rul_examples() {
        let reference = ensemble(&[(-15.77, 5.45), (-15.77, 5.45)], &[0.5, 0.5]);
        let proj = project(&reference, 1, 0.5, &[]).unwrap();
        let eol = analytic_eol(PowerLawParams::reference(), 0.5).unwrap();
        let r = rul(&proj, 500, &[0.05, 0.95]).unwrap();
        assert!((r.rul_median - (eol - 500.0)).abs() < 1e-9);
        assert!((r.rul_median - 189.0).abs() < 1.0);

        let late = rul(&proj, 5000, &[0.05, 0.95]).unwrap();
        assert_eq!(late.rul_median, 0.0);
        assert!(late.rul_quantiles.iter().all(|q| q.1 == 0.0));

        let spread = ensemble(
            &[(log10_a_for(600.0, 5.0, 0.5), 5.0), (log10_a_for(800.0, 5.0, 0.5), 5.0)],
            &[0.5, 0.5],
        );
        let proj = project(&spread, 1, 0.5, &[]).unwrap();
        let at = proj.median_eol().floor() as u32;
        assert!(rul(&proj, at + 1, &[]).unwrap().rul_median == 0.0);
        let r = rul(&proj, 100, &[0.9, 0.1]).unwrap();
        assert!(r.rul_quantiles[0].0 < r.rul_quantiles[1].0);
        assert!(r.rul_quantiles[0].1 <= r.rul_quantiles[1].1);
    }

    #[test]
    fn rul_shifts_with_cycle_for_deterministic_ensemble() {
        let ens = ensemble(&[(-15.77, 5.45), (-15.77, 5.45)], &[0.5, 0.5]);
        let proj = project(&ens, 1, 0.5, &[]).unwrap();
        for (at, d) in [(100, 50), (600, 80), (650, 100)] {
            let now = rul(&proj, at, &[]).unwrap().rul_median;
            let later = rul(&proj, at + d, &[]).unwrap().rul_median;
            assert!((later - (now - f64::from(d)).max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_layout() {
        let ens = ensemble(&[(-15.77, 5.45), (-15.77, 5.45)], &[0.5, 0.5]);
        let proj = project(&ens, 680, 0.5, &DEFAULT_BANDS).unwrap();
        let csv = proj.to_csv();
        assert!(csv.starts_with("cycle,median_q,q05,q95\n680,"));
        assert_eq!(csv.lines().count(), proj.median_q.len() + 1);
        assert_eq!(band_label(0.5), "q50");
        assert_eq!(band_label(0.025), "q2.5");
    }
}
