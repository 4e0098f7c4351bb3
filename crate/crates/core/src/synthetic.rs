//! Seeded synthetic cells for examples, tests and smoke runs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{CellRecord, DatasetError, NormalizedTrace, Split};
use crate::model::{capacity, PowerLawParams};

/// Recipe for one power-law cell with additive Gaussian capacity noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCell {
    pub cell_id: String,
    pub split: Split,
    pub params: PowerLawParams,
    /// Standard deviation of the noise on normalized capacity.
    pub noise: f64,
    /// Recording stops at the first cycle whose noise-free capacity is at or
    /// below this value.
    pub end_q: f64,
    pub nominal_ah: f64,
    pub seed: u64,
}

impl SyntheticCell {
    pub fn new(cell_id: impl Into<String>, params: PowerLawParams) -> Self {
        Self {
            cell_id: cell_id.into(),
            split: Split::Train,
            params,
            noise: 0.0,
            end_q: 0.5,
            nominal_ah: 1.1,
            seed: 0,
        }
    }

    pub fn split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise = sigma;
        self.seed = seed;
        self
    }

    pub fn end_q(mut self, end_q: f64) -> Self {
        self.end_q = end_q;
        self
    }

    /// Normalized capacity per cycle, starting at cycle 1.
    pub fn capacities(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.noise.max(0.0)).expect("finite noise");
        let mut q = Vec::new();
        for k in 1u32.. {
            let clean = capacity(self.params, f64::from(k));
            let e = if self.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            q.push(clean + e);
            if clean <= self.end_q || k == u32::MAX {
                break;
            }
        }
        q
    }

    /// Normalized trace with `q0` equal to the nominal capacity.
    pub fn trace(&self) -> NormalizedTrace {
        let q = self.capacities();
        NormalizedTrace {
            cell_id: self.cell_id.clone(),
            q0_ah: self.nominal_ah,
            extrapolated_from: None,
            cycles: (1..=q.len() as u32).collect(),
            q,
        }
    }

    /// Raw record in Ah; negative noisy samples are clipped to a tiny positive
    /// capacity so the record stays valid.
    pub fn record(&self) -> Result<CellRecord, DatasetError> {
        let q = self.capacities();
        CellRecord::new(
            self.cell_id.clone(),
            self.split,
            (1..=q.len() as u32).collect(),
            q.iter().map(|&q| (q * self.nominal_ah).max(1e-6)).collect(),
            self.nominal_ah,
        )
    }
}

/// Power-law parameters whose end of life at `threshold` falls on `eol`.
pub fn params_for_eol(eol: f64, b: f64, threshold: f64) -> PowerLawParams {
    PowerLawParams {
        a: (1.0 - threshold) / eol.powf(b),
        b,
    }
}

/// A fleet with exponents drawn from `U(5.0, 5.9)` and EOL at 0.5 drawn from
/// `U(600, 800)`. Splits are assigned round-robin, train first.
pub fn random_fleet(n: usize, noise: f64, seed: u64) -> Vec<SyntheticCell> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let b = rng.random_range(5.0..5.9);
            let eol = rng.random_range(600.0..800.0);
            SyntheticCell::new(format!("syn{i:03}"), params_for_eol(eol, b, 0.5))
                .split(Split::ALL[i % 3])
                .noise(noise, seed.wrapping_add(1 + i as u64))
        })
        .collect()
}

/// Serializes records in the five-column ingest format.
pub fn fleet_csv(records: &[CellRecord]) -> String {
    let mut out = String::from("cell_id,split,cycle,discharge_capacity_ah,nominal_capacity_ah\n");
    for r in records {
        for (c, q) in r.cycles.iter().zip(&r.capacity_ah) {
            let _ = writeln!(out, "{},{},{c},{q},{}", r.cell_id, r.split, r.nominal_capacity_ah);
        }
    }
    out
}
