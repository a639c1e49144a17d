//! Poissonian shot noise on count records and Monte Carlo
//! characterization of estimator precision versus measurement strength.
//!
//! Counting model: the scan dwells at each reference position long
//! enough to collect the full pair budget, the phase settings of one
//! position share that budget, and the spectrometer resolves every
//! frequency bin of a setting simultaneously. A spectral cell therefore
//! accumulates `total_pairs * rate * d_omega / M_phi` expected counts,
//! a broadband cell `total_pairs * rate / M_phi`, and a two-photon cell
//! picks up one `d_omega` per spectrally resolved photon (both photons
//! are assumed to share the grid spacing). Every cell is an independent
//! Poisson draw.
//!
//! Out of scope: detector dead time, afterpulsing, accidental
//! coincidences, timing jitter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

use crate::grid::TemporalGrid;
use crate::interferometer::RateTable;
use crate::states::DensityMatrix;
use crate::tomography::{
    estimate_background, estimate_weak_value_subtracted, time_slice_records, CountRecord,
    TomographyError,
};

/// Largest expected count that still lands on exact integers in f64.
const MAX_EXACT_COUNT: f64 = 9_007_199_254_740_992.0;

/// Errors from the sampling and sweep layer.
#[derive(Debug, Error)]
pub enum NoiseError {
    /// Returned when the pair budget is zero.
    #[error("total_pairs must be at least 1")]
    EmptyBudget,
    /// Returned when an expected count leaves the exact-integer range
    /// of f64.
    #[error("expected count {lambda:.3e} exceeds the exact-integer range")]
    Overflow { lambda: f64 },
    /// Returned when a variance sweep is requested with too few trials
    /// to say anything.
    #[error("need at least 100 trials, got {n_trials}")]
    TooFewTrials { n_trials: usize },
    /// Returned when fewer than two trials of a sweep point produced an
    /// estimate.
    #[error("only {succeeded} of {n_trials} trials succeeded at theta = {theta}")]
    AllTrialsFailed {
        theta: f64,
        succeeded: usize,
        n_trials: usize,
    },
    #[error(transparent)]
    Tomography(#[from] TomographyError),
}

/// Photon-pair budget and RNG seed for one sampling run. The cells to
/// populate are the rate records handed to [`sample_counts`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotNoiseConfig {
    pub total_pairs: u64,
    pub seed: u64,
}

impl ShotNoiseConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.total_pairs == 0 {
            return Err(NoiseError::EmptyBudget);
        }
        Ok(())
    }
}

/// Cell identity with the phases stripped: records sharing a key are
/// one physical setting scanned over phase, so they share the budget.
type CellKey = (Option<usize>, u64, u64, Option<(usize, u64, u64)>);

fn cell_key(record: &CountRecord) -> CellKey {
    (
        record.omega_index,
        record.reference_peak_time.to_bits(),
        record.theta.to_bits(),
        record.pair.map(|p| {
            (
                p.omega_index,
                p.reference_peak_time.to_bits(),
                p.theta.to_bits(),
            )
        }),
    )
}

/// Distinct phase settings per cell family.
fn phase_multiplicities(rates: &[CountRecord]) -> BTreeMap<CellKey, usize> {
    let mut phases: BTreeMap<CellKey, BTreeSet<(u64, Option<u64>)>> = BTreeMap::new();
    for r in rates {
        phases
            .entry(cell_key(r))
            .or_default()
            .insert((r.phi.to_bits(), r.pair.map(|p| p.phi.to_bits())));
    }
    phases.into_iter().map(|(k, set)| (k, set.len())).collect()
}

fn expected_count(
    record: &CountRecord,
    total_pairs: u64,
    d_omega: f64,
    m_phi: usize,
) -> Result<f64, NoiseError> {
    let mut measure = 1.0 / m_phi as f64;
    if record.omega_index.is_some() {
        measure *= d_omega;
    }
    if record.pair.is_some() {
        measure *= d_omega;
    }
    let lambda = total_pairs as f64 * record.rate_or_count * measure;
    if !lambda.is_finite() || lambda > MAX_EXACT_COUNT {
        return Err(NoiseError::Overflow { lambda });
    }
    Ok(lambda)
}

fn sample_with_rng(
    grid: &TemporalGrid,
    rates: &[CountRecord],
    total_pairs: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CountRecord>, NoiseError> {
    let multiplicities = phase_multiplicities(rates);
    let mut sampled = Vec::with_capacity(rates.len());
    for r in rates {
        r.validate()?;
        let m_phi = multiplicities[&cell_key(r)];
        let lambda = expected_count(r, total_pairs, grid.d_omega(), m_phi)?;
        let count = if lambda == 0.0 {
            0.0
        } else {
            let poisson =
                Poisson::new(lambda).expect("lambda checked positive and finite");
            poisson.sample(rng)
        };
        sampled.push(CountRecord {
            rate_or_count: count,
            is_sampled: true,
            ..*r
        });
    }
    Ok(sampled)
}

/// Draws one independent Poisson count per record, with means set by
/// the budget and the cell measure (see the module doc). Reproducible:
/// the same config and rates give the same counts.
pub fn sample_counts(
    grid: &TemporalGrid,
    rates: &[CountRecord],
    cfg: &ShotNoiseConfig,
) -> Result<Vec<CountRecord>, NoiseError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_with_rng(grid, rates, cfg.total_pairs, &mut rng)
}

/// One strength setting of a variance sweep: empirical mean and
/// standard deviation of the background-subtracted weak-value estimate
/// over the successful trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub theta: f64,
    pub mean: f64,
    pub std: f64,
    pub n_trials: usize,
    pub failed_trials: usize,
}

/// Monte Carlo sweep of estimator precision versus strength at one
/// (reference time, frequency) cell.
///
/// Per trial: exact rates for a frequency scan at the reference time
/// (phases 0 and pi), Poisson sampling, background estimated from the
/// most detuned bins of the sampled data, then the subtracted
/// estimator at the requested cell. Estimator failures (no counts, no
/// signal after subtraction) are counted as failed trials.
///
/// Trials run in parallel; each derives its RNG stream from
/// `(cfg.seed, trial index)`, so parallel and serial runs agree
/// bit-for-bit.
pub fn estimator_variance_sweep(
    rho: &DensityMatrix,
    time_index: usize,
    omega_index: usize,
    thetas: &[f64],
    cfg: &ShotNoiseConfig,
    n_trials: usize,
) -> Result<Vec<VarianceRow>, NoiseError> {
    if n_trials < 100 {
        return Err(NoiseError::TooFewTrials { n_trials });
    }
    cfg.validate()?;
    let grid = *rho.grid();
    let table = RateTable::ideal(rho);
    let mut rows = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let rates = time_slice_records(&table, theta, 2, time_index);
        let estimates = (0..n_trials)
            .into_par_iter()
            .map(|trial| -> Result<Option<f64>, NoiseError> {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(trial as u64 + 1);
                let sampled = sample_with_rng(&grid, &rates, cfg.total_pairs, &mut rng)?;
                Ok(pipeline_estimate(&sampled, theta, omega_index).ok())
            })
            .collect::<Result<Vec<_>, NoiseError>>()?;
        let successes: Vec<f64> = estimates.iter().copied().flatten().collect();
        let failed = n_trials - successes.len();
        if successes.len() < 2 {
            return Err(NoiseError::AllTrialsFailed {
                theta,
                succeeded: successes.len(),
                n_trials,
            });
        }
        let mean = successes.iter().sum::<f64>() / successes.len() as f64;
        let var = successes
            .iter()
            .map(|x| (x - mean).powi(2))
            .sum::<f64>()
            / (successes.len() - 1) as f64;
        rows.push(VarianceRow {
            theta,
            mean,
            std: var.sqrt(),
            n_trials,
            failed_trials: failed,
        });
    }
    Ok(rows)
}

fn pipeline_estimate(
    sampled: &[CountRecord],
    theta: f64,
    omega_index: usize,
) -> Result<f64, TomographyError> {
    let background = estimate_background(sampled)?;
    let cell: Vec<CountRecord> = sampled
        .iter()
        .filter(|r| r.omega_index == Some(omega_index))
        .copied()
        .collect();
    estimate_weak_value_subtracted(&cell, theta, background)
}
