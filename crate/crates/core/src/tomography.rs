//! Inverse pipeline: from coincidence records back to weak values,
//! time-frequency quasiprobability distributions, density matrices and
//! wavefunctions.
//!
//! Everything here consumes [`CountRecord`] collections, which may hold
//! exact rates (forward model) or Poisson-sampled counts. All
//! extractions are ratio- or renormalization-based, so the overall
//! scale of the records (rate densities vs raw counts) cancels.
//!
//! The fringe scans exploit that every coincidence rate contains only
//! the `e^{0}` and `e^{+-i phi}` harmonics of the probe filter phase: a
//! discrete scan over `M >= 3` equally spaced phases recovers the
//! fringe coefficient exactly, not approximately. The `e^{+i phi}`
//! coefficient equals `-(1/8) sin theta cos theta <omega|t><t|rho|omega>`,
//! which is the time-frequency quasiprobability this module inverts.
//!
//! Reconstructed wavefunctions carry one arbitrary global phase; use
//! [`fix_global_phase`] before comparing two of them.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, TAU};
use thiserror::Error;

use crate::grid::{GridError, TemporalGrid, INV_SQRT_2PI};
use crate::interferometer::{
    probe_detection_probability, two_photon_coincidence_rate, InterferometerError,
    MeasurementSettings, RateTable, TWO_PHOTON_CELL_CAP,
};
use crate::linalg;
use crate::states::{DensityMatrix, PureState, ReferencePulse, StateError, TwoPhotonPureState};

/// Spectral density below which post-selected quantities are refused.
pub const POST_SELECTION_FLOOR: f64 = 1e-14;

/// Largest fringe-coefficient magnitude, relative to the largest record
/// value, below which a wavefunction extraction is considered dead.
const SIGNAL_FLOOR: f64 = 1e-10;

/// Tolerance for matching phases and reference times against each other
/// and against the grid.
const MATCH_TOL: f64 = 1e-9;

/// Errors from the inverse pipeline.
#[derive(Debug, Error)]
pub enum TomographyError {
    /// Returned when a record carries a negative rate or count.
    #[error("record has negative rate or count {value}")]
    NegativeValue { value: f64 },
    /// Returned when a sampled record carries a non-integer count.
    #[error("sampled record has non-integer count {value}")]
    NonIntegerCount { value: f64 },
    /// Returned when the strength lies outside the usable range.
    #[error("measurement strength theta = {theta} outside (0, pi/4]")]
    ThetaOutOfRange { theta: f64 },
    /// Returned when records carry a strength other than the requested
    /// one.
    #[error("record strength {found} does not match requested {requested}")]
    MixedThetas { requested: f64, found: f64 },
    /// Returned when records mix post-selections that must be fixed.
    #[error("records mix {what} values that must all be equal")]
    MixedSelection { what: &'static str },
    /// Returned when single-photon operations receive two-photon
    /// records or vice versa.
    #[error("record pair fields do not match the operation (expected pair: {expected})")]
    PairMismatch { expected: bool },
    /// Returned when a record lacks the frequency selection the
    /// operation needs.
    #[error("record has no frequency selection")]
    MissingFrequency,
    /// Returned when the post-selected spectral density is below
    /// [`POST_SELECTION_FLOOR`].
    #[error("post-selection density {density:.3e} below floor")]
    UndefinedWeakValue { density: f64 },
    /// Returned when a fringe denominator vanishes.
    #[error("no counts in the fringe denominator")]
    NoCounts,
    /// Returned when the signal left after background subtraction (or
    /// in a fringe coefficient) is too small to invert.
    #[error("insufficient signal: {detail}")]
    InsufficientSignal { detail: String },
    /// Returned when fewer than 3 distinct phases are available.
    #[error("fringe scan has {distinct} distinct phases, need at least 3")]
    InsufficientFringe { distinct: usize },
    /// Returned when the scan phases are not equally spaced over the
    /// full circle.
    #[error("scan phases are not equally spaced over 2 pi")]
    UnevenPhases,
    /// Returned when the (t, omega) coverage has holes.
    #[error("scan is missing {missing} of {expected} cells")]
    IncompleteScan { missing: usize, expected: usize },
    /// Returned when a reconstructed matrix fails the Hermiticity
    /// check; reported, never silently repaired.
    #[error("reconstruction is not Hermitian: defect {defect:.3e} vs scale {scale:.3e}")]
    NotHermitian { defect: f64, scale: f64 },
    /// Returned when too few distinct frequency bins exist to estimate
    /// the background from data.
    #[error("only {bins} distinct frequency bins, need at least 10 for a data-driven background")]
    InsufficientDetunedBins { bins: usize },
    /// Returned when a two-photon extraction would exceed the joint
    /// grid cap.
    #[error("joint grid has {cells} cells, exceeding the cap of {cap}")]
    JointTooLarge { cells: usize, cap: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Interferometer(#[from] InterferometerError),
}

/// Measurement settings of the second photon in a coincidence record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSettings {
    pub omega_index: usize,
    pub reference_peak_time: f64,
    pub phi: f64,
    pub theta: f64,
}

/// One cell of a measurement: settings plus the observed rate density
/// (`is_sampled = false`) or Poisson count (`is_sampled = true`).
///
/// `omega_index = None` marks a broadband record (probe detection
/// without spectral filtering of the signal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub omega_index: Option<usize>,
    pub reference_peak_time: f64,
    pub phi: f64,
    pub theta: f64,
    pub rate_or_count: f64,
    pub is_sampled: bool,
    pub pair: Option<PairSettings>,
}

impl CountRecord {
    /// Checks the type invariants: non-negative value, integer counts
    /// when sampled.
    pub fn validate(&self) -> Result<(), TomographyError> {
        if !(self.rate_or_count >= 0.0) {
            return Err(TomographyError::NegativeValue {
                value: self.rate_or_count,
            });
        }
        if self.is_sampled && self.rate_or_count.fract() != 0.0 {
            return Err(TomographyError::NonIntegerCount {
                value: self.rate_or_count,
            });
        }
        Ok(())
    }
}

fn validate_records(records: &[CountRecord], theta: f64) -> Result<(), TomographyError> {
    if !(theta.is_finite() && theta > 0.0 && theta <= FRAC_PI_4) {
        return Err(TomographyError::ThetaOutOfRange { theta });
    }
    for r in records {
        r.validate()?;
        if (r.theta - theta).abs() > MATCH_TOL {
            return Err(TomographyError::MixedThetas {
                requested: theta,
                found: r.theta,
            });
        }
    }
    Ok(())
}

/// Groups record values by phase, summing duplicates. Phases are
/// reduced mod 2 pi and merged within [`MATCH_TOL`].
fn group_by_phase(records: impl Iterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut groups: Vec<(f64, f64)> = Vec::new();
    for (phi, value) in records {
        let phi = phi.rem_euclid(TAU);
        match groups
            .iter_mut()
            .find(|(p, _)| (p - phi).abs() < MATCH_TOL || (TAU - (p - phi).abs()) < MATCH_TOL)
        {
            Some((_, v)) => *v += value,
            None => groups.push((phi, value)),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    groups
}

/// Requires the phases to be `M >= 3` points equally spaced over the
/// circle (arbitrary common offset allowed).
fn check_equally_spaced(groups: &[(f64, f64)]) -> Result<(), TomographyError> {
    let m = groups.len();
    if m < 3 {
        return Err(TomographyError::InsufficientFringe { distinct: m });
    }
    let step = TAU / m as f64;
    for w in 0..m {
        let a = groups[w].0;
        let b = if w + 1 < m {
            groups[w + 1].0
        } else {
            groups[0].0 + TAU
        };
        if ((b - a) - step).abs() > MATCH_TOL {
            return Err(TomographyError::UnevenPhases);
        }
    }
    Ok(())
}

/// `(1/M) sum_m e^{-i phi_m} C_m`: the coefficient of `e^{+i phi}` in
/// the fringe. Exact for any `M >= 3` because the rates carry no higher
/// harmonics.
fn fringe_coefficient(groups: &[(f64, f64)]) -> C64 {
    let m = groups.len() as f64;
    groups
        .iter()
        .map(|(phi, value)| C64::from_polar(*value, -phi))
        .sum::<C64>()
        / m
}

/// Same with the `e^{-i phi}` harmonic (`(1/M) sum e^{+i phi_m} C_m`).
fn fringe_coefficient_conj(groups: &[(f64, f64)]) -> C64 {
    let m = groups.len() as f64;
    groups
        .iter()
        .map(|(phi, value)| C64::from_polar(*value, *phi))
        .sum::<C64>()
        / m
}

fn require_single_photon(records: &[CountRecord]) -> Result<(), TomographyError> {
    if records.iter().any(|r| r.pair.is_some()) {
        return Err(TomographyError::PairMismatch { expected: false });
    }
    Ok(())
}

/// Picks the summed value at an exact phase out of grouped records.
fn value_at_phase(groups: &[(f64, f64)], phi: f64) -> Result<f64, TomographyError> {
    groups
        .iter()
        .find(|(p, _)| (p - phi).abs() < MATCH_TOL || (TAU - (p - phi).abs()) < MATCH_TOL)
        .map(|(_, v)| *v)
        .ok_or(TomographyError::NoCounts)
}

/// Ground-truth weak value of the arrival-time projector,
/// `<omega|t><t|rho|omega> / <omega|rho|omega>`, computed directly from
/// the state with delta-normalized `|t>` (ideal reference). Used as the
/// oracle the estimators are tested against.
///
/// Fails when the post-selected spectral density is below
/// [`POST_SELECTION_FLOOR`].
pub fn weak_value_time_projector(
    rho: &DensityMatrix,
    time_index: usize,
    omega_index: usize,
) -> Result<C64, TomographyError> {
    let grid = rho.grid();
    let n = grid.n_points();
    let dt = grid.dt();
    let omega = grid.omega_at(omega_index);
    let pw = Array1::from_shape_fn(n, |j| C64::from_polar(INV_SQRT_2PI, omega * grid.time_at(j)));
    let col = rho.matrix().dot(&pw.mapv(|z| z.conj())) * C64::new(dt, 0.0);
    let density = (pw
        .iter()
        .zip(col.iter())
        .map(|(w, c)| w * c)
        .sum::<C64>()
        * dt)
        .re;
    if density < POST_SELECTION_FLOOR {
        return Err(TomographyError::UndefinedWeakValue { density });
    }
    Ok(pw[time_index] * col[time_index] / density)
}

/// Normalized fringe-difference estimator:
/// real part `(C_pi - C_0)/(C_pi + C_0) / (2 sin theta cos theta)`,
/// imaginary part the same from the `pi/2, 3pi/2` pair when present
/// (zero otherwise).
///
/// On unfiltered (broadband) records this returns the reference-state
/// expectation value exactly, for every strength. On post-selected
/// records it estimates the weak value with an `O(theta^2)` bias from
/// the unsubtracted back-action background.
pub fn estimate_weak_value_broadband(
    records: &[CountRecord],
    theta: f64,
) -> Result<C64, TomographyError> {
    validate_records(records, theta)?;
    require_single_photon(records)?;
    let groups = group_by_phase(records.iter().map(|r| (r.phi, r.rate_or_count)));
    let c_0 = value_at_phase(&groups, 0.0)?;
    let c_pi = value_at_phase(&groups, std::f64::consts::PI)?;
    let denom = c_pi + c_0;
    if denom <= 0.0 {
        return Err(TomographyError::NoCounts);
    }
    let prefactor = 2.0 * theta.sin() * theta.cos();
    let re = (c_pi - c_0) / denom / prefactor;
    let im = match (
        value_at_phase(&groups, std::f64::consts::FRAC_PI_2),
        value_at_phase(&groups, 1.5 * std::f64::consts::PI),
    ) {
        (Ok(c_half), Ok(c_three_half)) => {
            let denom_im = c_half + c_three_half;
            if denom_im <= 0.0 {
                return Err(TomographyError::NoCounts);
            }
            (c_half - c_three_half) / denom_im / prefactor
        }
        _ => 0.0,
    };
    Ok(C64::new(re, im))
}

/// Background-subtracted estimator of the real part of the weak value:
/// `(C_pi - C_0) / ((C_pi + C_0) - 2 background) / (2 tan theta)`.
///
/// `background` is the phase-independent back-action rate at this cell,
/// in the same units as the records (from [`background_rate`] scaled to
/// count units, or from [`estimate_background`]).
///
/// The `2 tan theta` prefactor is what the forward model dictates; with
/// it the estimate is strength-independent and equals the direct weak
/// value exactly in ideal mode. (A `2 sin theta cos theta` prefactor in
/// its place would be wrong by `cos^2 theta`, a factor 2 at full
/// strength; the tests pin this down against the oracle.)
///
/// [`background_rate`]: crate::interferometer::background_rate
pub fn estimate_weak_value_subtracted(
    records: &[CountRecord],
    theta: f64,
    background: f64,
) -> Result<f64, TomographyError> {
    validate_records(records, theta)?;
    require_single_photon(records)?;
    let groups = group_by_phase(records.iter().map(|r| (r.phi, r.rate_or_count)));
    let c_0 = value_at_phase(&groups, 0.0)?;
    let c_pi = value_at_phase(&groups, std::f64::consts::PI)?;
    let total = c_pi + c_0;
    if total <= 0.0 {
        return Err(TomographyError::NoCounts);
    }
    let denom = total - 2.0 * background;
    if denom <= 1e-12 * total {
        return Err(TomographyError::InsufficientSignal {
            detail: format!(
                "denominator {denom:.3e} after subtracting background from total {total:.3e}"
            ),
        });
    }
    Ok((c_pi - c_0) / denom / (2.0 * theta.tan()))
}

/// Estimates the phase-independent background from the data itself:
/// the mean record value over the 10% of frequency bins farthest from
/// the intensity-weighted spectral centroid. The fringe term averages
/// out exactly over an equally spaced phase scan, and the signal
/// spectrum is negligible in those bins by construction.
///
/// Fails when fewer than 10 distinct frequency bins are present; fall
/// back to the analytic background rate in that case.
pub fn estimate_background(records: &[CountRecord]) -> Result<f64, TomographyError> {
    require_single_photon(records)?;
    let mut per_bin: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let k = r.omega_index.ok_or(TomographyError::MissingFrequency)?;
        let entry = per_bin.entry(k).or_insert((0.0, 0));
        entry.0 += r.rate_or_count;
        entry.1 += 1;
    }
    let bins = per_bin.len();
    if bins < 10 {
        return Err(TomographyError::InsufficientDetunedBins { bins });
    }
    let total: f64 = per_bin.values().map(|(sum, _)| sum).sum();
    if total <= 0.0 {
        return Err(TomographyError::NoCounts);
    }
    let centroid: f64 = per_bin
        .iter()
        .map(|(k, (sum, _))| *k as f64 * sum)
        .sum::<f64>()
        / total;
    let mut by_detuning: Vec<(f64, f64)> = per_bin
        .iter()
        .map(|(k, (sum, count))| ((*k as f64 - centroid).abs(), sum / *count as f64))
        .collect();
    by_detuning.sort_by(|a, b| b.0.total_cmp(&a.0));
    let picks = (bins / 10).max(1);
    Ok(by_detuning.iter().take(picks).map(|(_, mean)| mean).sum::<f64>() / picks as f64)
}

/// Time-frequency quasiprobability `K(t_j, omega_k)` of a state on its
/// grid: complex, normalized, with the state's time and frequency
/// densities as marginals.
#[derive(Debug, Clone)]
pub struct KirkwoodDistribution {
    grid: TemporalGrid,
    values: Array2<C64>,
}

impl KirkwoodDistribution {
    /// Wraps a value matrix; rows follow the time grid, columns the
    /// frequency grid.
    pub fn new(grid: TemporalGrid, values: Array2<C64>) -> Result<Self, TomographyError> {
        if values.nrows() != grid.n_points() || values.ncols() != grid.n_points() {
            return Err(TomographyError::IncompleteScan {
                missing: 0,
                expected: grid.n_points() * grid.n_points(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TemporalGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<C64> {
        &self.values
    }

    /// `sum_jk K dt domega`; 1 for a unit-trace state.
    pub fn integral(&self) -> C64 {
        self.values.sum() * self.grid.dt() * self.grid.d_omega()
    }

    /// Marginal over frequency, `sum_k K domega = <t|rho|t>`.
    pub fn time_marginal(&self) -> Array1<C64> {
        let n = self.grid.n_points();
        Array1::from_shape_fn(n, |j| self.values.row(j).sum() * self.grid.d_omega())
    }

    /// Marginal over time, `sum_j K dt = <omega|rho|omega>`.
    pub fn frequency_marginal(&self) -> Array1<C64> {
        let n = self.grid.n_points();
        Array1::from_shape_fn(n, |k| self.values.column(k).sum() * self.grid.dt())
    }

    /// `<psi|rho[K]|psi>` for the density operator this distribution
    /// encodes, evaluated directly from the values:
    /// `sum_mk conj(psi_m) K[m,k] e^{-i omega_k t_m} sqrt(2 pi)
    /// psi_tilde_k dt domega`.
    ///
    /// Unlike [`reconstruct_density`] this never rejects the operator,
    /// so it also quantifies reconstructions distorted by finite
    /// reference pulses; the real part is then the fidelity against
    /// `psi` of the Hermitian part of the encoded operator.
    pub fn pure_overlap(&self, psi: &PureState) -> Result<C64, TomographyError> {
        if psi.grid() != &self.grid {
            return Err(StateError::GridMismatch.into());
        }
        let n = self.grid.n_points();
        let spectrum = psi.spectrum();
        let mut acc = C64::new(0.0, 0.0);
        for m in 0..n {
            let t_m = self.grid.time_at(m);
            let mut row = C64::new(0.0, 0.0);
            for k in 0..n {
                row += self.values[(m, k)]
                    * C64::from_polar(1.0, -self.grid.omega_at(k) * t_m)
                    * spectrum[k];
            }
            acc += psi.amp()[m].conj() * row;
        }
        Ok(acc * TAU.sqrt() * self.grid.dt() * self.grid.d_omega())
    }
}

/// Exact distribution `K[j, k] = <omega_k|t_j><t_j|rho|omega_k>` of a
/// known state: the ground truth reconstructions are compared against.
pub fn kirkwood_of(rho: &DensityMatrix) -> KirkwoodDistribution {
    let grid = *rho.grid();
    let n = grid.n_points();
    let dt = grid.dt();
    let f = grid.dft_matrix();
    let rho_fd = rho.matrix().dot(&linalg::dagger(&f));
    let values = Array2::from_shape_fn((n, n), |(j, k)| f[(k, j)] / dt * rho_fd[(j, k)]);
    KirkwoodDistribution { grid, values }
}

/// Extracts the quasiprobability distribution from a full fringescan:
/// records over every reference time, every frequency bin, and `M >= 3`
/// equally spaced phases.
///
/// Per cell, `(1/M) sum_m e^{-i phi_m} C = -(1/8) sin theta cos theta K`;
/// the result is renormalized by its own integral, which also absorbs
/// the record units (rates or counts).
pub fn kirkwood_from_fringes(
    grid: &TemporalGrid,
    records: &[CountRecord],
    theta: f64,
) -> Result<KirkwoodDistribution, TomographyError> {
    validate_records(records, theta)?;
    require_single_photon(records)?;
    let n = grid.n_points();
    let mut cells: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let j = grid.time_index_of(r.reference_peak_time)?;
        let k = r.omega_index.ok_or(TomographyError::MissingFrequency)?;
        cells
            .entry((j, k))
            .or_default()
            .push((r.phi, r.rate_or_count));
    }
    if cells.len() != n * n {
        return Err(TomographyError::IncompleteScan {
            missing: n * n - cells.len(),
            expected: n * n,
        });
    }
    let scale = -0.125 * theta.sin() * theta.cos();
    let mut values = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for ((j, k), cell) in &cells {
        let groups = group_by_phase(cell.iter().copied());
        check_equally_spaced(&groups)?;
        values[(*j, *k)] = fringe_coefficient(&groups) / scale;
    }
    let integral = values.sum() * grid.dt() * grid.d_omega();
    let peak = values.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if integral.re.abs() < 1e-12 * peak.max(1e-300) {
        return Err(TomographyError::InsufficientSignal {
            detail: format!("distribution integral {:.3e} is consistent with zero", integral.re),
        });
    }
    // Renormalize by the real part of the integral so that residual
    // imaginary weight stays visible as a diagnostic.
    let values = values.mapv(|z| z / integral.re);
    Ok(KirkwoodDistribution {
        grid: *grid,
        values,
    })
}

/// Rebuilds the density matrix from a quasiprobability distribution:
/// `rho[m, n] = sum_k K[m, k] e^{+i omega_k (t_n - t_m)} domega`.
///
/// The result must come out Hermitian (defect below `1e-8` of its
/// largest entry); a violation is reported as an error, never
/// symmetrized away, since it indicates corrupted input.
pub fn reconstruct_density(k: &KirkwoodDistribution) -> Result<DensityMatrix, TomographyError> {
    let grid = *k.grid();
    let n = grid.n_points();
    let d_omega = grid.d_omega();
    let mut rho = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for m in 0..n {
        for nn in 0..n {
            let delta_t = grid.time_at(nn) - grid.time_at(m);
            let mut acc = C64::new(0.0, 0.0);
            for kk in 0..n {
                acc += k.values()[(m, kk)] * C64::from_polar(1.0, grid.omega_at(kk) * delta_t);
            }
            rho[(m, nn)] = acc * d_omega;
        }
    }
    let defect = linalg::hermiticity_defect(&rho);
    let scale = rho.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if defect > 1e-8 * scale.max(1e-300) {
        return Err(TomographyError::NotHermitian { defect, scale });
    }
    Ok(DensityMatrix::from_raw(grid, rho))
}

fn signal_floor_check(
    coefficients: &Array1<C64>,
    level: f64,
    what: &str,
) -> Result<(), TomographyError> {
    let peak = coefficients.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if peak < SIGNAL_FLOOR * level.max(1e-300) {
        return Err(TomographyError::InsufficientSignal {
            detail: format!("{what}: fringe coefficient {peak:.3e} vs record level {level:.3e}"),
        });
    }
    Ok(())
}

/// Retrieves the time-domain wavefunction of a pure state from a fringe
/// scan over every reference time at one fixed detection frequency:
/// `psi(t) ~ sum_m e^{-i(omega t + phi_m)} C(omega, t; phi_m)`,
/// normalized to unit L2 norm in time. The global phase is arbitrary.
pub fn wavefunction_time(
    grid: &TemporalGrid,
    records: &[CountRecord],
    theta: f64,
) -> Result<Array1<C64>, TomographyError> {
    validate_records(records, theta)?;
    require_single_photon(records)?;
    let n = grid.n_points();
    let mut omega_index: Option<usize> = None;
    let mut cells: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let k = r.omega_index.ok_or(TomographyError::MissingFrequency)?;
        match omega_index {
            None => omega_index = Some(k),
            Some(k0) if k0 != k => {
                return Err(TomographyError::MixedSelection { what: "frequency" })
            }
            _ => {}
        }
        let j = grid.time_index_of(r.reference_peak_time)?;
        cells.entry(j).or_default().push((r.phi, r.rate_or_count));
    }
    if cells.len() != n {
        return Err(TomographyError::IncompleteScan {
            missing: n - cells.len(),
            expected: n,
        });
    }
    let omega = grid.omega_at(omega_index.expect("records checked non-empty by coverage"));
    let mut coefficients = Array1::from_elem(n, C64::new(0.0, 0.0));
    for (j, cell) in &cells {
        let groups = group_by_phase(cell.iter().copied());
        check_equally_spaced(&groups)?;
        coefficients[*j] =
            fringe_coefficient(&groups) * C64::from_polar(1.0, -omega * grid.time_at(*j));
    }
    let level = records
        .iter()
        .map(|r| r.rate_or_count)
        .fold(0.0f64, f64::max);
    signal_floor_check(&coefficients, level, "time retrieval")?;
    let norm_sq: f64 = coefficients.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.dt();
    Ok(coefficients.mapv(|z| z / norm_sq.sqrt()))
}

/// Retrieves the frequency-domain wavefunction from a fringe scan over
/// every frequency bin at one fixed reference time:
/// `psi(omega) ~ sum_m e^{+i(omega t + phi_m)} C(omega, t; phi_m)`,
/// normalized to unit L2 norm in frequency.
pub fn wavefunction_freq(
    grid: &TemporalGrid,
    records: &[CountRecord],
    theta: f64,
) -> Result<Array1<C64>, TomographyError> {
    validate_records(records, theta)?;
    require_single_photon(records)?;
    let n = grid.n_points();
    let mut t_ref: Option<f64> = None;
    let mut cells: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        match t_ref {
            None => t_ref = Some(r.reference_peak_time),
            Some(t0) if (t0 - r.reference_peak_time).abs() > MATCH_TOL => {
                return Err(TomographyError::MixedSelection {
                    what: "reference time",
                })
            }
            _ => {}
        }
        let k = r.omega_index.ok_or(TomographyError::MissingFrequency)?;
        cells.entry(k).or_default().push((r.phi, r.rate_or_count));
    }
    if cells.len() != n {
        return Err(TomographyError::IncompleteScan {
            missing: n - cells.len(),
            expected: n,
        });
    }
    let t0 = t_ref.expect("records checked non-empty by coverage");
    let mut coefficients = Array1::from_elem(n, C64::new(0.0, 0.0));
    for (k, cell) in &cells {
        let groups = group_by_phase(cell.iter().copied());
        check_equally_spaced(&groups)?;
        coefficients[*k] =
            fringe_coefficient_conj(&groups) * C64::from_polar(1.0, grid.omega_at(*k) * t0);
    }
    let level = records
        .iter()
        .map(|r| r.rate_or_count)
        .fold(0.0f64, f64::max);
    signal_floor_check(&coefficients, level, "frequency retrieval")?;
    let norm_sq: f64 = coefficients.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid.d_omega();
    Ok(coefficients.mapv(|z| z / norm_sq.sqrt()))
}

/// Retrieves a pure two-photon amplitude from a double fringe scan over
/// both reference times at one fixed frequency pair:
/// `psi2(t1, t2) ~ sum e^{-i(omega1 t1 + omega2 t2 + phi1 + phi2)} C`,
/// normalized to unit L2 norm on the joint grid.
pub fn two_photon_wavefunction(
    grid_1: &TemporalGrid,
    grid_2: &TemporalGrid,
    records: &[CountRecord],
    theta_1: f64,
    theta_2: f64,
) -> Result<Array2<C64>, TomographyError> {
    validate_records(records, theta_1)?;
    if !(theta_2.is_finite() && theta_2 > 0.0 && theta_2 <= FRAC_PI_4) {
        return Err(TomographyError::ThetaOutOfRange { theta: theta_2 });
    }
    let n1 = grid_1.n_points();
    let n2 = grid_2.n_points();
    if n1 * n2 > TWO_PHOTON_CELL_CAP {
        return Err(TomographyError::JointTooLarge {
            cells: n1 * n2,
            cap: TWO_PHOTON_CELL_CAP,
        });
    }
    let mut omega_pair: Option<(usize, usize)> = None;
    // Cell key (j1, j2); the per-cell scan runs over joint phases
    // (phi1 + phi2 determines the harmonic, but both must be scanned to
    // cancel the single-photon harmonics).
    let mut cells: BTreeMap<(usize, usize), Vec<(f64, f64, f64)>> = BTreeMap::new();
    for r in records {
        let pair = r.pair.ok_or(TomographyError::PairMismatch { expected: true })?;
        if (pair.theta - theta_2).abs() > MATCH_TOL {
            return Err(TomographyError::MixedThetas {
                requested: theta_2,
                found: pair.theta,
            });
        }
        let k1 = r.omega_index.ok_or(TomographyError::MissingFrequency)?;
        let k2 = pair.omega_index;
        match omega_pair {
            None => omega_pair = Some((k1, k2)),
            Some(p) if p != (k1, k2) => {
                return Err(TomographyError::MixedSelection { what: "frequency" })
            }
            _ => {}
        }
        let j1 = grid_1.time_index_of(r.reference_peak_time)?;
        let j2 = grid_2.time_index_of(pair.reference_peak_time)?;
        cells
            .entry((j1, j2))
            .or_default()
            .push((r.phi, pair.phi, r.rate_or_count));
    }
    if cells.len() != n1 * n2 {
        return Err(TomographyError::IncompleteScan {
            missing: n1 * n2 - cells.len(),
            expected: n1 * n2,
        });
    }
    let (k1, k2) = omega_pair.expect("records checked non-empty by coverage");
    let omega_1 = grid_1.omega_at(k1);
    let omega_2 = grid_2.omega_at(k2);
    let mut coefficients = Array2::from_elem((n1, n2), C64::new(0.0, 0.0));
    for ((j1, j2), cell) in &cells {
        // Sum e^{-i(phi1 + phi2)} C over the joint scan; equal spacing
        // is checked on the phi1 margin (each phi1 paired with a full
        // phi2 scan and vice versa).
        let phi1_groups = group_by_phase(cell.iter().map(|(p1, _, v)| (*p1, *v)));
        check_equally_spaced(&phi1_groups)?;
        let phi2_groups = group_by_phase(cell.iter().map(|(_, p2, v)| (*p2, *v)));
        check_equally_spaced(&phi2_groups)?;
        let m = cell.len() as f64;
        let harmonic = cell
            .iter()
            .map(|(p1, p2, v)| C64::from_polar(*v, -(p1 + p2)))
            .sum::<C64>()
            / m;
        coefficients[(*j1, *j2)] = harmonic
            * C64::from_polar(
                1.0,
                -(omega_1 * grid_1.time_at(*j1) + omega_2 * grid_2.time_at(*j2)),
            );
    }
    let level = records
        .iter()
        .map(|r| r.rate_or_count)
        .fold(0.0f64, f64::max);
    let peak = coefficients.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    if peak < SIGNAL_FLOOR * level.max(1e-300) {
        return Err(TomographyError::InsufficientSignal {
            detail: format!("two-photon retrieval: coefficient {peak:.3e} vs level {level:.3e}"),
        });
    }
    let norm_sq: f64 =
        coefficients.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid_1.dt() * grid_2.dt();
    Ok(coefficients.mapv(|z| z / norm_sq.sqrt()))
}

/// Rotates a complex vector so its largest-modulus entry is real and
/// positive: a deterministic way to fix the arbitrary global phase
/// before comparing reconstructions.
pub fn fix_global_phase(amp: &Array1<C64>) -> Array1<C64> {
    let mut anchor = C64::new(1.0, 0.0);
    let mut best = 0.0f64;
    for z in amp.iter() {
        if z.norm() > best {
            best = z.norm();
            anchor = *z;
        }
    }
    if best == 0.0 {
        return amp.clone();
    }
    let rotation = anchor.conj() / anchor.norm();
    amp.mapv(|z| z * rotation)
}

/// [`fix_global_phase`] for two-photon amplitudes.
pub fn fix_global_phase_matrix(amp: &Array2<C64>) -> Array2<C64> {
    let mut anchor = C64::new(1.0, 0.0);
    let mut best = 0.0f64;
    for z in amp.iter() {
        if z.norm() > best {
            best = z.norm();
            anchor = *z;
        }
    }
    if best == 0.0 {
        return amp.clone();
    }
    let rotation = anchor.conj() / anchor.norm();
    amp.mapv(|z| z * rotation)
}

fn scan_phases(phi_count: usize) -> Vec<f64> {
    (0..phi_count).map(|m| TAU * m as f64 / phi_count as f64).collect()
}

/// Exact-rate records for the full (reference time, frequency, phase)
/// lattice: `phi_count` equally spaced phases starting at 0.
///
/// All record generators clamp rates at zero: in cells where the state
/// has no weight the three closed-form terms cancel, and the residual
/// dust may land a hair below zero.
pub fn sweep_fringe_records(
    table: &RateTable,
    theta: f64,
    phi_count: usize,
) -> Vec<CountRecord> {
    let n = table.grid().n_points();
    let mut records = Vec::with_capacity(n * n * phi_count);
    for j in 0..n {
        for k in 0..n {
            for phi in scan_phases(phi_count) {
                records.push(CountRecord {
                    omega_index: Some(k),
                    reference_peak_time: table.grid().time_at(j),
                    phi,
                    theta,
                    rate_or_count: table.rate(theta, phi, j, k).max(0.0),
                    is_sampled: false,
                    pair: None,
                });
            }
        }
    }
    records
}

/// Exact-rate records scanning every reference time at one fixed
/// detection frequency (the input for [`wavefunction_time`]).
pub fn omega_slice_records(
    table: &RateTable,
    theta: f64,
    phi_count: usize,
    omega_index: usize,
) -> Vec<CountRecord> {
    let n = table.grid().n_points();
    let mut records = Vec::with_capacity(n * phi_count);
    for j in 0..n {
        for phi in scan_phases(phi_count) {
            records.push(CountRecord {
                omega_index: Some(omega_index),
                reference_peak_time: table.grid().time_at(j),
                phi,
                theta,
                rate_or_count: table.rate(theta, phi, j, omega_index).max(0.0),
                is_sampled: false,
                pair: None,
            });
        }
    }
    records
}

/// Exact-rate records scanning every frequency bin at one fixed
/// reference time (the input for [`wavefunction_freq`]).
pub fn time_slice_records(
    table: &RateTable,
    theta: f64,
    phi_count: usize,
    time_index: usize,
) -> Vec<CountRecord> {
    let n = table.grid().n_points();
    let mut records = Vec::with_capacity(n * phi_count);
    for k in 0..n {
        for phi in scan_phases(phi_count) {
            records.push(CountRecord {
                omega_index: Some(k),
                reference_peak_time: table.grid().time_at(time_index),
                phi,
                theta,
                rate_or_count: table.rate(theta, phi, time_index, k).max(0.0),
                is_sampled: false,
            pair: None,
            });
        }
    }
    records
}

/// Exact probe-detection-probability records (no spectral filtering) at
/// one reference setting over a phase scan: the input for
/// [`estimate_weak_value_broadband`]'s expectation-value mode.
pub fn broadband_fringe_records(
    rho: &DensityMatrix,
    reference: &ReferencePulse,
    theta: f64,
    phi_count: usize,
) -> Result<Vec<CountRecord>, TomographyError> {
    let mut records = Vec::with_capacity(phi_count);
    for phi in scan_phases(phi_count) {
        let settings = MeasurementSettings::new(theta, phi, *reference)?;
        let p = probe_detection_probability(rho, &settings)?;
        records.push(CountRecord {
            omega_index: None,
            reference_peak_time: reference.peak_time,
            phi,
            theta,
            rate_or_count: p.max(0.0),
            is_sampled: false,
            pair: None,
        });
    }
    Ok(records)
}

/// Exact-rate records for a double fringe scan of a two-photon state:
/// both reference times over their full grids, both phases scanned, at
/// one fixed frequency pair. Reference shape and width are taken from
/// the base settings; their peak times and phases are overridden per
/// cell.
pub fn two_photon_fringe_records(
    psi2: &TwoPhotonPureState,
    base_1: &MeasurementSettings,
    base_2: &MeasurementSettings,
    omega_index_1: usize,
    omega_index_2: usize,
    phi_count_1: usize,
    phi_count_2: usize,
) -> Result<Vec<CountRecord>, TomographyError> {
    let n1 = psi2.grid_1().n_points();
    let n2 = psi2.grid_2().n_points();
    let phases_1 = scan_phases(phi_count_1);
    let phases_2 = scan_phases(phi_count_2);
    let mut records = Vec::with_capacity(n1 * n2 * phases_1.len() * phases_2.len());
    for j1 in 0..n1 {
        let t1 = psi2.grid_1().time_at(j1);
        for j2 in 0..n2 {
            let t2 = psi2.grid_2().time_at(j2);
            for &phi_1 in &phases_1 {
                let s1 = base_1.with_reference_time(t1).with_phi(phi_1)?;
                for &phi_2 in &phases_2 {
                    let s2 = base_2.with_reference_time(t2).with_phi(phi_2)?;
                    let rate = two_photon_coincidence_rate(
                        psi2,
                        &s1,
                        &s2,
                        omega_index_1,
                        omega_index_2,
                    )?;
                    records.push(CountRecord {
                        omega_index: Some(omega_index_1),
                        reference_peak_time: t1,
                        phi: phi_1,
                        theta: base_1.theta(),
                        rate_or_count: rate.max(0.0),
                        is_sampled: false,
                        pair: Some(PairSettings {
                            omega_index: omega_index_2,
                            reference_peak_time: t2,
                            phi: phi_2,
                            theta: base_2.theta(),
                        }),
                    });
                }
            }
        }
    }
    Ok(records)
}
