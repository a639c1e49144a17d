//! Forward model of the variable-strength arrival-time measurement.
//!
//! A signal photon (temporal state `rho`) and a probe photon carrying a
//! reference pulse meet at a polarizing beam splitter. The probe's linear
//! polarization angle `theta` sets the measurement strength, from
//! vanishingly weak (`theta -> 0`) to a full projection onto the
//! reference state (`theta = pi/4`, two-photon bunching). Detecting the
//! probe behind an elliptical polarization filter with phase `phi`
//! imprints an interference fringe on the coincidence rates; scanning
//! `phi` separates the signal spectrum, the back-action background, and
//! the phase-sensitive cross term used for state reconstruction.
//!
//! Two layers are provided:
//!
//! * [`oracle_two_photon`] constructs the full polarization-resolved
//!   two-photon output by brute-force enumeration of the beam-splitter
//!   paths. It knows nothing about the closed-form channel and serves as
//!   the ground truth the closed forms are tested against.
//! * [`measurement_operator_apply`], [`channel_apply`],
//!   [`probe_detection_probability`], [`coincidence_rate`] and
//!   [`background_rate`] implement the closed-form channel
//!   `E(rho) = M rho M^dag + (sin^2 theta / 8)(1 - <ref|rho|ref>)|ref><ref|`
//!   with `M = (cos theta / (2 sqrt 2))(I - e^{+i phi} tan theta |ref><ref|)`.
//!
//! ## Fringe-phase convention
//!
//! The probe filter is `(|H> + e^{-i phi}|V>)/sqrt 2`, so the swapped
//! (reflected-reflected) two-photon amplitude picks up `e^{+i phi}` and
//! the coincidence fringe reads
//! `-(1/4) sin theta cos theta Re(e^{+i phi} <omega|ref><ref|rho|omega>)`.
//! The mirror convention (`phi -> -phi` throughout) is equally physical;
//! this one is fixed project-wide so that the fringe-harmonic extraction
//! in the tomography module needs no sign juggling, and the oracle here
//! pins it down. Any test that depends on the choice says so in its
//! output.
//!
//! ## Kernel normalization
//!
//! Operator-level functions (`measurement_operator_apply`,
//! `channel_apply`, `probe_detection_probability`, the oracle) embed the
//! reference as a normalized state in both modes; in ideal mode that is
//! the `1/sqrt(dt)` spike. Rate-level functions (`coincidence_rate`,
//! `background_rate`, [`RateTable`], [`two_photon_coincidence_rate`])
//! return densities in `omega` and use the delta-normalized column
//! `|t>` (`<omega|t> = e^{+i omega t}/sqrt(2 pi)`) in ideal mode, so the
//! flat background is `sin^2 theta / (16 pi)` independent of the grid.
//! The two conventions are linked bin-by-bin by the exact identity
//!
//! ```text
//! <omega|E(rho)|omega>_spike
//!     = dt * coincidence_rate + (1 - dt) * (cos^2 theta / 8) <omega|rho|omega>
//! ```
//!
//! which the tests use to certify the rate kernels against the oracle.
//! One caveat follows from the delta normalization: the ideal-mode rate
//! is guaranteed non-negative only while the signal's temporal density
//! at the reference bin, `<t|rho|t>`, stays at or below 1. A signal
//! spike colliding with the reference reaches `1/dt` and the rate dips
//! to `(dt - 1)/(32 pi)` at full strength; this is the continuum
//! idealization showing through, not an implementation error, and is
//! pinned by a regression test. Gaussian mode uses normalized pulse
//! states throughout and its rates are non-negative unconditionally.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI, TAU};
use thiserror::Error;

use crate::grid::{TemporalGrid, INV_SQRT_2PI};
use crate::linalg;
use crate::states::{
    reference_as_state, reference_envelope, DensityMatrix, PureState, ReferencePulse,
    ReferenceShape, StateError, TwoPhotonPureState,
};

/// Largest allowed joint grid (`n1 * n2`) for two-photon rate
/// evaluations; everything is held as `n1 x n2` matrices, never as
/// operators on the joint space.
pub const TWO_PHOTON_CELL_CAP: usize = 1 << 14;

/// Errors from the interferometer forward model.
#[derive(Debug, Error)]
pub enum InterferometerError {
    /// Returned when the measurement strength lies outside `[0, pi/4]`.
    #[error("measurement strength theta = {theta} outside [0, pi/4]")]
    ThetaOutOfRange { theta: f64 },
    /// Returned when an angle is NaN or infinite.
    #[error("{name} must be finite, got {value}")]
    NonFiniteAngle { name: &'static str, value: f64 },
    /// Returned when a polarization amplitude pair is not normalized.
    #[error("polarization state has |H|^2 + |V|^2 = {norm_sq}, expected 1")]
    PolarizationNotNormalized { norm_sq: f64 },
    /// Returned when a reference pulse or state construction fails.
    #[error("reference state: {0}")]
    State(#[from] StateError),
    /// Returned when a two-photon evaluation would exceed the joint
    /// grid cap.
    #[error("joint grid has {cells} cells, exceeding the cap of {cap}")]
    JointTooLarge { cells: usize, cap: usize },
}

/// One setting of the measurement apparatus: strength, fringe phase and
/// reference pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasurementSettings")]
pub struct MeasurementSettings {
    theta: f64,
    phi: f64,
    reference: ReferencePulse,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurementSettings {
    theta: f64,
    phi: f64,
    reference: ReferencePulse,
}

impl TryFrom<RawMeasurementSettings> for MeasurementSettings {
    type Error = InterferometerError;

    fn try_from(raw: RawMeasurementSettings) -> Result<Self, Self::Error> {
        Self::new(raw.theta, raw.phi, raw.reference)
    }
}

impl MeasurementSettings {
    /// Validates `theta` in `[0, pi/4]` and reduces `phi` mod `2 pi`.
    pub fn new(
        theta: f64,
        phi: f64,
        reference: ReferencePulse,
    ) -> Result<Self, InterferometerError> {
        if !theta.is_finite() {
            return Err(InterferometerError::NonFiniteAngle {
                name: "theta",
                value: theta,
            });
        }
        if !(0.0..=FRAC_PI_4).contains(&theta) {
            return Err(InterferometerError::ThetaOutOfRange { theta });
        }
        if !phi.is_finite() {
            return Err(InterferometerError::NonFiniteAngle {
                name: "phi",
                value: phi,
            });
        }
        Ok(Self {
            theta,
            phi: phi.rem_euclid(TAU),
            reference,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Fringe phase, reduced to `[0, 2 pi)`.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn reference(&self) -> &ReferencePulse {
        &self.reference
    }

    /// Same strength and reference, different fringe phase.
    pub fn with_phi(mut self, phi: f64) -> Result<Self, InterferometerError> {
        if !phi.is_finite() {
            return Err(InterferometerError::NonFiniteAngle {
                name: "phi",
                value: phi,
            });
        }
        self.phi = phi.rem_euclid(TAU);
        Ok(self)
    }

    /// Same strength and fringe phase, reference peak moved to
    /// `peak_time` (validated against the grid at the point of use).
    pub fn with_reference_time(mut self, peak_time: f64) -> Self {
        self.reference.peak_time = peak_time;
        self
    }
}

/// Two-component polarization amplitude (H, V); oracle bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState {
    h: C64,
    v: C64,
}

impl PolarizationState {
    /// Wraps amplitudes, requiring unit norm within `1e-12`.
    pub fn new(h: C64, v: C64) -> Result<Self, InterferometerError> {
        let norm_sq = h.norm_sqr() + v.norm_sqr();
        if (norm_sq - 1.0).abs() > 1e-12 {
            return Err(InterferometerError::PolarizationNotNormalized { norm_sq });
        }
        Ok(Self { h, v })
    }

    /// `(|H> + |V>)/sqrt 2`: the fixed signal-side filter.
    pub fn diagonal() -> Self {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { h: a, v: a }
    }

    /// Linear polarization rotated by `theta` from horizontal.
    pub fn rotated(theta: f64) -> Self {
        Self {
            h: C64::new(theta.cos(), 0.0),
            v: C64::new(theta.sin(), 0.0),
        }
    }

    /// `(|H> + e^{-i phi}|V>)/sqrt 2`: the probe-side fringe filter.
    /// Projecting onto it hands the V component a factor `e^{+i phi}`.
    pub fn elliptical(phi: f64) -> Self {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            h: C64::new(a, 0.0),
            v: C64::from_polar(a, -phi),
        }
    }

    pub fn h(&self) -> C64 {
        self.h
    }

    pub fn v(&self) -> C64 {
        self.v
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &PolarizationState) -> C64 {
        self.h.conj() * other.h + self.v.conj() * other.v
    }

    fn component(&self, pol: Pol) -> C64 {
        match pol {
            Pol::H => self.h,
            Pol::V => self.v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pol {
    H,
    V,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Signal,
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Port {
    One,
    Two,
}

/// Beam-splitter routing: horizontal transmits, vertical reflects with a
/// quarter-wave phase `i`. The signal enters one input, the probe the
/// other, so their transmitted beams leave through opposite ports.
fn pbs_route(side: Side, pol: Pol) -> (Port, C64) {
    match (side, pol) {
        (Side::Signal, Pol::H) => (Port::One, C64::new(1.0, 0.0)),
        (Side::Signal, Pol::V) => (Port::Two, C64::new(0.0, 1.0)),
        (Side::Probe, Pol::H) => (Port::Two, C64::new(1.0, 0.0)),
        (Side::Probe, Pol::V) => (Port::One, C64::new(0.0, 1.0)),
    }
}

/// Signal input to the oracle: a pure state or a density matrix
/// (mixtures are handled by convex combination over eigenstates).
#[derive(Clone, Copy)]
pub enum SignalInput<'a> {
    Pure(&'a PureState),
    Mixed(&'a DensityMatrix),
}

/// Full output of the brute-force two-photon computation.
pub struct OracleOutcome {
    /// Filtered coincidence amplitudes, one `(weight, joint)` pair per
    /// pure component of the signal; `joint[(j, k)]` is the amplitude
    /// for the port-one photon at `t_j` and the port-two photon at
    /// `t_k`.
    pub components: Vec<(f64, Array2<C64>)>,
    /// Probability of the filtered coincidence (the probe detection
    /// probability of the closed-form channel).
    pub probability: f64,
    /// Temporal state of the port-one photon conditioned on the probe
    /// detection; unnormalized, trace equals `probability`.
    pub conditional: DensityMatrix,
}

/// Joint filtered coincidence amplitude for one pure signal component,
/// by explicit enumeration of the four polarization paths through the
/// beam splitter.
fn joint_amplitude(psi: &PureState, reference: &PureState, theta: f64, phi: f64) -> Array2<C64> {
    let signal_pol = PolarizationState::diagonal();
    let probe_pol = PolarizationState::rotated(theta);
    let filter_one = PolarizationState::diagonal();
    let filter_two = PolarizationState::elliptical(phi);
    let n = psi.grid().n_points();
    let mut joint = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for signal_component in [Pol::H, Pol::V] {
        for probe_component in [Pol::H, Pol::V] {
            let (signal_port, signal_phase) = pbs_route(Side::Signal, signal_component);
            let (probe_port, probe_phase) = pbs_route(Side::Probe, probe_component);
            if signal_port == probe_port {
                // Both photons leave through the same port: no
                // coincidence, dropped by postselection.
                continue;
            }
            let path = signal_pol.component(signal_component)
                * signal_phase
                * probe_pol.component(probe_component)
                * probe_phase;
            // Which temporal state reaches which detector depends on
            // who got reflected.
            let (pol_one, time_one, pol_two, time_two) = match signal_port {
                Port::One => (signal_component, psi.amp(), probe_component, reference.amp()),
                Port::Two => (probe_component, reference.amp(), signal_component, psi.amp()),
            };
            let amp = path
                * filter_one.component(pol_one).conj()
                * filter_two.component(pol_two).conj();
            for j in 0..n {
                for k in 0..n {
                    joint[(j, k)] += amp * time_one[j] * time_two[k];
                }
            }
        }
    }
    joint
}

/// Brute-force forward model: routes both photons through the beam
/// splitter path by path, applies the coincidence postselection and the
/// polarization filters, and traces out the probe's temporal state.
///
/// The signal-side filter is fixed at diagonal polarization; only the
/// probe-side ellipticity `phi` varies.
pub fn oracle_two_photon(
    signal: SignalInput<'_>,
    settings: &MeasurementSettings,
) -> Result<OracleOutcome, InterferometerError> {
    let grid = match signal {
        SignalInput::Pure(psi) => *psi.grid(),
        SignalInput::Mixed(rho) => *rho.grid(),
    };
    let reference = reference_as_state(&grid, settings.reference())?;
    let pure_components: Vec<(f64, PureState)> = match signal {
        SignalInput::Pure(psi) => vec![(1.0, psi.clone())],
        SignalInput::Mixed(rho) => rho.eigen_mixture()?,
    };
    let n = grid.n_points();
    let dt = grid.dt();
    let mut components = Vec::with_capacity(pure_components.len());
    let mut probability = 0.0;
    let mut conditional = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for (weight, psi) in &pure_components {
        let joint = joint_amplitude(psi, &reference, settings.theta(), settings.phi());
        probability +=
            weight * joint.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt * dt;
        let reduced = joint.dot(&linalg::dagger(&joint));
        conditional.zip_mut_with(&reduced, |acc, r| *acc += r * weight * dt);
        components.push((*weight, joint));
    }
    Ok(OracleOutcome {
        components,
        probability,
        conditional: DensityMatrix::from_raw(grid, conditional),
    })
}

/// `rho |ref>` and `<ref|rho|ref>` for a normalized reference state.
fn reference_products(rho: &DensityMatrix, reference: &PureState) -> (Array1<C64>, f64) {
    let dt = rho.grid().dt();
    let u = rho.matrix().dot(reference.amp()) * C64::new(dt, 0.0);
    let expectation = linalg::inner(reference.amp(), &u, dt);
    (u, expectation.re)
}

/// Applies the measurement operator:
/// `M rho M^dag` with
/// `M = (cos theta / (2 sqrt 2))(I - e^{+i phi} tan theta |ref><ref|)`.
///
/// The reference enters as a normalized state in both modes. The output
/// is unnormalized (its trace is the part of the probe detection
/// probability not caused by back-action) and stays Hermitian and
/// positive by construction; the trace never exceeds `1/8`.
pub fn measurement_operator_apply(
    rho: &DensityMatrix,
    settings: &MeasurementSettings,
) -> Result<DensityMatrix, InterferometerError> {
    let grid = rho.grid();
    let reference = reference_as_state(grid, settings.reference())?;
    let (u, expectation) = reference_products(rho, &reference);
    let (sin_t, cos_t) = settings.theta().sin_cos();
    let fringe = C64::from_polar(1.0, settings.phi());
    let c2 = cos_t * cos_t / 8.0;
    let sc = sin_t * cos_t / 8.0;
    let s2 = sin_t * sin_t / 8.0;
    let phi_amp = reference.amp();
    let n = grid.n_points();
    // M rho M^dag expanded; the projector-squared term carries
    // cos^2 tan^2 = sin^2, so the form below is exact at theta = pi/4.
    let out = Array2::from_shape_fn((n, n), |(j, m)| {
        c2 * rho.matrix()[(j, m)]
            - sc * (fringe * phi_amp[j] * u[m].conj()
                + fringe.conj() * u[j] * phi_amp[m].conj())
            + s2 * expectation * phi_amp[j] * phi_amp[m].conj()
    });
    debug_assert!(linalg::hermiticity_defect(&out) < 1e-12);
    Ok(DensityMatrix::from_raw(*grid, out))
}

/// Applies the full measurement channel
/// `E(rho) = M rho M^dag + (sin^2 theta / 8)(tr rho - <ref|rho|ref>)|ref><ref|`.
///
/// The output is unnormalized; its trace equals
/// [`probe_detection_probability`].
pub fn channel_apply(
    rho: &DensityMatrix,
    settings: &MeasurementSettings,
) -> Result<DensityMatrix, InterferometerError> {
    let grid = rho.grid();
    let reference = reference_as_state(grid, settings.reference())?;
    let (u, _) = reference_products(rho, &reference);
    let (sin_t, cos_t) = settings.theta().sin_cos();
    let fringe = C64::from_polar(1.0, settings.phi());
    let c2 = cos_t * cos_t / 8.0;
    let sc = sin_t * cos_t / 8.0;
    let s2 = sin_t * sin_t / 8.0;
    let trace = rho.trace();
    let phi_amp = reference.amp();
    let n = grid.n_points();
    // Back-action cancels the projector-squared term of M rho M^dag,
    // leaving this three-kernel linear form (exact for all theta).
    let out = Array2::from_shape_fn((n, n), |(j, m)| {
        c2 * rho.matrix()[(j, m)]
            - sc * (fringe * phi_amp[j] * u[m].conj()
                + fringe.conj() * u[j] * phi_amp[m].conj())
            + s2 * trace * phi_amp[j] * phi_amp[m].conj()
    });
    debug_assert!(linalg::hermiticity_defect(&out) < 1e-12);
    Ok(DensityMatrix::from_raw(*grid, out))
}

/// Probability of detecting the probe photon behind its filter:
/// `1/8 - (1/4) sin theta cos theta cos phi <ref|rho|ref>`.
///
/// Equals the trace of [`channel_apply`]; lies in `[0, 1/4]` up to
/// floating-point error.
pub fn probe_detection_probability(
    rho: &DensityMatrix,
    settings: &MeasurementSettings,
) -> Result<f64, InterferometerError> {
    let reference = reference_as_state(rho.grid(), settings.reference())?;
    let (_, expectation) = reference_products(rho, &reference);
    let (sin_t, cos_t) = settings.theta().sin_cos();
    Ok(0.125 - 0.25 * sin_t * cos_t * settings.phi().cos() * expectation)
}

/// Per-frequency kernels of one photon's measurement: the plane-wave
/// row, the reference-projector row, and the background density.
struct PhotonKernel {
    /// `e_row[j] = <omega|t_j>`; `<omega|v> = sum_j e_row[j] v[j] dt`.
    e_row: Array1<C64>,
    /// Row of `<omega| |ref><ref|`; delta-normalized in ideal mode.
    p_row: Array1<C64>,
    /// `<omega|ref><ref|omega>`: `1/(2 pi)` in ideal mode, the pulse
    /// spectrum in gaussian mode.
    background: f64,
}

fn photon_kernel(
    grid: &TemporalGrid,
    reference: &ReferencePulse,
    omega_index: usize,
) -> Result<PhotonKernel, InterferometerError> {
    reference.validate(grid)?;
    let omega = grid.omega_at(omega_index);
    let n = grid.n_points();
    let dt = grid.dt();
    let e_row = Array1::from_shape_fn(n, |j| C64::from_polar(INV_SQRT_2PI, omega * grid.time_at(j)));
    match reference.shape {
        ReferenceShape::Ideal => {
            let j0 = reference.peak_index(grid)?;
            let mut p_row = Array1::from_elem(n, C64::new(0.0, 0.0));
            p_row[j0] = e_row[j0] / dt;
            Ok(PhotonKernel {
                e_row,
                p_row,
                background: 1.0 / (2.0 * PI),
            })
        }
        ReferenceShape::Gaussian => {
            let pulse = reference_envelope(grid, reference.peak_time, reference.width)?;
            let spectrum_amp: C64 = e_row
                .iter()
                .zip(pulse.amp().iter())
                .map(|(w, p)| w * p)
                .sum::<C64>()
                * dt;
            let p_row = Array1::from_shape_fn(n, |j| spectrum_amp * pulse.amp()[j].conj());
            Ok(PhotonKernel {
                e_row,
                p_row,
                background: spectrum_amp.norm_sqr(),
            })
        }
    }
}

/// Coincidence rate (density in `omega`) for detecting the signal at
/// frequency `omega` and the probe behind its fringe filter:
///
/// ```text
/// (1/8) cos^2 theta <omega|rho|omega> + (1/8) sin^2 theta B(omega)
///     - (1/4) sin theta cos theta Re(e^{+i phi} <omega|ref><ref|rho|omega>)
/// ```
///
/// In ideal mode `|ref>` is the delta-normalized `|t>` column and
/// `B = 1/(2 pi)`; in gaussian mode the normalized pulse state replaces
/// it throughout and `B` is the pulse spectrum. See the module notes on
/// kernel normalization for the exact identity tying this to the
/// oracle, and for the domain where non-negativity is guaranteed.
///
/// Panics if `omega_index` is out of range.
pub fn coincidence_rate(
    rho: &DensityMatrix,
    settings: &MeasurementSettings,
    omega_index: usize,
) -> Result<f64, InterferometerError> {
    let grid = rho.grid();
    let kernel = photon_kernel(grid, settings.reference(), omega_index)?;
    let dt = grid.dt();
    // rho|omega> as an amplitude vector.
    let col = rho.matrix().dot(&kernel.e_row.mapv(|z| z.conj())) * C64::new(dt, 0.0);
    let spectrum = kernel
        .e_row
        .iter()
        .zip(col.iter())
        .map(|(w, c)| w * c)
        .sum::<C64>()
        * dt;
    let kirkwood = kernel
        .p_row
        .iter()
        .zip(col.iter())
        .map(|(p, c)| p * c)
        .sum::<C64>()
        * dt;
    let (sin_t, cos_t) = settings.theta().sin_cos();
    let fringe = C64::from_polar(1.0, settings.phi());
    Ok(0.125 * cos_t * cos_t * spectrum.re + 0.125 * sin_t * sin_t * kernel.background
        - 0.25 * sin_t * cos_t * (fringe * kirkwood).re)
}

/// Rate observed where the signal has no spectral weight:
/// `(1/8) sin^2 theta / (2 pi)` in ideal mode (independent of `omega`),
/// `(1/8) sin^2 theta |<omega|ref>|^2` in gaussian mode.
///
/// Panics if `omega_index` is out of range in gaussian mode; ideal mode
/// ignores it.
pub fn background_rate(
    grid: &TemporalGrid,
    settings: &MeasurementSettings,
    omega_index: usize,
) -> Result<f64, InterferometerError> {
    settings.reference().validate(grid)?;
    let sin_sq = settings.theta().sin().powi(2);
    match settings.reference().shape {
        ReferenceShape::Ideal => Ok(0.125 * sin_sq / (2.0 * PI)),
        ReferenceShape::Gaussian => {
            let kernel = photon_kernel(grid, settings.reference(), omega_index)?;
            Ok(0.125 * sin_sq * kernel.background)
        }
    }
}

/// Precomputed rate kernels for one signal state: every reference peak
/// time against every detection frequency. Construction costs one dense
/// transform; each [`RateTable::rate`] call is then O(1), which is what
/// fringe scans, reconstruction sweeps and Monte Carlo sampling want.
///
/// Rows follow the time grid (reference peak at `t_j`), columns the
/// frequency grid.
pub struct RateTable {
    grid: TemporalGrid,
    /// `<omega_k|rho|omega_k>`.
    spectrum: Array1<f64>,
    /// `[j, k] = <omega_k|ref_j><ref_j|rho|omega_k>`.
    kirkwood: Array2<C64>,
    /// `[j, k] = <omega_k|ref_j><ref_j|omega_k>`.
    background: Array2<f64>,
}

impl RateTable {
    /// Kernels for an ideal (delta) reference scanned over all bins.
    pub fn ideal(rho: &DensityMatrix) -> Self {
        let grid = *rho.grid();
        let n = grid.n_points();
        let dt = grid.dt();
        let f = grid.dft_matrix();
        // rho_fd[m, k] = <t_m|rho|omega_k>.
        let rho_fd = rho.matrix().dot(&linalg::dagger(&f));
        let spectrum = Array1::from_shape_fn(n, |k| {
            (0..n).map(|j| (f[(k, j)] * rho_fd[(j, k)]).re).sum::<f64>()
        });
        let kirkwood = Array2::from_shape_fn((n, n), |(j, k)| f[(k, j)] / dt * rho_fd[(j, k)]);
        let background = Array2::from_elem((n, n), 1.0 / (2.0 * PI));
        Self {
            grid,
            spectrum,
            kirkwood,
            background,
        }
    }

    /// Kernels for a gaussian reference of the given width scanned over
    /// all bins (envelopes near the window edges are truncated and
    /// renormalized, as in [`reference_as_state`]).
    pub fn gaussian(rho: &DensityMatrix, width: f64) -> Result<Self, InterferometerError> {
        let grid = *rho.grid();
        ReferencePulse::gaussian(grid.time_at(0), width).validate(&grid)?;
        let n = grid.n_points();
        let dt = grid.dt();
        let f = grid.dft_matrix();
        let rho_fd = rho.matrix().dot(&linalg::dagger(&f));
        let spectrum = Array1::from_shape_fn(n, |k| {
            (0..n).map(|j| (f[(k, j)] * rho_fd[(j, k)]).re).sum::<f64>()
        });
        let mut pulses = Array2::from_elem((n, n), C64::new(0.0, 0.0));
        for j in 0..n {
            let pulse = reference_envelope(&grid, grid.time_at(j), width)?;
            pulses.row_mut(j).assign(pulse.amp());
        }
        // spectrum_amp[j, k] = <omega_k|ref_j>.
        let spectrum_amp = pulses.dot(&f.t());
        // projection[j, k] = <ref_j|rho|omega_k>.
        let projection = pulses.mapv(|z| z.conj()).dot(&rho_fd) * C64::new(dt, 0.0);
        let kirkwood =
            Array2::from_shape_fn((n, n), |(j, k)| spectrum_amp[(j, k)] * projection[(j, k)]);
        let background = spectrum_amp.mapv(|z| z.norm_sqr());
        Ok(Self {
            grid,
            spectrum,
            kirkwood,
            background,
        })
    }

    pub fn grid(&self) -> &TemporalGrid {
        &self.grid
    }

    /// Equals [`coincidence_rate`] for a reference peaked at `t_j`
    /// (`j = time_index`) and detection at `omega_k`.
    ///
    /// `theta` must already be validated; panics on out-of-range
    /// indices.
    pub fn rate(&self, theta: f64, phi: f64, time_index: usize, omega_index: usize) -> f64 {
        debug_assert!((0.0..=FRAC_PI_4).contains(&theta));
        let (sin_t, cos_t) = theta.sin_cos();
        let fringe = C64::from_polar(1.0, phi);
        0.125 * cos_t * cos_t * self.spectrum[omega_index]
            + 0.125 * sin_t * sin_t * self.background[(time_index, omega_index)]
            - 0.25 * sin_t * cos_t * (fringe * self.kirkwood[(time_index, omega_index)]).re
    }

    /// `<omega_k|rho|omega_k>`.
    pub fn spectrum(&self) -> &Array1<f64> {
        &self.spectrum
    }

    /// Back-action background at `(time_index, omega_index)` for unit
    /// `sin^2 theta / 8`; multiply by `(1/8) sin^2 theta` for the rate.
    pub fn background_kernel(&self, time_index: usize, omega_index: usize) -> f64 {
        self.background[(time_index, omega_index)]
    }
}

/// Index sets for the four superoperator terms of one photon's channel:
/// identity, projector-left, projector-right, trace-replacement.
const TERM_LEFT: [usize; 3] = [0, 1, 0];
const TERM_RIGHT: [usize; 3] = [0, 0, 1];

/// Coincidence rate for measuring both photons of a two-photon state,
/// each against its own reference and fringe phase:
/// `<omega1 omega2| (E1 x E2)(|psi2><psi2|) |omega1 omega2>`,
/// evaluated with the same per-photon kernels as [`coincidence_rate`]
/// (so a separable state factorizes into the product of single-photon
/// rates, exactly).
///
/// Only `n1 x n2` matrices are materialized; inputs with
/// `n1 * n2 > TWO_PHOTON_CELL_CAP` are refused.
pub fn two_photon_coincidence_rate(
    psi2: &TwoPhotonPureState,
    settings_1: &MeasurementSettings,
    settings_2: &MeasurementSettings,
    omega_index_1: usize,
    omega_index_2: usize,
) -> Result<f64, InterferometerError> {
    let cells = psi2.grid_1().n_points() * psi2.grid_2().n_points();
    if cells > TWO_PHOTON_CELL_CAP {
        return Err(InterferometerError::JointTooLarge {
            cells,
            cap: TWO_PHOTON_CELL_CAP,
        });
    }
    let kernel_1 = photon_kernel(psi2.grid_1(), settings_1.reference(), omega_index_1)?;
    let kernel_2 = photon_kernel(psi2.grid_2(), settings_2.reference(), omega_index_2)?;
    let dt1 = psi2.grid_1().dt();
    let dt2 = psi2.grid_2().dt();
    let amp = psi2.amp();

    // Photon-2 contractions u_x = A row2 dt2 (vectors over t1) and
    // photon-1 contractions v_x = row1 A dt1 (vectors over t2), for the
    // identity row (index 0) and the projector row (index 1).
    let rows_1 = [&kernel_1.e_row, &kernel_1.p_row];
    let rows_2 = [&kernel_2.e_row, &kernel_2.p_row];
    let u: Vec<Array1<C64>> = rows_2
        .iter()
        .map(|row| amp.dot(*row) * C64::new(dt2, 0.0))
        .collect();
    let v: Vec<Array1<C64>> = rows_1
        .iter()
        .map(|row| (*row).dot(amp) * C64::new(dt1, 0.0))
        .collect();
    // alpha[x1][x2] = row1_{x1} A row2_{x2}.
    let mut alpha = [[C64::new(0.0, 0.0); 2]; 2];
    let mut t1_inner = [[C64::new(0.0, 0.0); 2]; 2];
    let mut t2_inner = [[C64::new(0.0, 0.0); 2]; 2];
    for x in 0..2 {
        for y in 0..2 {
            alpha[x][y] = linalg::inner(&rows_1[x].mapv(|z| z.conj()), &u[y], dt1);
            t1_inner[x][y] = linalg::inner(&u[x], &u[y], dt1);
            t2_inner[x][y] = linalg::inner(&v[x], &v[y], dt2);
        }
    }
    let norm_sq = amp.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt1 * dt2;

    let coefficients = |settings: &MeasurementSettings| -> [C64; 4] {
        let (sin_t, cos_t) = settings.theta().sin_cos();
        [
            C64::new(cos_t * cos_t, 0.0),
            -C64::from_polar(sin_t * cos_t, settings.phi()),
            -C64::from_polar(sin_t * cos_t, -settings.phi()),
            C64::new(sin_t * sin_t, 0.0),
        ]
    };
    let coef_1 = coefficients(settings_1);
    let coef_2 = coefficients(settings_2);

    let mut acc = C64::new(0.0, 0.0);
    for a in 0..4 {
        for b in 0..4 {
            let term = match (a < 3, b < 3) {
                (true, true) => {
                    alpha[TERM_LEFT[a]][TERM_LEFT[b]]
                        * alpha[TERM_RIGHT[a]][TERM_RIGHT[b]].conj()
                }
                // Photon 2 trace-replaced: background kernel at omega2
                // times the photon-1 operator sandwich.
                (true, false) => {
                    C64::new(kernel_2.background, 0.0)
                        * t2_inner[TERM_RIGHT[a]][TERM_LEFT[a]]
                }
                (false, true) => {
                    C64::new(kernel_1.background, 0.0)
                        * t1_inner[TERM_RIGHT[b]][TERM_LEFT[b]]
                }
                (false, false) => C64::new(kernel_1.background * kernel_2.background * norm_sq, 0.0),
            };
            acc += coef_1[a] * coef_2[b] * term;
        }
    }
    debug_assert!(acc.im.abs() <= 1e-10 * acc.re.abs().max(1e-12));
    Ok(acc.re / 64.0)
}
