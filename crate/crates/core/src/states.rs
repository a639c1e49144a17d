//! Input states for the simulation: single-photon pure states and density
//! matrices on a temporal grid, reference probe pulses, and two-photon
//! entangled pairs.
//!
//! Amplitudes are densities in time: a normalized pure state satisfies
//! `sum_j |amp_j|^2 dt = 1` and a density matrix has unit trace with the
//! same measure, `sum_j rho_jj dt = 1`. Matrix products therefore carry a
//! `dt` per contraction, and purity is `Tr(rho^2) dt^2`.

use crate::grid::{GridError, TemporalGrid};
use crate::linalg::{self, LinalgError};
use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative envelope level allowed at the window edges before a pulse is
/// considered aliased.
pub const ALIASING_FLOOR: f64 = 1e-8;

/// Errors from state construction and manipulation.
#[derive(Debug, Error)]
pub enum StateError {
    /// Propagated grid error (off-lattice times, length mismatches).
    #[error(transparent)]
    Grid(#[from] GridError),

    /// Propagated dense linear algebra error.
    #[error(transparent)]
    Linalg(#[from] LinalgError),

    /// Returned when an amplitude vector is not L2-normalized.
    #[error("state is not normalized: sum |amp|^2 dt = {norm_sq}")]
    NotNormalized { norm_sq: f64 },

    /// Returned when a density matrix is not Hermitian.
    #[error("density matrix is not Hermitian (max defect {defect:.3e})")]
    NotHermitian { defect: f64 },

    /// Returned when a density matrix does not have the required trace.
    #[error("density matrix trace is {trace}, expected {expected}")]
    BadTrace { trace: f64, expected: f64 },

    /// Returned when a density matrix has a significantly negative
    /// eigenvalue.
    #[error("density matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },

    /// Returned when states on different grids are combined.
    #[error("states live on different grids")]
    GridMismatch,

    /// Returned when a pulse width cannot be resolved by the grid.
    #[error("width {width} is not resolvable on a grid with dt = {dt} (need width >= 2 dt)")]
    WidthUnresolvable { width: f64, dt: f64 },

    /// Returned when a pulse envelope is still above [`ALIASING_FLOOR`]
    /// (relative to its peak) at the window edge.
    #[error("pulse envelope reaches {edge_fraction:.3e} of its peak at the window edge")]
    Aliasing { edge_fraction: f64 },

    /// Returned when a superposition cancels to (numerically) zero.
    #[error("superposition is degenerate: components cancel")]
    DegenerateSuperposition,

    /// Returned when mixture probabilities are negative.
    #[error("negative mixture probability {p}")]
    NegativeProbability { p: f64 },

    /// Returned when mixture probabilities do not sum to one.
    #[error("mixture probabilities sum to {sum}, expected 1")]
    BadProbabilities { sum: f64 },

    /// Returned when an operation is given no components.
    #[error("empty component list")]
    EmptyInput,
}

/// A pure single-photon temporal state.
#[derive(Debug, Clone)]
pub struct PureState {
    grid: TemporalGrid,
    amp: Array1<C64>,
}

impl PureState {
    /// Wraps an already-normalized amplitude vector
    /// (`sum |amp|^2 dt = 1` within `1e-10`).
    pub fn new(grid: TemporalGrid, amp: Array1<C64>) -> Result<Self, StateError> {
        if amp.len() != grid.n_points() {
            return Err(GridError::LengthMismatch {
                got: amp.len(),
                expected: grid.n_points(),
            }
            .into());
        }
        let norm_sq: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dt();
        if (norm_sq - 1.0).abs() > 1e-10 {
            return Err(StateError::NotNormalized { norm_sq });
        }
        Ok(Self { grid, amp })
    }

    /// Normalizes an arbitrary nonzero amplitude vector.
    pub fn from_unnormalized(grid: TemporalGrid, amp: Array1<C64>) -> Result<Self, StateError> {
        if amp.len() != grid.n_points() {
            return Err(GridError::LengthMismatch {
                got: amp.len(),
                expected: grid.n_points(),
            }
            .into());
        }
        let norm_sq: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dt();
        if norm_sq < 1e-20 {
            return Err(StateError::DegenerateSuperposition);
        }
        let scale = 1.0 / norm_sq.sqrt();
        Ok(Self {
            grid,
            amp: amp.mapv(|a| a * scale),
        })
    }

    pub fn grid(&self) -> &TemporalGrid {
        &self.grid
    }

    pub fn amp(&self) -> &Array1<C64> {
        &self.amp
    }

    /// Amplitudes in the frequency representation, `<omega_k|psi>`.
    pub fn spectrum(&self) -> Array1<C64> {
        self.grid
            .to_frequency(self.amp.view())
            .expect("amplitude length matches grid by construction")
    }

    /// Overlap `<self|other>` (with the `dt` measure).
    pub fn overlap(&self, other: &PureState) -> Result<C64, StateError> {
        if self.grid != other.grid {
            return Err(StateError::GridMismatch);
        }
        Ok(linalg::inner(&self.amp, &other.amp, self.grid.dt()))
    }
}

/// A single-photon density matrix over time bins.
///
/// The kernel convention allows non-unit trace: conditional (post-selected)
/// outputs of the measurement carry their detection probability in the
/// trace. Proper input states are built through [`DensityMatrix::new`],
/// which enforces unit trace and positivity.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    grid: TemporalGrid,
    rho: Array2<C64>,
}

impl DensityMatrix {
    /// Wraps a validated physical state: Hermitian, unit trace, positive
    /// semidefinite (min eigenvalue > -1e-10).
    pub fn new(grid: TemporalGrid, rho: Array2<C64>) -> Result<Self, StateError> {
        let out = Self::unnormalized(grid, rho)?;
        let trace = out.trace();
        if (trace - 1.0).abs() > 1e-10 {
            return Err(StateError::BadTrace {
                trace,
                expected: 1.0,
            });
        }
        let min = linalg::min_eigenvalue(&out.rho)? * grid.dt();
        if min < -1e-10 {
            return Err(StateError::NotPositive {
                min_eigenvalue: min,
            });
        }
        Ok(out)
    }

    /// Wraps a Hermitian kernel without trace or positivity checks; used
    /// for unnormalized conditional states.
    pub fn unnormalized(grid: TemporalGrid, rho: Array2<C64>) -> Result<Self, StateError> {
        let n = grid.n_points();
        if rho.dim() != (n, n) {
            return Err(GridError::LengthMismatch {
                got: rho.nrows(),
                expected: n,
            }
            .into());
        }
        let scale = rho.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        let defect = linalg::hermiticity_defect(&rho);
        if defect > 1e-12 * scale.max(1.0) {
            return Err(StateError::NotHermitian { defect });
        }
        Ok(Self { grid, rho })
    }

    pub(crate) fn from_raw(grid: TemporalGrid, rho: Array2<C64>) -> Self {
        Self { grid, rho }
    }

    pub fn grid(&self) -> &TemporalGrid {
        &self.grid
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.rho
    }

    /// Trace with the `dt` measure.
    pub fn trace(&self) -> f64 {
        let n = self.grid.n_points();
        (0..n).map(|j| self.rho[(j, j)].re).sum::<f64>() * self.grid.dt()
    }

    /// Purity `Tr(rho^2) dt^2`; 1 for pure states.
    pub fn purity(&self) -> f64 {
        let n = self.grid.n_points();
        let mut acc = 0.0;
        for m in 0..n {
            for k in 0..n {
                acc += (self.rho[(m, k)] * self.rho[(k, m)]).re;
            }
        }
        acc * self.grid.dt() * self.grid.dt()
    }

    /// Time marginal `rho_jj` (a density: integrates to the trace).
    pub fn time_marginal(&self) -> Array1<f64> {
        Array1::from_iter((0..self.grid.n_points()).map(|j| self.rho[(j, j)].re))
    }

    /// Frequency marginal `<omega_k| rho |omega_k>` (a density in omega).
    pub fn frequency_marginal(&self) -> Array1<f64> {
        let f = self.grid.dft_matrix();
        let in_freq = f.dot(&self.rho).dot(&linalg::dagger(&f));
        Array1::from_iter((0..self.grid.n_points()).map(|k| in_freq[(k, k)].re))
    }

    /// Smallest eigenvalue scaled to probability units (eigenvalues of the
    /// kernel times `dt`).
    pub fn min_eigenvalue(&self) -> Result<f64, StateError> {
        Ok(linalg::min_eigenvalue(&self.rho)? * self.grid.dt())
    }

    /// Spectral decomposition into probabilities and normalized pure
    /// states, discarding components with weight below `1e-12`.
    pub fn eigen_mixture(&self) -> Result<Vec<(f64, PureState)>, StateError> {
        let (vals, vecs) = linalg::hermitian_eigen(&self.rho)?;
        let dt = self.grid.dt();
        let mut out = Vec::new();
        for (idx, &v) in vals.iter().enumerate() {
            let p = v * dt;
            if p > 1e-12 {
                let amp = vecs.column(idx).mapv(|z| z / dt.sqrt());
                out.push((p, PureState { grid: self.grid, amp }));
            }
        }
        Ok(out)
    }
}

/// Shape of the probe reference pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShape {
    /// On-grid arrival-time eigenstate (delta-like spike, width 0).
    Ideal,
    /// Normalized Gaussian envelope of the given width.
    Gaussian,
}

/// The probe photon's reference pulse: peak time, width and shape.
///
/// Width 0 and [`ReferenceShape::Ideal`] go together; Gaussian mode
/// requires `width >= 2 dt` on the grid it is used with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePulse {
    pub peak_time: f64,
    pub width: f64,
    pub shape: ReferenceShape,
}

impl ReferencePulse {
    /// Ideal (delta-like) reference peaked at an on-grid time.
    pub fn ideal(peak_time: f64) -> Self {
        Self {
            peak_time,
            width: 0.0,
            shape: ReferenceShape::Ideal,
        }
    }

    /// Gaussian reference of the given width.
    pub fn gaussian(peak_time: f64, width: f64) -> Self {
        Self {
            peak_time,
            width,
            shape: ReferenceShape::Gaussian,
        }
    }

    /// Checks the shape/width pairing and resolvability on `grid`.
    pub fn validate(&self, grid: &TemporalGrid) -> Result<(), StateError> {
        match self.shape {
            ReferenceShape::Ideal => {
                if self.width != 0.0 {
                    return Err(StateError::WidthUnresolvable {
                        width: self.width,
                        dt: grid.dt(),
                    });
                }
                grid.time_index_of(self.peak_time)?;
                Ok(())
            }
            ReferenceShape::Gaussian => {
                if self.width < 2.0 * grid.dt() {
                    return Err(StateError::WidthUnresolvable {
                        width: self.width,
                        dt: grid.dt(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Time bin of the peak (ideal mode).
    pub fn peak_index(&self, grid: &TemporalGrid) -> Result<usize, StateError> {
        Ok(grid.time_index_of(self.peak_time)?)
    }
}

/// Embeds a reference pulse as a normalized [`PureState`].
///
/// Convention (tested explicitly): both modes return a unit-norm state,
/// `sum |amp|^2 dt = 1`. The ideal mode is the `1/sqrt(dt)` spike, so its
/// bare squared amplitudes sum to `1/dt`; the delta-normalized basis
/// column (`1/dt` spike, self-overlap `1/dt`) appears only inside rate
/// kernels, never as a state.
///
/// Unlike [`gaussian_pulse`], the Gaussian branch carries no aliasing
/// guard: a reference scan must be able to park the pulse at every bin,
/// and near the window edges the envelope is simply truncated and
/// renormalized.
pub fn reference_as_state(
    grid: &TemporalGrid,
    reference: &ReferencePulse,
) -> Result<PureState, StateError> {
    reference.validate(grid)?;
    match reference.shape {
        ReferenceShape::Ideal => {
            let j = reference.peak_index(grid)?;
            let mut amp = Array1::from_elem(grid.n_points(), C64::new(0.0, 0.0));
            amp[j] = C64::new(1.0 / grid.dt().sqrt(), 0.0);
            PureState::new(*grid, amp)
        }
        ReferenceShape::Gaussian => {
            reference_envelope(grid, reference.peak_time, reference.width)
        }
    }
}

/// Normalized chirp-free Gaussian envelope used for reference pulses;
/// truncation at the window edges is allowed (see [`reference_as_state`]).
pub(crate) fn reference_envelope(
    grid: &TemporalGrid,
    peak_time: f64,
    width: f64,
) -> Result<PureState, StateError> {
    let amp = Array1::from_shape_fn(grid.n_points(), |j| {
        let x = grid.time_at(j) - peak_time;
        C64::new((-x * x / (4.0 * width * width)).exp(), 0.0)
    });
    PureState::from_unnormalized(*grid, amp)
}

/// Normalized Gaussian pulse
/// `amp_j ~ exp(-(t_j - peak)^2 / (4 width^2) + i chirp (t_j - peak)^2 - i carrier t_j)`.
///
/// `width` is the rms width of the intensity `|amp|^2`; `carrier` is the
/// center of the frequency-representation spectrum. (A photon of
/// frequency `omega` evolves as `exp(-i omega t)`, so with
/// `<omega|t> = exp(+i omega t)/sqrt(2 pi)` the carrier enters with a
/// minus sign in time.) Fails if the envelope has not decayed below
/// [`ALIASING_FLOOR`] (relative to its on-grid peak) at the window edges.
pub fn gaussian_pulse(
    grid: &TemporalGrid,
    peak_time: f64,
    width: f64,
    chirp: f64,
    carrier: f64,
) -> Result<PureState, StateError> {
    if width < 2.0 * grid.dt() {
        return Err(StateError::WidthUnresolvable {
            width,
            dt: grid.dt(),
        });
    }
    let n = grid.n_points();
    let envelope: Vec<f64> = (0..n)
        .map(|j| {
            let x = grid.time_at(j) - peak_time;
            (-x * x / (4.0 * width * width)).exp()
        })
        .collect();
    let peak = envelope.iter().cloned().fold(0.0f64, f64::max);
    let edge = envelope[0].max(envelope[n - 1]) / peak;
    if edge > ALIASING_FLOOR {
        return Err(StateError::Aliasing {
            edge_fraction: edge,
        });
    }
    let amp = Array1::from_shape_fn(n, |j| {
        let t = grid.time_at(j);
        let x = t - peak_time;
        C64::from_polar(envelope[j], chirp * x * x - carrier * t)
    });
    PureState::from_unnormalized(*grid, amp)
}

/// Normalized weighted superposition of pure states on a common grid.
pub fn superpose(components: &[(PureState, C64)]) -> Result<PureState, StateError> {
    let (first, _) = components.first().ok_or(StateError::EmptyInput)?;
    let grid = *first.grid();
    let mut amp = Array1::from_elem(grid.n_points(), C64::new(0.0, 0.0));
    for (state, weight) in components {
        if *state.grid() != grid {
            return Err(StateError::GridMismatch);
        }
        amp.zip_mut_with(state.amp(), |acc, a| *acc += weight * a);
    }
    let norm_sq: f64 = amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dt();
    let weight_scale: f64 = components
        .iter()
        .map(|(_, w)| w.norm_sqr())
        .sum::<f64>()
        .max(1e-30);
    if norm_sq < 1e-20 * weight_scale {
        return Err(StateError::DegenerateSuperposition);
    }
    PureState::from_unnormalized(grid, amp)
}

/// Projector `|psi><psi|` as a density matrix.
pub fn pure_to_density(state: &PureState) -> DensityMatrix {
    let n = state.grid().n_points();
    let rho = Array2::from_shape_fn((n, n), |(m, k)| state.amp()[m] * state.amp()[k].conj());
    DensityMatrix::from_raw(*state.grid(), rho)
}

/// Convex mixture `rho = sum p_k rho_k` of density matrices on a common
/// grid; probabilities must be non-negative and sum to 1.
pub fn mix(components: &[(DensityMatrix, f64)]) -> Result<DensityMatrix, StateError> {
    let (first, _) = components.first().ok_or(StateError::EmptyInput)?;
    let grid = *first.grid();
    let mut sum_p = 0.0;
    for (_, p) in components {
        if *p < 0.0 {
            return Err(StateError::NegativeProbability { p: *p });
        }
        sum_p += p;
    }
    if (sum_p - 1.0).abs() > 1e-10 {
        return Err(StateError::BadProbabilities { sum: sum_p });
    }
    let n = grid.n_points();
    let mut rho = Array2::from_elem((n, n), C64::new(0.0, 0.0));
    for (component, p) in components {
        if *component.grid() != grid {
            return Err(StateError::GridMismatch);
        }
        rho.zip_mut_with(component.matrix(), |acc, r| *acc += r * *p);
    }
    Ok(DensityMatrix::from_raw(grid, rho))
}

/// A pure two-photon temporal state `psi2(t1, t2)`.
#[derive(Debug, Clone)]
pub struct TwoPhotonPureState {
    grid_1: TemporalGrid,
    grid_2: TemporalGrid,
    amp: Array2<C64>,
}

impl TwoPhotonPureState {
    /// Wraps an already-normalized two-photon amplitude
    /// (`sum |amp|^2 dt1 dt2 = 1` within `1e-10`).
    pub fn new(
        grid_1: TemporalGrid,
        grid_2: TemporalGrid,
        amp: Array2<C64>,
    ) -> Result<Self, StateError> {
        if amp.dim() != (grid_1.n_points(), grid_2.n_points()) {
            return Err(GridError::LengthMismatch {
                got: amp.nrows(),
                expected: grid_1.n_points(),
            }
            .into());
        }
        let norm_sq: f64 =
            amp.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid_1.dt() * grid_2.dt();
        if (norm_sq - 1.0).abs() > 1e-10 {
            return Err(StateError::NotNormalized { norm_sq });
        }
        Ok(Self { grid_1, grid_2, amp })
    }

    pub fn grid_1(&self) -> &TemporalGrid {
        &self.grid_1
    }

    pub fn grid_2(&self) -> &TemporalGrid {
        &self.grid_2
    }

    pub fn amp(&self) -> &Array2<C64> {
        &self.amp
    }

    /// Reduced density matrix of one photon (1 or 2), unit trace.
    pub fn reduced_density(&self, photon: usize) -> DensityMatrix {
        assert!(photon == 1 || photon == 2, "photon index must be 1 or 2");
        if photon == 1 {
            let n = self.grid_1.n_points();
            let rho = Array2::from_shape_fn((n, n), |(m, mp)| {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..self.grid_2.n_points() {
                    acc += self.amp[(m, k)] * self.amp[(mp, k)].conj();
                }
                acc * self.grid_2.dt()
            });
            DensityMatrix::from_raw(self.grid_1, rho)
        } else {
            let n = self.grid_2.n_points();
            let rho = Array2::from_shape_fn((n, n), |(k, kp)| {
                let mut acc = C64::new(0.0, 0.0);
                for m in 0..self.grid_1.n_points() {
                    acc += self.amp[(m, k)] * self.amp[(m, kp)].conj();
                }
                acc * self.grid_1.dt()
            });
            DensityMatrix::from_raw(self.grid_2, rho)
        }
    }

    /// Schmidt amplitudes, descending; their squares sum to 1.
    pub fn schmidt_values(&self) -> Result<Vec<f64>, StateError> {
        Ok(linalg::schmidt_values(
            &self.amp,
            self.grid_1.dt(),
            self.grid_2.dt(),
        )?)
    }
}

/// Double-Gaussian entangled pair
/// `psi2 ~ exp(-(t1 - t2)^2 / (4 sigma_minus^2)) exp(-(t1 + t2)^2 / (4 sigma_plus^2))`.
///
/// `sigma_plus = sigma_minus` gives a product state; otherwise the Schmidt
/// spectrum is geometric, `s_n = sqrt(1 - mu^2) mu^n` with
/// `mu = |sigma_plus - sigma_minus| / (sigma_plus + sigma_minus)`.
pub fn gaussian_entangled_pair(
    grid_1: &TemporalGrid,
    grid_2: &TemporalGrid,
    sigma_minus: f64,
    sigma_plus: f64,
) -> Result<TwoPhotonPureState, StateError> {
    let dt_max = grid_1.dt().max(grid_2.dt());
    for sigma in [sigma_minus, sigma_plus] {
        if sigma < 2.0 * dt_max {
            return Err(StateError::WidthUnresolvable {
                width: sigma,
                dt: dt_max,
            });
        }
    }
    let n1 = grid_1.n_points();
    let n2 = grid_2.n_points();
    let envelope = |t1: f64, t2: f64| -> f64 {
        let d = t1 - t2;
        let s = t1 + t2;
        (-d * d / (4.0 * sigma_minus * sigma_minus) - s * s / (4.0 * sigma_plus * sigma_plus)).exp()
    };
    let raw = Array2::from_shape_fn((n1, n2), |(j1, j2)| {
        C64::new(envelope(grid_1.time_at(j1), grid_2.time_at(j2)), 0.0)
    });
    let peak = raw.iter().map(|z| z.re).fold(0.0f64, f64::max);
    let mut edge = 0.0f64;
    for j1 in 0..n1 {
        edge = edge.max(raw[(j1, 0)].re).max(raw[(j1, n2 - 1)].re);
    }
    for j2 in 0..n2 {
        edge = edge.max(raw[(0, j2)].re).max(raw[(n1 - 1, j2)].re);
    }
    if edge / peak > ALIASING_FLOOR {
        return Err(StateError::Aliasing {
            edge_fraction: edge / peak,
        });
    }
    let norm_sq: f64 = raw.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid_1.dt() * grid_2.dt();
    let scale = 1.0 / norm_sq.sqrt();
    TwoPhotonPureState::new(*grid_1, *grid_2, raw.mapv(|z| z * scale))
}
