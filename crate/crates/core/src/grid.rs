//! Uniform temporal grids, the conjugate frequency lattice, and the
//! plane-wave overlap kernel shared by every other module.
//!
//! A grid of `n_points` bins of width `dt` starting at `t_start` carries a
//! centered frequency lattice `omega_k = -pi/dt + k * d_omega` with
//! `d_omega = 2 pi / (n_points * dt)`. On this pair of lattices the
//! transform implemented by [`TemporalGrid::to_frequency`] is exactly
//! unitary with respect to the `dt` / `d_omega` measures.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * amplitudes are densities: a normalized state has
//!   `sum_j |amp_j|^2 * dt = 1`;
//! * the plane-wave overlap is `<omega|t> = exp(+i omega t) / sqrt(2 pi)`,
//!   so `to_frequency` maps time amplitudes `psi(t_j)` to
//!   `psi(omega_k) = sum_j exp(+i omega_k t_j) psi(t_j) dt / sqrt(2 pi)`.
//!   The `+` sign is forced by the fringe-inversion chain: the wavefunction
//!   retrieval steps multiply fringe coefficients by `exp(-i omega t)` and
//!   only this sign makes retrieval in the time and frequency bases agree
//!   with each other;
//! * an ideal arrival-time eigenstate at bin `j` is the `1/sqrt(dt)` spike
//!   (as a normalized state) or the `1/dt` spike (as a delta-normalized
//!   basis column), so `<t_j|t_k> = delta_jk / dt`.

use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// `1 / sqrt(2 pi)`, the modulus of every plane-wave overlap.
pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Errors from grid construction and basis transforms.
#[derive(Debug, Error)]
pub enum GridError {
    /// Returned when a grid is requested with too few points or a
    /// non-positive or non-finite step.
    #[error("invalid grid: n_points = {n_points}, dt = {dt} (need n_points >= 8, finite dt > 0)")]
    InvalidGrid { n_points: usize, dt: f64 },

    /// Returned when a frequency or time index lies outside the lattice.
    #[error("{axis} index {index} out of range for {len} points")]
    IndexOutOfRange {
        axis: &'static str,
        index: usize,
        len: usize,
    },

    /// Returned when a vector's length does not match the grid.
    #[error("vector length {got} does not match grid ({expected} points)")]
    LengthMismatch { got: usize, expected: usize },

    /// Returned when an operation needs an on-lattice coordinate and the
    /// given one is not within tolerance of any lattice point.
    #[error("{axis} value {value} is not on the lattice (nearest point {nearest})")]
    OffLattice {
        axis: &'static str,
        value: f64,
        nearest: f64,
    },
}

/// Uniform time lattice with its centered conjugate frequency lattice.
///
/// Power-of-two `n_points` is recommended (not required); the default
/// experiment grid is 256 points with `dt` chosen so the signal spectrum
/// occupies less than a quarter of the frequency window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct TemporalGrid {
    n_points: usize,
    dt: f64,
    t_start: f64,
}

/// Serialization mirror of [`TemporalGrid`]; deserialization re-validates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_points: usize,
    dt: f64,
    t_start: f64,
}

impl TryFrom<RawGrid> for TemporalGrid {
    type Error = GridError;

    fn try_from(raw: RawGrid) -> Result<Self, GridError> {
        TemporalGrid::new(raw.n_points, raw.dt, raw.t_start)
    }
}

impl From<TemporalGrid> for RawGrid {
    fn from(g: TemporalGrid) -> Self {
        RawGrid {
            n_points: g.n_points,
            dt: g.dt,
            t_start: g.t_start,
        }
    }
}

impl TemporalGrid {
    /// Builds a grid of `n_points` time bins of width `dt` starting at
    /// `t_start`.
    pub fn new(n_points: usize, dt: f64, t_start: f64) -> Result<Self, GridError> {
        if n_points < 8 || !dt.is_finite() || dt <= 0.0 || !t_start.is_finite() {
            return Err(GridError::InvalidGrid { n_points, dt });
        }
        Ok(Self {
            n_points,
            dt,
            t_start,
        })
    }

    /// Number of time bins (equals the number of frequency bins).
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    /// Time step.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Left edge of the time window.
    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    /// Frequency step `2 pi / (n_points * dt)`.
    pub fn d_omega(&self) -> f64 {
        TAU / (self.n_points as f64 * self.dt)
    }

    /// Left edge of the centered frequency window, `-pi / dt`.
    pub fn omega_min(&self) -> f64 {
        -PI / self.dt
    }

    /// Time at bin `j`. Panics if `j` is out of range.
    pub fn time_at(&self, j: usize) -> f64 {
        assert!(j < self.n_points, "time index {j} out of range");
        self.t_start + j as f64 * self.dt
    }

    /// Frequency at lattice index `k`. Panics if `k` is out of range.
    pub fn omega_at(&self, k: usize) -> f64 {
        assert!(k < self.n_points, "frequency index {k} out of range");
        self.omega_min() + k as f64 * self.d_omega()
    }

    /// All bin times.
    pub fn times(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_points).map(|j| self.time_at(j)))
    }

    /// All lattice frequencies.
    pub fn omegas(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n_points).map(|k| self.omega_at(k)))
    }

    /// Resolves a time to its bin index; the time must sit on a bin center
    /// to within `1e-6 * dt`.
    pub fn time_index_of(&self, t: f64) -> Result<usize, GridError> {
        let j = ((t - self.t_start) / self.dt).round();
        let idx = j.clamp(0.0, (self.n_points - 1) as f64) as usize;
        let nearest = self.time_at(idx);
        if (t - nearest).abs() <= 1e-6 * self.dt {
            Ok(idx)
        } else {
            Err(GridError::OffLattice {
                axis: "time",
                value: t,
                nearest,
            })
        }
    }

    /// Resolves a frequency to its lattice index; must sit on the lattice
    /// to within `1e-6 * d_omega`.
    pub fn omega_index_of(&self, omega: f64) -> Result<usize, GridError> {
        let k = ((omega - self.omega_min()) / self.d_omega()).round();
        let idx = k.clamp(0.0, (self.n_points - 1) as f64) as usize;
        let nearest = self.omega_at(idx);
        if (omega - nearest).abs() <= 1e-6 * self.d_omega() {
            Ok(idx)
        } else {
            Err(GridError::OffLattice {
                axis: "frequency",
                value: omega,
                nearest,
            })
        }
    }

    /// Plane-wave overlap `<omega_k|t_j> = exp(+i omega_k t_j) / sqrt(2 pi)`.
    ///
    /// Its squared modulus is `1/(2 pi)` for every lattice point, which is
    /// what makes the background under frequency-resolved detection flat.
    pub fn plane_wave_overlap(&self, omega_index: usize, time_index: usize) -> Result<C64, GridError> {
        if omega_index >= self.n_points {
            return Err(GridError::IndexOutOfRange {
                axis: "frequency",
                index: omega_index,
                len: self.n_points,
            });
        }
        if time_index >= self.n_points {
            return Err(GridError::IndexOutOfRange {
                axis: "time",
                index: time_index,
                len: self.n_points,
            });
        }
        let phase = self.omega_at(omega_index) * self.time_at(time_index);
        Ok(C64::from_polar(INV_SQRT_2PI, phase))
    }

    /// Maps time-bin amplitudes to frequency-lattice amplitudes:
    /// `psi(omega_k) = sum_j <omega_k|t_j> psi(t_j) dt`.
    ///
    /// Unitary with respect to the `dt` / `d_omega` measures; inverted
    /// exactly (to rounding) by [`TemporalGrid::to_time`].
    pub fn to_frequency(&self, amps: ArrayView1<C64>) -> Result<Array1<C64>, GridError> {
        if amps.len() != self.n_points {
            return Err(GridError::LengthMismatch {
                got: amps.len(),
                expected: self.n_points,
            });
        }
        Ok(self.dft_matrix().dot(&amps))
    }

    /// Inverse of [`TemporalGrid::to_frequency`]:
    /// `psi(t_j) = sum_k <omega_k|t_j>* psi(omega_k) d_omega`.
    pub fn to_time(&self, amps: ArrayView1<C64>) -> Result<Array1<C64>, GridError> {
        if amps.len() != self.n_points {
            return Err(GridError::LengthMismatch {
                got: amps.len(),
                expected: self.n_points,
            });
        }
        let scale = self.d_omega() * INV_SQRT_2PI;
        let out = Array1::from_shape_fn(self.n_points, |j| {
            let t = self.time_at(j);
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..self.n_points {
                acc += C64::from_polar(1.0, -self.omega_at(k) * t) * amps[k];
            }
            acc * scale
        });
        Ok(out)
    }

    /// Dense matrix of `to_frequency`: `F[k, j] = <omega_k|t_j> dt`.
    ///
    /// Row `k` against a time-amplitude vector gives the frequency
    /// amplitude at `omega_k`; `F rho F^H` is a density matrix in the
    /// frequency representation (trace measure `d_omega`).
    pub(crate) fn dft_matrix(&self) -> Array2<C64> {
        let scale = self.dt * INV_SQRT_2PI;
        Array2::from_shape_fn((self.n_points, self.n_points), |(k, j)| {
            C64::from_polar(scale, self.omega_at(k) * self.time_at(j))
        })
    }
}
