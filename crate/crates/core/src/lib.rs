//! Simulation and tomography toolkit for weak temporal measurements of
//! single photons.

pub mod grid;
pub mod interferometer;
pub mod io;
pub mod linalg;
pub mod noise;
pub mod states;
pub mod tomography;

pub use grid::TemporalGrid;
pub use interferometer::{MeasurementSettings, RateTable};
pub use noise::ShotNoiseConfig;
pub use tomography::{CountRecord, KirkwoodDistribution};
pub use states::{DensityMatrix, PureState, ReferencePulse, ReferenceShape, TwoPhotonPureState};

/// Complex scalar used for all amplitudes.
pub type C64 = num_complex::Complex64;

/// Crate version, for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
