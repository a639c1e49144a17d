//! On-disk formats: versioned JSON for states and quasiprobability
//! distributions, CSV for rate and count tables.
//!
//! CSV columns are fixed: `omega, t_ref, phi, theta, rate, is_sampled,
//! omega2, t2, phi2, theta2`. `omega` is empty for broadband records
//! and the last four columns are empty for single-photon records.
//! Floats are written with 17 significant digits so a read-back
//! reproduces the exact values.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::grid::{GridError, TemporalGrid};
use crate::states::{DensityMatrix, PureState, StateError, TwoPhotonPureState};
use crate::tomography::{CountRecord, KirkwoodDistribution, PairSettings, TomographyError};

pub const SCHEMA_VERSION: u32 = 1;

/// Errors from serialization and deserialization.
#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    /// Returned when a file declares a schema this build does not
    /// speak.
    #[error("unsupported schema_version {found}, this build reads {SCHEMA_VERSION}")]
    SchemaVersion { found: u32 },
    /// Returned when array lengths do not match the declared grid.
    #[error("{what} has {found} entries, expected {expected}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Returned when a CSV row cannot be interpreted.
    #[error("record {index}: {detail}")]
    MalformedRecord { index: usize, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Tomography(#[from] TomographyError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    n_points: usize,
    dt: f64,
    t_start: f64,
}

impl GridSpec {
    fn of(grid: &TemporalGrid) -> Self {
        Self {
            n_points: grid.n_points(),
            dt: grid.dt(),
            t_start: grid.t_start(),
        }
    }

    fn build(&self) -> Result<TemporalGrid, GridError> {
        TemporalGrid::new(self.n_points, self.dt, self.t_start)
    }
}

fn split_complex(values: impl Iterator<Item = C64>) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for z in values {
        re.push(z.re);
        im.push(z.im);
    }
    (re, im)
}

fn join_complex(re: &[f64], im: &[f64], what: &'static str, expected: usize) -> Result<Vec<C64>, IoError> {
    if re.len() != expected {
        return Err(IoError::ShapeMismatch {
            what,
            expected,
            found: re.len(),
        });
    }
    if im.len() != expected {
        return Err(IoError::ShapeMismatch {
            what,
            expected,
            found: im.len(),
        });
    }
    Ok(re.iter().zip(im.iter()).map(|(&r, &i)| C64::new(r, i)).collect())
}

/// A state of any of the supported kinds, as stored on disk.
#[derive(Debug, Clone)]
pub enum StateBundle {
    Pure(PureState),
    Density(DensityMatrix),
    TwoPhoton(TwoPhotonPureState),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateFile {
    schema_version: u32,
    kind: String,
    grid: GridSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_2: Option<GridSpec>,
    amp_re: Vec<f64>,
    amp_im: Vec<f64>,
}

/// Writes a state as versioned JSON. Pure states store the amplitude
/// vector, density matrices and two-photon amplitudes their row-major
/// matrices.
pub fn save_state_json(path: &Path, state: &StateBundle) -> Result<(), IoError> {
    let file = match state {
        StateBundle::Pure(psi) => {
            let (amp_re, amp_im) = split_complex(psi.amp().iter().copied());
            StateFile {
                schema_version: SCHEMA_VERSION,
                kind: "pure".into(),
                grid: GridSpec::of(psi.grid()),
                grid_2: None,
                amp_re,
                amp_im,
            }
        }
        StateBundle::Density(rho) => {
            let (amp_re, amp_im) = split_complex(rho.matrix().iter().copied());
            StateFile {
                schema_version: SCHEMA_VERSION,
                kind: "density".into(),
                grid: GridSpec::of(rho.grid()),
                grid_2: None,
                amp_re,
                amp_im,
            }
        }
        StateBundle::TwoPhoton(psi2) => {
            let (amp_re, amp_im) = split_complex(psi2.amp().iter().copied());
            StateFile {
                schema_version: SCHEMA_VERSION,
                kind: "two_photon".into(),
                grid: GridSpec::of(psi2.grid_1()),
                grid_2: Some(GridSpec::of(psi2.grid_2())),
                amp_re,
                amp_im,
            }
        }
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a state written by [`save_state_json`], revalidating all
/// state invariants on the way in.
pub fn load_state_json(path: &Path) -> Result<StateBundle, IoError> {
    let file: StateFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            found: file.schema_version,
        });
    }
    let grid = file.grid.build()?;
    let n = grid.n_points();
    match file.kind.as_str() {
        "pure" => {
            let amp = join_complex(&file.amp_re, &file.amp_im, "amplitude", n)?;
            Ok(StateBundle::Pure(PureState::new(
                grid,
                Array1::from_vec(amp),
            )?))
        }
        "density" => {
            let amp = join_complex(&file.amp_re, &file.amp_im, "density matrix", n * n)?;
            let matrix = Array2::from_shape_vec((n, n), amp)
                .expect("length checked against the grid");
            Ok(StateBundle::Density(DensityMatrix::new(grid, matrix)?))
        }
        "two_photon" => {
            let grid_2 = file
                .grid_2
                .ok_or(IoError::ShapeMismatch {
                    what: "second grid",
                    expected: 1,
                    found: 0,
                })?
                .build()?;
            let n2 = grid_2.n_points();
            let amp = join_complex(&file.amp_re, &file.amp_im, "joint amplitude", n * n2)?;
            let matrix = Array2::from_shape_vec((n, n2), amp)
                .expect("length checked against the grids");
            Ok(StateBundle::TwoPhoton(TwoPhotonPureState::new(
                grid, grid_2, matrix,
            )?))
        }
        other => Err(IoError::MalformedRecord {
            index: 0,
            detail: format!("unknown state kind {other:?}"),
        }),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KirkwoodFile {
    schema_version: u32,
    grid: GridSpec,
    values_re: Vec<f64>,
    values_im: Vec<f64>,
}

/// Writes a quasiprobability distribution as versioned JSON with
/// row-major real and imaginary parts.
pub fn save_kirkwood_json(path: &Path, k: &KirkwoodDistribution) -> Result<(), IoError> {
    let (values_re, values_im) = split_complex(k.values().iter().copied());
    let file = KirkwoodFile {
        schema_version: SCHEMA_VERSION,
        grid: GridSpec::of(k.grid()),
        values_re,
        values_im,
    };
    fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

/// Reads a distribution written by [`save_kirkwood_json`].
pub fn load_kirkwood_json(path: &Path) -> Result<KirkwoodDistribution, IoError> {
    let file: KirkwoodFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(IoError::SchemaVersion {
            found: file.schema_version,
        });
    }
    let grid = file.grid.build()?;
    let n = grid.n_points();
    let values = join_complex(&file.values_re, &file.values_im, "distribution", n * n)?;
    let matrix =
        Array2::from_shape_vec((n, n), values).expect("length checked against the grid");
    Ok(KirkwoodDistribution::new(grid, matrix)?)
}

const CSV_HEADER: [&str; 10] = [
    "omega",
    "t_ref",
    "phi",
    "theta",
    "rate",
    "is_sampled",
    "omega2",
    "t2",
    "phi2",
    "theta2",
];

/// 17 significant digits: enough to reproduce any f64 exactly.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes count records with the fixed column order
/// `omega, t_ref, phi, theta, rate, is_sampled, omega2, t2, phi2, theta2`.
pub fn write_records_csv(path: &Path, records: &[CountRecord]) -> Result<(), IoError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(CSV_HEADER)?;
    for r in records {
        let omega = r.omega_index.map(|k| k.to_string()).unwrap_or_default();
        let (omega2, t2, phi2, theta2) = match r.pair {
            Some(p) => (
                p.omega_index.to_string(),
                fmt(p.reference_peak_time),
                fmt(p.phi),
                fmt(p.theta),
            ),
            None => Default::default(),
        };
        writer.write_record([
            omega,
            fmt(r.reference_peak_time),
            fmt(r.phi),
            fmt(r.theta),
            fmt(r.rate_or_count),
            r.is_sampled.to_string(),
            omega2,
            t2,
            phi2,
            theta2,
        ])?;
    }
    writer.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    field: &str,
    index: usize,
    name: &str,
) -> Result<T, IoError> {
    field.parse().map_err(|_| IoError::MalformedRecord {
        index,
        detail: format!("cannot parse {name} from {field:?}"),
    })
}

/// Reads a table written by [`write_records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<CountRecord>, IoError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(IoError::MalformedRecord {
            index: 0,
            detail: format!("unexpected header {headers:?}"),
        });
    }
    let mut records = Vec::new();
    for (index, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != CSV_HEADER.len() {
            return Err(IoError::MalformedRecord {
                index,
                detail: format!("{} fields, expected {}", row.len(), CSV_HEADER.len()),
            });
        }
        let omega_index = match &row[0] {
            "" => None,
            field => Some(parse_field(field, index, "omega")?),
        };
        let pair = if row[6].is_empty() {
            for (col, name) in [(7, "t2"), (8, "phi2"), (9, "theta2")] {
                if !row[col].is_empty() {
                    return Err(IoError::MalformedRecord {
                        index,
                        detail: format!("{name} set without omega2"),
                    });
                }
            }
            None
        } else {
            Some(PairSettings {
                omega_index: parse_field(&row[6], index, "omega2")?,
                reference_peak_time: parse_field(&row[7], index, "t2")?,
                phi: parse_field(&row[8], index, "phi2")?,
                theta: parse_field(&row[9], index, "theta2")?,
            })
        };
        let record = CountRecord {
            omega_index,
            reference_peak_time: parse_field(&row[1], index, "t_ref")?,
            phi: parse_field(&row[2], index, "phi")?,
            theta: parse_field(&row[3], index, "theta")?,
            rate_or_count: parse_field(&row[4], index, "rate")?,
            is_sampled: parse_field(&row[5], index, "is_sampled")?,
            pair,
        };
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
