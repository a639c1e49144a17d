//! Orchestrates one experiment run: builds the input state, generates
//! fringe records, reconstructs, and writes artifacts plus a manifest.
//!
//! The manifest embeds the effective config (after CLI overrides), its
//! SHA-256 and the tool versions, so any run can be reproduced from the
//! manifest alone. Runs are deterministic: noise is seeded explicitly
//! and the record generators emit cells in a fixed order.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use weaktime::grid::TemporalGrid;
use weaktime::interferometer::{MeasurementSettings, RateTable};
use weaktime::io::{self, StateBundle};
use weaktime::linalg;
use weaktime::noise::{sample_counts, ShotNoiseConfig};
use weaktime::states::{self, DensityMatrix, PureState, ReferencePulse, TwoPhotonPureState};
use weaktime::tomography::{self, CountRecord};
use weaktime::C64;

use crate::config::{ExperimentConfig, Mode, ReferenceSpec, StateSpec, SweepSpec};
use crate::error::CliError;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

pub fn run(config: &ExperimentConfig, quiet: bool) -> Result<PathBuf, CliError> {
    let out = config.output_dir.as_path();
    fs::create_dir_all(out).map_err(|e| CliError::fs(out, e))?;
    let mut artifacts: Vec<String> = Vec::new();
    let mut metrics = Map::new();
    match config.mode {
        Mode::Forward => run_forward(config, out, &mut artifacts, &mut metrics)?,
        Mode::Sample => run_sample(config, out, &mut artifacts, &mut metrics)?,
        Mode::ReconstructKirkwood => run_kirkwood(config, out, &mut artifacts, &mut metrics)?,
        Mode::ReconstructWavefunction => {
            run_wavefunction(config, out, &mut artifacts, &mut metrics)?
        }
        Mode::TwoPhoton => run_two_photon(config, out, &mut artifacts, &mut metrics)?,
    }
    let manifest_path = out.join("manifest.json");
    write_manifest(&manifest_path, config, &artifacts, &metrics)?;
    if !quiet {
        for name in &artifacts {
            println!("wrote {}", out.join(name).display());
        }
        println!("wrote {}", manifest_path.display());
    }
    Ok(manifest_path)
}

/// Input to the single-photon modes; keeps the pure form around when
/// there is one so fidelities can be reported against it.
enum SingleInput {
    Pure(PureState),
    Mixed(DensityMatrix),
}

impl SingleInput {
    fn density(&self) -> DensityMatrix {
        match self {
            SingleInput::Pure(psi) => states::pure_to_density(psi),
            SingleInput::Mixed(rho) => rho.clone(),
        }
    }

    fn pure(&self) -> Option<&PureState> {
        match self {
            SingleInput::Pure(psi) => Some(psi),
            SingleInput::Mixed(_) => None,
        }
    }
}

fn build_single(grid: &TemporalGrid, spec: &StateSpec) -> Result<SingleInput, CliError> {
    match spec {
        StateSpec::Gaussian(p) => Ok(SingleInput::Pure(states::gaussian_pulse(
            grid,
            p.peak_time,
            p.width,
            p.chirp,
            p.carrier,
        )?)),
        StateSpec::Superposition(s) => {
            let mut parts = Vec::with_capacity(s.components.len());
            for c in &s.components {
                parts.push((
                    states::gaussian_pulse(grid, c.peak_time, c.width, c.chirp, c.carrier)?,
                    C64::new(c.weight_re, c.weight_im),
                ));
            }
            Ok(SingleInput::Pure(states::superpose(&parts)?))
        }
        StateSpec::Mixture(m) => {
            let total: f64 = m.components.iter().map(|c| c.weight).sum();
            let mut parts = Vec::with_capacity(m.components.len());
            for c in &m.components {
                let psi =
                    states::gaussian_pulse(grid, c.peak_time, c.width, c.chirp, c.carrier)?;
                parts.push((states::pure_to_density(&psi), c.weight / total));
            }
            Ok(SingleInput::Mixed(states::mix(&parts)?))
        }
        StateSpec::File(f) => match io::load_state_json(&f.path)? {
            StateBundle::Pure(psi) => {
                if psi.grid() != grid {
                    return Err(grid_mismatch(&f.path));
                }
                Ok(SingleInput::Pure(psi))
            }
            StateBundle::Density(rho) => {
                if rho.grid() != grid {
                    return Err(grid_mismatch(&f.path));
                }
                Ok(SingleInput::Mixed(rho))
            }
            StateBundle::TwoPhoton(_) => Err(CliError::Config(format!(
                "state.path: {} holds a two-photon state, use two-photon mode",
                f.path.display()
            ))),
        },
        StateSpec::EntangledPair(_) => Err(CliError::Config(
            "state.family: entangled_pair needs two-photon mode".into(),
        )),
    }
}

fn build_pair(
    grid_1: &TemporalGrid,
    grid_2: &TemporalGrid,
    spec: &StateSpec,
) -> Result<TwoPhotonPureState, CliError> {
    match spec {
        StateSpec::EntangledPair(p) => Ok(states::gaussian_entangled_pair(
            grid_1,
            grid_2,
            p.sigma_minus,
            p.sigma_plus,
        )?),
        StateSpec::File(f) => match io::load_state_json(&f.path)? {
            StateBundle::TwoPhoton(psi2) => {
                if psi2.grid_1() != grid_1 || psi2.grid_2() != grid_2 {
                    return Err(grid_mismatch(&f.path));
                }
                Ok(psi2)
            }
            _ => Err(CliError::Config(format!(
                "state.path: {} is not a two-photon state",
                f.path.display()
            ))),
        },
        _ => Err(CliError::Config(
            "state.family: two-photon mode needs entangled_pair or a pair file".into(),
        )),
    }
}

fn grid_mismatch(path: &Path) -> CliError {
    CliError::Config(format!(
        "state.path: grid in {} differs from the config grid",
        path.display()
    ))
}

fn rate_table(rho: &DensityMatrix, reference: &ReferenceSpec) -> Result<RateTable, CliError> {
    match reference {
        ReferenceSpec::Ideal => Ok(RateTable::ideal(rho)),
        ReferenceSpec::Gaussian(w) => Ok(RateTable::gaussian(rho, w.width)?),
    }
}

/// Base reference pulse for settings whose peak time is scanned later.
fn reference_pulse(grid: &TemporalGrid, reference: &ReferenceSpec) -> ReferencePulse {
    match reference {
        ReferenceSpec::Ideal => ReferencePulse::ideal(grid.time_at(0)),
        ReferenceSpec::Gaussian(w) => ReferencePulse::gaussian(grid.time_at(0), w.width),
    }
}

fn phases(count: usize) -> Vec<f64> {
    (0..count).map(|m| TAU * m as f64 / count as f64).collect()
}

/// Rate records over the configured sweep, cells in a fixed
/// theta-major, time, frequency, phase order.
fn forward_records(table: &RateTable, sweep: &SweepSpec) -> Result<Vec<CountRecord>, CliError> {
    let grid = table.grid();
    let n = grid.n_points();
    let times: Vec<usize> = match &sweep.reference_times {
        None => (0..n).collect(),
        Some(ts) => ts
            .iter()
            .map(|&t| grid.time_index_of(t))
            .collect::<Result<_, _>>()?,
    };
    let omegas: Vec<usize> = match &sweep.omega_indices {
        None => (0..n).collect(),
        Some(ks) => ks.clone(),
    };
    let phis = phases(sweep.phi_count);
    let mut records =
        Vec::with_capacity(sweep.thetas.len() * times.len() * omegas.len() * phis.len());
    for &theta in &sweep.thetas {
        for &j in &times {
            for &k in &omegas {
                for &phi in &phis {
                    records.push(CountRecord {
                        omega_index: Some(k),
                        reference_peak_time: grid.time_at(j),
                        phi,
                        theta,
                        rate_or_count: table.rate(theta, phi, j, k).max(0.0),
                        is_sampled: false,
                        pair: None,
                    });
                }
            }
        }
    }
    Ok(records)
}

fn write_csv(
    out: &Path,
    name: &str,
    records: &[CountRecord],
    artifacts: &mut Vec<String>,
) -> Result<(), CliError> {
    io::write_records_csv(&out.join(name), records)?;
    artifacts.push(name.to_string());
    Ok(())
}

fn insert(metrics: &mut Map<String, Value>, key: &str, value: Value) {
    metrics.insert(key.to_string(), value);
}

fn max_rate(records: &[CountRecord]) -> f64 {
    records.iter().map(|r| r.rate_or_count).fold(0.0, f64::max)
}

fn run_forward(
    config: &ExperimentConfig,
    out: &Path,
    artifacts: &mut Vec<String>,
    metrics: &mut Map<String, Value>,
) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let input = build_single(&grid, &config.state)?;
    let rho = input.density();
    let table = rate_table(&rho, &config.sweep.reference)?;
    let records = forward_records(&table, &config.sweep)?;
    write_csv(out, "rates.csv", &records, artifacts)?;
    let spectrum_residual = (table.spectrum().sum() * grid.d_omega() - rho.trace()).abs();
    insert(metrics, "record_count", json!(records.len()));
    insert(metrics, "max_rate", json!(max_rate(&records)));
    insert(metrics, "spectrum_normalization_residual", json!(spectrum_residual));
    insert(metrics, "input_trace", json!(rho.trace()));
    Ok(())
}

fn run_sample(
    config: &ExperimentConfig,
    out: &Path,
    artifacts: &mut Vec<String>,
    metrics: &mut Map<String, Value>,
) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let input = build_single(&grid, &config.state)?;
    let rho = input.density();
    let table = rate_table(&rho, &config.sweep.reference)?;
    let rates = forward_records(&table, &config.sweep)?;
    let noise = config.noise.as_ref().expect("validated: sample mode has noise");
    let cfg = ShotNoiseConfig {
        total_pairs: noise.total_pairs,
        seed: noise.seed,
    };
    let counts = sample_counts(&grid, &rates, &cfg)?;
    write_csv(out, "rates.csv", &rates, artifacts)?;
    write_csv(out, "counts.csv", &counts, artifacts)?;
    let total: f64 = counts.iter().map(|r| r.rate_or_count).sum();
    insert(metrics, "record_count", json!(counts.len()));
    insert(metrics, "total_counts", json!(total));
    insert(metrics, "total_pairs", json!(noise.total_pairs));
    Ok(())
}

fn run_kirkwood(
    config: &ExperimentConfig,
    out: &Path,
    artifacts: &mut Vec<String>,
    metrics: &mut Map<String, Value>,
) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let input = build_single(&grid, &config.state)?;
    let rho_in = input.density();
    let theta = config.sweep.thetas[0];
    let table = rate_table(&rho_in, &config.sweep.reference)?;
    let rates = tomography::sweep_fringe_records(&table, theta, config.sweep.phi_count);
    let (records, sampled) = match &config.noise {
        Some(noise) => {
            let cfg = ShotNoiseConfig {
                total_pairs: noise.total_pairs,
                seed: noise.seed,
            };
            (sample_counts(&grid, &rates, &cfg)?, true)
        }
        None => (rates, false),
    };
    write_csv(out, "records.csv", &records, artifacts)?;

    let kirkwood = tomography::kirkwood_from_fringes(&grid, &records, theta)?;
    io::save_kirkwood_json(&out.join("kirkwood.json"), &kirkwood)?;
    artifacts.push("kirkwood.json".into());

    insert(metrics, "sampled", json!(sampled));
    insert(metrics, "theta", json!(theta));
    insert(
        metrics,
        "normalization_residual",
        json!((kirkwood.integral() - C64::new(1.0, 0.0)).norm()),
    );
    let time_in = rho_in.time_marginal();
    let freq_in = rho_in.frequency_marginal();
    let time_res = kirkwood
        .time_marginal()
        .iter()
        .zip(time_in.iter())
        .map(|(k, &r)| (k - C64::new(r, 0.0)).norm())
        .fold(0.0, f64::max);
    let freq_res = kirkwood
        .frequency_marginal()
        .iter()
        .zip(freq_in.iter())
        .map(|(k, &r)| (k - C64::new(r, 0.0)).norm())
        .fold(0.0, f64::max);
    insert(metrics, "time_marginal_residual", json!(time_res));
    insert(metrics, "frequency_marginal_residual", json!(freq_res));
    if let Some(psi) = input.pure() {
        // Defined for any scan, even ones the Hermitian gate below
        // would reject (finite reference pulses, shot noise).
        insert(
            metrics,
            "fidelity_overlap",
            json!(kirkwood.pure_overlap(psi)?.re),
        );
    }

    // Shot noise breaks the cross-symmetry the Hermitian gate checks at
    // O(1/sqrt(counts)), far above its tolerance, so the gated density
    // rebuild only runs on exact records.
    if !sampled {
        let rho_hat = tomography::reconstruct_density(&kirkwood)?;
        io::save_state_json(
            &out.join("density.json"),
            &StateBundle::Density(rho_hat.clone()),
        )?;
        artifacts.push("density.json".into());
        insert(metrics, "purity", json!(rho_hat.purity()));
        insert(metrics, "trace_residual", json!((rho_hat.trace() - 1.0).abs()));
        match input.pure() {
            Some(psi) => insert(
                metrics,
                "fidelity",
                json!(linalg::fidelity_pure(psi.amp(), rho_hat.matrix(), grid.dt())),
            ),
            None => insert(
                metrics,
                "trace_distance",
                json!(linalg::trace_distance(
                    rho_in.matrix(),
                    rho_hat.matrix(),
                    grid.dt()
                )?),
            ),
        }
    }
    Ok(())
}

fn run_wavefunction(
    config: &ExperimentConfig,
    out: &Path,
    artifacts: &mut Vec<String>,
    metrics: &mut Map<String, Value>,
) -> Result<(), CliError> {
    let grid = config.grid.build()?;
    let input = build_single(&grid, &config.state)?;
    let psi_in = input.pure().ok_or_else(|| {
        CliError::Config("state: wavefunction retrieval needs a pure state".into())
    })?;
    let rho = input.density();
    let theta = config.sweep.thetas[0];
    let phi_count = config.sweep.phi_count;
    let table = rate_table(&rho, &config.sweep.reference)?;
    let omega_index = config.sweep.omega_indices.as_ref().expect("validated")[0];
    let slice_time = config.sweep.reference_times.as_ref().expect("validated")[0];
    let time_index = grid.time_index_of(slice_time)?;

    let mut recs_time = tomography::omega_slice_records(&table, theta, phi_count, omega_index);
    let mut recs_freq = tomography::time_slice_records(&table, theta, phi_count, time_index);
    let sampled = if let Some(noise) = &config.noise {
        // Two independent scans, a full budget each; the derived seed
        // keeps their streams uncorrelated.
        let cfg_time = ShotNoiseConfig {
            total_pairs: noise.total_pairs,
            seed: noise.seed,
        };
        let cfg_freq = ShotNoiseConfig {
            total_pairs: noise.total_pairs,
            seed: noise.seed.wrapping_add(1),
        };
        recs_time = sample_counts(&grid, &recs_time, &cfg_time)?;
        recs_freq = sample_counts(&grid, &recs_freq, &cfg_freq)?;
        true
    } else {
        false
    };
    write_csv(out, "records_time_domain.csv", &recs_time, artifacts)?;
    write_csv(out, "records_frequency_domain.csv", &recs_freq, artifacts)?;

    let psi_t = tomography::wavefunction_time(&grid, &recs_time, theta)?;
    let psi_w = tomography::wavefunction_freq(&grid, &recs_freq, theta)?;
    io::save_state_json(
        &out.join("wavefunction_time.json"),
        &StateBundle::Pure(PureState::from_unnormalized(grid, psi_t.clone())?),
    )?;
    artifacts.push("wavefunction_time.json".into());
    io::save_state_json(
        &out.join("wavefunction_from_freq.json"),
        &StateBundle::Pure(PureState::from_unnormalized(
            grid,
            grid.to_time(psi_w.view())?,
        )?),
    )?;
    artifacts.push("wavefunction_from_freq.json".into());

    let spectrum_in = grid.to_frequency(psi_in.amp().view())?;
    let fidelity_time = linalg::inner(&psi_t, psi_in.amp(), grid.dt()).norm_sqr();
    let fidelity_freq = linalg::inner(&psi_w, &spectrum_in, grid.d_omega()).norm_sqr();
    let got_t_in_freq = tomography::fix_global_phase(&grid.to_frequency(psi_t.view())?);
    let got_w = tomography::fix_global_phase(&psi_w);
    let consistency = got_t_in_freq
        .iter()
        .zip(got_w.iter())
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);

    insert(metrics, "sampled", json!(sampled));
    insert(metrics, "theta", json!(theta));
    insert(metrics, "omega_index", json!(omega_index));
    insert(metrics, "slice_time", json!(slice_time));
    insert(metrics, "fidelity_time", json!(fidelity_time));
    insert(metrics, "fidelity_freq", json!(fidelity_freq));
    insert(metrics, "basis_consistency", json!(consistency));
    Ok(())
}

fn run_two_photon(
    config: &ExperimentConfig,
    out: &Path,
    artifacts: &mut Vec<String>,
    metrics: &mut Map<String, Value>,
) -> Result<(), CliError> {
    let grid_1 = config.grid.build()?;
    let grid_2 = match &config.grid_2 {
        Some(g) => g.build()?,
        None => grid_1,
    };
    let psi2 = build_pair(&grid_1, &grid_2, &config.state)?;
    let thetas = &config.sweep.thetas;
    let (theta_1, theta_2) = (thetas[0], *thetas.get(1).unwrap_or(&thetas[0]));
    let (k_1, k_2) = match &config.sweep.omega_indices {
        None => (grid_1.n_points() / 2, grid_2.n_points() / 2),
        Some(ks) if ks.len() == 1 => (ks[0], ks[0]),
        Some(ks) => (ks[0], ks[1]),
    };
    let phi_count = config.sweep.phi_count;
    let base_1 = MeasurementSettings::new(
        theta_1,
        0.0,
        reference_pulse(&grid_1, &config.sweep.reference),
    )?;
    let base_2 = MeasurementSettings::new(
        theta_2,
        0.0,
        reference_pulse(&grid_2, &config.sweep.reference),
    )?;
    let rates = tomography::two_photon_fringe_records(
        &psi2, &base_1, &base_2, k_1, k_2, phi_count, phi_count,
    )?;
    let (records, sampled) = match &config.noise {
        Some(noise) => {
            let cfg = ShotNoiseConfig {
                total_pairs: noise.total_pairs,
                seed: noise.seed,
            };
            (sample_counts(&grid_1, &rates, &cfg)?, true)
        }
        None => (rates, false),
    };
    write_csv(out, "records.csv", &records, artifacts)?;

    let amp = tomography::two_photon_wavefunction(&grid_1, &grid_2, &records, theta_1, theta_2)?;
    let norm = (amp.iter().map(|z| z.norm_sqr()).sum::<f64>() * grid_1.dt() * grid_2.dt()).sqrt();
    let normalized = amp.mapv(|z| z / norm);
    let psi2_hat = TwoPhotonPureState::new(grid_1, grid_2, normalized)?;
    io::save_state_json(
        &out.join("pair_state.json"),
        &StateBundle::TwoPhoton(psi2_hat.clone()),
    )?;
    artifacts.push("pair_state.json".into());

    let schmidt_in = psi2.schmidt_values()?;
    let schmidt_hat = psi2_hat.schmidt_values()?;
    let rows = schmidt_in.len().max(schmidt_hat.len());
    let mut text = String::from("index,input,reconstructed\n");
    let mut max_err = 0.0f64;
    for i in 0..rows {
        let a = schmidt_in.get(i).copied().unwrap_or(0.0);
        let b = schmidt_hat.get(i).copied().unwrap_or(0.0);
        max_err = max_err.max((a - b).abs());
        text.push_str(&format!("{i},{a:.16e},{b:.16e}\n"));
    }
    let schmidt_path = out.join("schmidt.csv");
    fs::write(&schmidt_path, text).map_err(|e| CliError::fs(&schmidt_path, e))?;
    artifacts.push("schmidt.csv".into());

    let participation = |vals: &[f64]| 1.0 / vals.iter().map(|l| l.powi(4)).sum::<f64>();
    insert(metrics, "sampled", json!(sampled));
    insert(metrics, "record_count", json!(records.len()));
    insert(metrics, "max_schmidt_err", json!(max_err));
    insert(
        metrics,
        "second_singular_reconstructed",
        json!(schmidt_hat.get(1).copied().unwrap_or(0.0)),
    );
    insert(metrics, "schmidt_number_input", json!(participation(&schmidt_in)));
    insert(
        metrics,
        "schmidt_number_reconstructed",
        json!(participation(&schmidt_hat)),
    );
    insert(metrics, "norm_residual", json!((norm - 1.0).abs()));
    Ok(())
}

fn write_manifest(
    path: &Path,
    config: &ExperimentConfig,
    artifacts: &[String],
    metrics: &Map<String, Value>,
) -> Result<(), CliError> {
    let config_value = serde_json::to_value(config)?;
    let config_bytes = serde_json::to_vec(&config_value)?;
    let digest = Sha256::digest(&config_bytes);
    let config_sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = json!({
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "mode": config.mode,
        "config_sha256": config_sha256,
        "versions": {
            "weaktime": weaktime::VERSION,
            "weaktime-cli": env!("CARGO_PKG_VERSION"),
        },
        "artifacts": artifacts,
        "metrics": metrics,
        "config": config_value,
    });
    let bytes = serde_json::to_vec_pretty(&manifest)?;
    fs::write(path, bytes).map_err(|e| CliError::fs(path, e))?;
    Ok(())
}
