//! Versioned JSON experiment configs.
//!
//! A config fully determines a run: grid, input state, measurement
//! sweep, mode, optional shot noise and the output directory. Every
//! struct rejects unknown keys so typos fail loudly instead of silently
//! falling back to defaults, and `validate` runs before any state is
//! built so bad configs never reach the numerics.

use std::f64::consts::FRAC_PI_4;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use weaktime::grid::{GridError, TemporalGrid};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Top-level experiment description, deserialized from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub grid: GridSpec,
    /// Grid of the second photon in `two-photon` mode; `grid` if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_2: Option<GridSpec>,
    pub state: StateSpec,
    pub sweep: SweepSpec,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    pub output_dir: PathBuf,
}

/// What the run computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Closed-form coincidence rates over the sweep.
    Forward,
    /// Poisson counts drawn from the forward rates.
    Sample,
    /// Full fringe sweep, quasiprobability distribution and density matrix.
    ReconstructKirkwood,
    /// Slice scans and wavefunction retrieval (pure states only).
    ReconstructWavefunction,
    /// Joint fringe sweep and Schmidt analysis of a photon pair.
    TwoPhoton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_points: usize,
    pub dt: f64,
    pub t_start: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<TemporalGrid, GridError> {
        TemporalGrid::new(self.n_points, self.dt, self.t_start)
    }
}

/// Input state, one family per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum StateSpec {
    /// Single chirped Gaussian pulse.
    Gaussian(PulseSpec),
    /// Coherent superposition of Gaussian pulses with complex weights.
    Superposition(SuperpositionSpec),
    /// Statistical mixture of Gaussian pulses; weights are renormalized.
    Mixture(MixtureSpec),
    /// State loaded from a JSON file written by this tool.
    File(FileSpec),
    /// Two-photon Gaussian pair (difference / sum arrival-time widths).
    EntangledPair(PairSpec),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSpec {
    pub peak_time: f64,
    pub width: f64,
    #[serde(default)]
    pub chirp: f64,
    #[serde(default)]
    pub carrier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperpositionSpec {
    pub components: Vec<WeightedPulse>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedPulse {
    pub weight_re: f64,
    #[serde(default)]
    pub weight_im: f64,
    pub peak_time: f64,
    pub width: f64,
    #[serde(default)]
    pub chirp: f64,
    #[serde(default)]
    pub carrier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub components: Vec<MixedPulse>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixedPulse {
    pub weight: f64,
    pub peak_time: f64,
    pub width: f64,
    #[serde(default)]
    pub chirp: f64,
    #[serde(default)]
    pub carrier: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    pub path: PathBuf,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub sigma_minus: f64,
    pub sigma_plus: f64,
}

/// Measurement settings swept by the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Interaction strengths, radians in [0, pi/4].
    pub thetas: Vec<f64>,
    /// Number of evenly spaced fringe phases `2 pi m / phi_count`
    /// starting at 0; the harmonic extraction accepts no other pattern.
    pub phi_count: usize,
    /// Reference peak times (must lie on the grid); every grid point if
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_times: Option<Vec<f64>>,
    /// Detection frequency bins; every bin if absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_indices: Option<Vec<usize>>,
    /// Reference pulse shape; ideal (delta-like) if absent.
    #[serde(default)]
    pub reference: ReferenceSpec,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ReferenceSpec {
    #[default]
    Ideal,
    Gaussian(ReferenceWidth),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceWidth {
    pub width: f64,
}

/// Poisson shot noise applied to the forward rates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Photon pairs produced per fringe scan.
    pub total_pairs: u64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Structural validation, run before anything is computed. Error
    /// messages name the offending key.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(format!(
                "schema_version: expected {CONFIG_SCHEMA_VERSION}, found {}",
                self.schema_version
            ));
        }
        let grid = self.grid.build().map_err(|e| format!("grid: {e}"))?;
        if let Some(g) = &self.grid_2 {
            g.build().map_err(|e| format!("grid_2: {e}"))?;
            if self.mode != Mode::TwoPhoton {
                return Err("grid_2: only meaningful in two-photon mode".into());
            }
        }
        self.validate_state()?;
        self.validate_sweep(&grid)?;
        self.validate_mode()?;
        if let Some(noise) = &self.noise {
            if noise.total_pairs == 0 {
                return Err("noise.total_pairs: must be positive".into());
            }
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err("output_dir: must not be empty".into());
        }
        Ok(())
    }

    fn validate_state(&self) -> Result<(), String> {
        let pair_mode = self.mode == Mode::TwoPhoton;
        match &self.state {
            StateSpec::Gaussian(p) => check_pulse("state", p.peak_time, p.width)?,
            StateSpec::Superposition(s) => {
                if s.components.is_empty() {
                    return Err("state.components: must not be empty".into());
                }
                for (i, c) in s.components.iter().enumerate() {
                    check_pulse(&format!("state.components[{i}]"), c.peak_time, c.width)?;
                    if !(c.weight_re.is_finite() && c.weight_im.is_finite()) {
                        return Err(format!("state.components[{i}].weight_re: must be finite"));
                    }
                }
            }
            StateSpec::Mixture(m) => {
                if self.mode == Mode::ReconstructWavefunction {
                    return Err(
                        "state.family: wavefunction retrieval needs a pure state, not a mixture"
                            .into(),
                    );
                }
                if m.components.is_empty() {
                    return Err("state.components: must not be empty".into());
                }
                for (i, c) in m.components.iter().enumerate() {
                    check_pulse(&format!("state.components[{i}]"), c.peak_time, c.width)?;
                    if !(c.weight.is_finite() && c.weight > 0.0) {
                        return Err(format!("state.components[{i}].weight: must be positive"));
                    }
                }
            }
            StateSpec::File(f) => {
                if f.path.as_os_str().is_empty() {
                    return Err("state.path: must not be empty".into());
                }
            }
            StateSpec::EntangledPair(p) => {
                if !pair_mode {
                    return Err("state.family: entangled_pair needs two-photon mode".into());
                }
                for (key, sigma) in [("sigma_minus", p.sigma_minus), ("sigma_plus", p.sigma_plus)] {
                    if !(sigma.is_finite() && sigma > 0.0) {
                        return Err(format!("state.{key}: must be positive"));
                    }
                }
            }
        }
        if pair_mode && !matches!(self.state, StateSpec::EntangledPair(_) | StateSpec::File(_)) {
            return Err("state.family: two-photon mode needs entangled_pair or a pair file".into());
        }
        Ok(())
    }

    fn validate_sweep(&self, grid: &TemporalGrid) -> Result<(), String> {
        let sweep = &self.sweep;
        if sweep.thetas.is_empty() {
            return Err("sweep.thetas: must not be empty".into());
        }
        let reconstruction = !matches!(self.mode, Mode::Forward | Mode::Sample);
        for (i, &theta) in sweep.thetas.iter().enumerate() {
            if !(theta.is_finite() && (0.0..=FRAC_PI_4).contains(&theta)) {
                return Err(format!("sweep.thetas[{i}]: must lie in [0, pi/4]"));
            }
            if reconstruction && theta == 0.0 {
                return Err(format!(
                    "sweep.thetas[{i}]: reconstructions divide by tan(theta), needs theta > 0"
                ));
            }
        }
        let min_phases = if reconstruction { 3 } else { 1 };
        if sweep.phi_count < min_phases {
            return Err(format!("sweep.phi_count: needs at least {min_phases} for this mode"));
        }
        if let Some(times) = &sweep.reference_times {
            if times.is_empty() {
                return Err("sweep.reference_times: must not be empty when present".into());
            }
            for (i, &t) in times.iter().enumerate() {
                grid.time_index_of(t)
                    .map_err(|e| format!("sweep.reference_times[{i}]: {e}"))?;
            }
        }
        if let Some(indices) = &sweep.omega_indices {
            if indices.is_empty() {
                return Err("sweep.omega_indices: must not be empty when present".into());
            }
            for (i, &k) in indices.iter().enumerate() {
                if k >= grid.n_points() {
                    return Err(format!(
                        "sweep.omega_indices[{i}]: {k} out of range for {} bins",
                        grid.n_points()
                    ));
                }
            }
        }
        if let ReferenceSpec::Gaussian(w) = &sweep.reference {
            if !(w.width.is_finite() && w.width >= 2.0 * grid.dt()) {
                return Err(format!(
                    "sweep.reference.width: must be at least 2 dt = {}",
                    2.0 * grid.dt()
                ));
            }
        }
        Ok(())
    }

    fn validate_mode(&self) -> Result<(), String> {
        let sweep = &self.sweep;
        match self.mode {
            Mode::Forward => {}
            Mode::Sample => {
                if self.noise.is_none() {
                    return Err("noise: required in sample mode".into());
                }
            }
            Mode::ReconstructKirkwood => {
                if sweep.reference_times.is_some() || sweep.omega_indices.is_some() {
                    return Err(
                        "sweep.reference_times / sweep.omega_indices: \
                         reconstruct-kirkwood scans the full grid, drop these keys"
                            .into(),
                    );
                }
            }
            Mode::ReconstructWavefunction => {
                if sweep.omega_indices.as_ref().map(Vec::len) != Some(1) {
                    return Err("sweep.omega_indices: exactly one bin picks the \
                                time-domain retrieval slice"
                        .into());
                }
                if sweep.reference_times.as_ref().map(Vec::len) != Some(1) {
                    return Err("sweep.reference_times: exactly one time picks the \
                                frequency-domain retrieval slice"
                        .into());
                }
            }
            Mode::TwoPhoton => {
                if sweep.thetas.len() > 2 {
                    return Err("sweep.thetas: two-photon mode uses one strength per \
                                photon, give one or two"
                        .into());
                }
                if let Some(indices) = &sweep.omega_indices {
                    if indices.len() > 2 {
                        return Err("sweep.omega_indices: two-photon mode fixes one \
                                    bin per photon, give one or two"
                            .into());
                    }
                }
                if sweep.reference_times.is_some() {
                    return Err("sweep.reference_times: two-photon mode scans both \
                                reference times over the full grids, drop this key"
                        .into());
                }
                if self.noise.is_some() && self.grid_2.map_or(false, |g| g != self.grid) {
                    return Err("noise: sampling assumes both photons share one grid, \
                                drop grid_2 or the noise section"
                        .into());
                }
            }
        }
        Ok(())
    }
}

fn check_pulse(key: &str, peak_time: f64, width: f64) -> Result<(), String> {
    if !peak_time.is_finite() {
        return Err(format!("{key}.peak_time: must be finite"));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(format!("{key}.width: must be positive"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn base() -> String {
        r#"{
            "schema_version": 1,
            "grid": {"n_points": 64, "dt": 0.25, "t_start": -8.0},
            "state": {"family": "gaussian", "peak_time": 0.0, "width": 0.8},
            "sweep": {"thetas": [0.3], "phi_count": 4},
            "mode": "forward",
            "output_dir": "out"
        }"#
        .to_string()
    }

    #[test]
    fn base_config_parses_and_validates() {
        let config = parse(&base()).unwrap();
        config.validate().unwrap();
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for (needle, text) in [
            ("frobnicate", base().replace("\"mode\"", "\"frobnicate\": 1, \"mode\"")),
            (
                "unknown field",
                base().replace("\"phi_count\": 4", "\"phi_count\": 4, \"bogus\": 1"),
            ),
            (
                "unknown field",
                base().replace("\"width\": 0.8", "\"width\": 0.8, \"colour\": 2"),
            ),
        ] {
            let err = parse(&text).unwrap_err().to_string();
            assert!(err.contains(needle) || err.contains("unknown field"), "{err}");
            assert!(err.contains("line"), "location missing: {err}");
        }
    }

    #[test]
    fn wrong_schema_version_rejected() {
        let config = parse(&base().replace("\"schema_version\": 1", "\"schema_version\": 9")).unwrap();
        let err = config.validate().unwrap_err();
        assert!(err.contains("schema_version"), "{err}");
    }

    #[test]
    fn mode_specific_requirements_enforced() {
        let sample = parse(&base().replace("\"forward\"", "\"sample\"")).unwrap();
        assert!(sample.validate().unwrap_err().contains("noise"));

        let strong = parse(&base().replace("[0.3]", "[0.9]")).unwrap();
        assert!(strong.validate().unwrap_err().contains("thetas"));

        let slice = parse(&base().replace("\"forward\"", "\"reconstruct-wavefunction\"")).unwrap();
        assert!(slice.validate().unwrap_err().contains("omega_indices"));

        let pair = parse(&base().replace("\"forward\"", "\"two-photon\"")).unwrap();
        assert!(pair.validate().unwrap_err().contains("entangled_pair"));
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = parse(&base()).unwrap();
        let echoed: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&config).unwrap()).unwrap();
        echoed.validate().unwrap();
        assert_eq!(serde_json::to_string(&config).unwrap(), serde_json::to_string(&echoed).unwrap());
    }
}
