//! End-to-end acceptance checks for the measurement model and the
//! inverse pipeline. Each test prints one PASS/FAIL line with its
//! measured figures; run with `--nocapture` to see them all.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::time::Instant;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use weaktime::grid::TemporalGrid;
use weaktime::interferometer::{
    channel_apply, coincidence_rate, oracle_two_photon, probe_detection_probability,
    MeasurementSettings, RateTable, SignalInput,
};
use weaktime::linalg::{fidelity_pure, schmidt_values, trace_distance};
use weaktime::noise::{estimator_variance_sweep, ShotNoiseConfig, VarianceRow};
use weaktime::states::{
    gaussian_entangled_pair, gaussian_pulse, mix, pure_to_density, reference_as_state, superpose,
    DensityMatrix, PureState, ReferencePulse,
};
use weaktime::tomography::{
    estimate_background, estimate_weak_value_subtracted, fix_global_phase, kirkwood_from_fringes,
    omega_slice_records, reconstruct_density, sweep_fringe_records, time_slice_records,
    two_photon_fringe_records, two_photon_wavefunction, wavefunction_freq, wavefunction_time,
    weak_value_time_projector, CountRecord, KirkwoodDistribution,
};
use weaktime::C64;

fn report(label: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance: {label}: {verdict} ({detail})");
    assert!(pass, "{label}: {detail}");
}

fn wide_grid() -> TemporalGrid {
    TemporalGrid::new(64, 0.25, -8.0).unwrap()
}

fn random_pure(grid: &TemporalGrid, rng: &mut ChaCha8Rng) -> PureState {
    let amp = Array1::from_shape_fn(grid.n_points(), |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    PureState::from_unnormalized(*grid, amp).unwrap()
}

fn random_mixed(grid: &TemporalGrid, rng: &mut ChaCha8Rng) -> DensityMatrix {
    let w = rng.random_range(0.2..0.8);
    mix(&[
        (pure_to_density(&random_pure(grid, rng)), w),
        (pure_to_density(&random_pure(grid, rng)), 1.0 - w),
    ])
    .unwrap()
}

/// Two Gaussians at +-1.75 on the 64-point grid; its spectrum crosses
/// zero at pi/3.5, so nearby frequency bins post-select a sign-flipped
/// fringe.
fn two_pulse(grid: &TemporalGrid) -> PureState {
    let one = C64::new(1.0, 0.0);
    superpose(&[
        (gaussian_pulse(grid, -1.75, 0.65, 0.0, 0.0).unwrap(), one),
        (gaussian_pulse(grid, 1.75, 0.65, 0.0, 0.0).unwrap(), one),
    ])
    .unwrap()
}

fn max_abs_diff(a: &Array1<C64>, b: &Array1<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0f64, f64::max)
}

#[test]
fn a01_closed_form_channel_matches_two_photon_oracle() {
    let start = Instant::now();
    let grid = wide_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_prob_err = 0.0f64;
    let mut max_rate_err = 0.0f64;
    let mut max_dist = 0.0f64;
    for case in 0..50 {
        let theta = rng.random_range(0.01..FRAC_PI_4);
        let phi = rng.random_range(0.0..TAU);
        let ideal = case % 2 == 0;
        let reference = if ideal {
            ReferencePulse::ideal(grid.time_at(rng.random_range(0..grid.n_points())))
        } else {
            ReferencePulse::gaussian(rng.random_range(-6.0..6.0), rng.random_range(0.6..1.5))
        };
        let settings = MeasurementSettings::new(theta, phi, reference).unwrap();
        let (rho, outcome) = if case % 3 == 0 {
            let rho = random_mixed(&grid, &mut rng);
            let outcome = oracle_two_photon(SignalInput::Mixed(&rho), &settings).unwrap();
            (rho, outcome)
        } else {
            let psi = random_pure(&grid, &mut rng);
            let outcome = oracle_two_photon(SignalInput::Pure(&psi), &settings).unwrap();
            (pure_to_density(&psi), outcome)
        };
        let prob = probe_detection_probability(&rho, &settings).unwrap();
        max_prob_err = max_prob_err.max((prob - outcome.probability).abs());
        let channel = channel_apply(&rho, &settings).unwrap();
        let dist =
            trace_distance(channel.matrix(), outcome.conditional.matrix(), grid.dt()).unwrap();
        max_dist = max_dist.max(dist);
        // Every spectral rate, against the frequency density of the
        // oracle's conditional state. Ideal-mode rates use the
        // delta-normalized kernels, tied to the normalized-spike oracle
        // by the exact per-bin identity from the rate module docs.
        let oracle_marginal = outcome.conditional.frequency_marginal();
        let signal_spectrum = rho.frequency_marginal();
        let cos_sq = theta.cos().powi(2);
        for k in 0..grid.n_points() {
            let rate = coincidence_rate(&rho, &settings, k).unwrap();
            let in_oracle_units = if ideal {
                grid.dt() * rate + (1.0 - grid.dt()) * 0.125 * cos_sq * signal_spectrum[k]
            } else {
                rate
            };
            max_rate_err = max_rate_err.max((in_oracle_units - oracle_marginal[k]).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = max_prob_err < 1e-12 && max_rate_err < 1e-12 && max_dist < 1e-10 && elapsed < 10.0;
    report(
        "closed-form rates and channel match the brute-force two-photon oracle",
        pass,
        &format!(
            "50 random cases on n = 64: max probability err {max_prob_err:.2e}, \
             max rate err {max_rate_err:.2e}, max trace distance {max_dist:.2e}, {elapsed:.2} s"
        ),
    );
}

#[test]
fn a02_bunching_endpoint_and_strength_zero_anchor() {
    let grid = wide_grid();
    let mut worst_bunch = 0.0f64;
    let mut flat_exact = true;
    for reference in [
        ReferencePulse::ideal(grid.time_at(20)),
        ReferencePulse::gaussian(1.0, 0.9),
    ] {
        // Signal prepared in the reference state itself: full bunching.
        let rho = pure_to_density(&reference_as_state(&grid, &reference).unwrap());
        let bunch = MeasurementSettings::new(FRAC_PI_4, 0.0, reference).unwrap();
        let p = probe_detection_probability(&rho, &bunch).unwrap();
        worst_bunch = worst_bunch.max(p.abs());
        let off = MeasurementSettings::new(0.0, 0.0, reference).unwrap();
        let p0 = probe_detection_probability(&rho, &off).unwrap();
        flat_exact &= p0 == 0.125;
    }
    let pass = worst_bunch < 1e-12 && flat_exact;
    report(
        "probe detection vanishes at full strength on the reference state and is exactly 1/8 at zero strength",
        pass,
        &format!("worst |p| at theta = pi/4: {worst_bunch:.2e}; p(theta = 0) == 1/8 exactly: {flat_exact}"),
    );
}

#[test]
fn a03_fringe_contains_only_zeroth_and_first_harmonics() {
    let grid = wide_grid();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let m_phases = 16;
    let mut max_high = 0.0f64;
    for _ in 0..3 {
        let rho = random_mixed(&grid, &mut rng);
        for _ in 0..4 {
            let j = rng.random_range(0..grid.n_points());
            let k = rng.random_range(0..grid.n_points());
            let theta = rng.random_range(0.05..FRAC_PI_4);
            let reference = ReferencePulse::ideal(grid.time_at(j));
            let values: Vec<f64> = (0..m_phases)
                .map(|m| {
                    let phi = TAU * m as f64 / m_phases as f64;
                    let settings = MeasurementSettings::new(theta, phi, reference).unwrap();
                    coincidence_rate(&rho, &settings, k).unwrap()
                })
                .collect();
            // 16-point DFT; indices 0, 1 and 15 hold the only physical
            // harmonics, everything else must be numerically zero.
            for q in 2..=(m_phases - 2) {
                let coef = values
                    .iter()
                    .enumerate()
                    .map(|(m, &v)| {
                        C64::from_polar(v, -TAU * (q * m) as f64 / m_phases as f64)
                    })
                    .sum::<C64>()
                    / m_phases as f64;
                max_high = max_high.max(coef.norm());
            }
        }
    }
    let pass = max_high < 1e-12;
    report(
        "coincidence fringes carry no harmonics beyond |k| = 1 over a 16-phase scan",
        pass,
        &format!("max |DFT coefficient| for 2 <= k <= 14: {max_high:.2e}"),
    );
}

#[test]
fn a04_subtracted_estimator_is_strength_independent() {
    let grid = wide_grid();
    let psi = gaussian_pulse(&grid, 0.0, 0.85, 0.12, 2.0 * grid.d_omega()).unwrap();
    let rho = pure_to_density(&psi);
    let j = grid.time_index_of(0.5).unwrap();
    let k = grid.omega_index_of(2.0 * grid.d_omega()).unwrap();
    let truth = weak_value_time_projector(&rho, j, k).unwrap().re;
    let table = RateTable::ideal(&rho);
    let mut max_err = 0.0f64;
    let mut literal_factor = 0.0f64;
    for theta in [0.05, 0.2, FRAC_PI_4] {
        let records = time_slice_records(&table, theta, 2, j);
        let background = estimate_background(&records).unwrap();
        let cell: Vec<CountRecord> = records
            .iter()
            .filter(|r| r.omega_index == Some(k))
            .copied()
            .collect();
        let est = estimate_weak_value_subtracted(&cell, theta, background).unwrap();
        max_err = max_err.max((est - truth).abs());
        if theta == FRAC_PI_4 {
            // What a literal 2 sin(theta) cos(theta) prefactor would
            // have produced from the same fringe data.
            let literal = est * (2.0 * theta.tan()) / (2.0 * theta.sin() * theta.cos());
            literal_factor = literal / truth;
        }
    }
    let pass = max_err < 1e-8 && (literal_factor - 2.0).abs() < 1e-6;
    report(
        "background-subtracted estimates match the direct weak value at theta in {0.05, 0.2, pi/4}",
        pass,
        &format!(
            "max |est - direct| = {max_err:.2e}; a literal 2 sin(theta) cos(theta) prefactor \
             (instead of the derived 2 tan(theta)) would overshoot by x{literal_factor:.9} at theta = pi/4"
        ),
    );
}

/// Forward rates -> fringe extraction -> distribution -> density matrix.
fn round_trip(
    rho: &DensityMatrix,
    theta: f64,
    phases: usize,
) -> (KirkwoodDistribution, DensityMatrix) {
    let table = RateTable::ideal(rho);
    let records = sweep_fringe_records(&table, theta, phases);
    let k = kirkwood_from_fringes(rho.grid(), &records, theta).unwrap();
    let rebuilt = reconstruct_density(&k).unwrap();
    (k, rebuilt)
}

/// Max deviation of a complex marginal from a real target, counting the
/// imaginary residual.
fn marginal_err(marginal: &Array1<C64>, target: &Array1<f64>) -> f64 {
    marginal
        .iter()
        .zip(target.iter())
        .map(|(m, t)| (m.re - t).abs().max(m.im.abs()))
        .fold(0.0f64, f64::max)
}

#[test]
fn a05_distribution_round_trip_preserves_states_and_marginals() {
    let start = Instant::now();
    let grid = TemporalGrid::new(128, 0.25, -16.0).unwrap();

    let psi = gaussian_pulse(&grid, 0.5, 1.2, 0.3, 0.8).unwrap();
    let pure = pure_to_density(&psi);
    let (k_pure, rebuilt_pure) = round_trip(&pure, 0.4, 4);
    let fid = fidelity_pure(psi.amp(), rebuilt_pure.matrix(), grid.dt());

    let mixed = mix(&[
        (
            pure_to_density(&gaussian_pulse(&grid, -2.0, 1.0, 0.0, -1.0).unwrap()),
            0.6,
        ),
        (
            pure_to_density(&gaussian_pulse(&grid, 2.0, 1.3, 0.2, 1.2).unwrap()),
            0.4,
        ),
    ])
    .unwrap();
    let (k_mixed, rebuilt_mixed) = round_trip(&mixed, 0.4, 4);
    let purity_err = (rebuilt_mixed.purity() - mixed.purity()).abs();

    let mut norm_err = 0.0f64;
    let mut marg_err = 0.0f64;
    for (k, rho) in [(&k_pure, &pure), (&k_mixed, &mixed)] {
        norm_err = norm_err.max((k.integral() - C64::new(1.0, 0.0)).norm());
        marg_err = marg_err.max(marginal_err(&k.time_marginal(), &rho.time_marginal()));
        marg_err = marg_err.max(marginal_err(
            &k.frequency_marginal(),
            &rho.frequency_marginal(),
        ));
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = fid > 1.0 - 1e-8
        && purity_err < 1e-6
        && norm_err < 1e-8
        && marg_err < 1e-8
        && elapsed < 60.0;
    report(
        "full fringe scan round trip recovers pure and mixed states on n = 128",
        pass,
        &format!(
            "pure fidelity 1 - {:.2e}, mixed purity err {purity_err:.2e}, \
             normalization err {norm_err:.2e}, worst marginal err {marg_err:.2e}, {elapsed:.2} s",
            1.0 - fid
        ),
    );
}

#[test]
fn a06_wavefunction_retrieval_in_both_bases() {
    let grid = wide_grid();
    let theta = 0.35;
    let chirped = gaussian_pulse(&grid, 0.0, 0.85, 0.12, 2.0 * grid.d_omega()).unwrap();
    let pulses = two_pulse(&grid);
    let center_t = grid.time_index_of(0.0).unwrap();
    let cases = [
        // Chirped Gaussian read out at its carrier; two-pulse state at
        // the constructive center of its spectral fringe.
        (&chirped, grid.omega_index_of(2.0 * grid.d_omega()).unwrap()),
        (&pulses, grid.omega_index_of(0.0).unwrap()),
    ];
    let mut max_time_err = 0.0f64;
    let mut max_freq_err = 0.0f64;
    let mut max_cross_err = 0.0f64;
    for (psi, k_sel) in cases {
        let table = RateTable::ideal(&pure_to_density(psi));
        let got_t =
            wavefunction_time(&grid, &omega_slice_records(&table, theta, 4, k_sel), theta)
                .unwrap();
        max_time_err =
            max_time_err.max(max_abs_diff(&fix_global_phase(&got_t), &fix_global_phase(psi.amp())));
        let got_w =
            wavefunction_freq(&grid, &time_slice_records(&table, theta, 4, center_t), theta)
                .unwrap();
        let want_w = grid.to_frequency(psi.amp().view()).unwrap();
        max_freq_err =
            max_freq_err.max(max_abs_diff(&fix_global_phase(&got_w), &fix_global_phase(&want_w)));
        // The two retrievals must agree with each other under the basis
        // change, independently of the input state.
        let cross = grid.to_frequency(got_t.view()).unwrap();
        max_cross_err =
            max_cross_err.max(max_abs_diff(&fix_global_phase(&cross), &fix_global_phase(&got_w)));
    }
    let pass = max_time_err < 1e-6 && max_freq_err < 1e-6 && max_cross_err < 1e-6;
    println!(
        "note: retrieval formulas assume the fringe phase enters the probe filter as \
         (|H> + e^{{-i phi}}|V>)/sqrt(2); flipping that sign convention conjugates them"
    );
    report(
        "chirped and two-pulse wavefunctions are recovered in both bases up to a global phase",
        pass,
        &format!(
            "max |err| time {max_time_err:.2e}, frequency {max_freq_err:.2e}, \
             basis-change consistency {max_cross_err:.2e}"
        ),
    );
}

#[test]
fn a07_destructive_post_selection_yields_negative_weak_value() {
    let grid = wide_grid();
    let rho = pure_to_density(&two_pulse(&grid));
    let j = grid.time_index_of(0.0).unwrap();
    // First bin past the spectral zero at pi/3.5: the fringe has
    // flipped sign there.
    let k = grid.omega_index_of(3.0 * grid.d_omega()).unwrap();
    let truth = weak_value_time_projector(&rho, j, k).unwrap().re;
    let theta = 0.3;
    let table = RateTable::ideal(&rho);
    let records = time_slice_records(&table, theta, 2, j);
    let background = estimate_background(&records).unwrap();
    let cell: Vec<CountRecord> = records
        .iter()
        .filter(|r| r.omega_index == Some(k))
        .copied()
        .collect();
    let est = estimate_weak_value_subtracted(&cell, theta, background).unwrap();
    let pass = truth < 0.0 && est < 0.0 && (est - truth).abs() < 1e-8;
    report(
        "post-selecting past the spectral zero drives the estimated weak value negative",
        pass,
        &format!("pipeline estimate {est:.6}, direct value {truth:.6}, |diff| {:.2e}", (est - truth).abs()),
    );
}

#[test]
fn a08_two_photon_reconstruction_recovers_schmidt_spectrum() {
    let start = Instant::now();
    let grid = TemporalGrid::new(32, 0.5, -8.0).unwrap();
    let theta = 0.4;
    let base =
        MeasurementSettings::new(theta, 0.0, ReferencePulse::ideal(grid.time_at(0))).unwrap();
    let k0 = grid.omega_index_of(0.0).unwrap();

    let reconstruct = |state: &weaktime::TwoPhotonPureState| -> Vec<f64> {
        let records = two_photon_fringe_records(state, &base, &base, k0, k0, 3, 3).unwrap();
        let amp = two_photon_wavefunction(&grid, &grid, &records, theta, theta).unwrap();
        schmidt_values(&amp, grid.dt(), grid.dt()).unwrap()
    };
    let schmidt_gap = |got: &[f64], want: &[f64]| -> f64 {
        (0..got.len().max(want.len()))
            .map(|i| {
                (got.get(i).copied().unwrap_or(0.0) - want.get(i).copied().unwrap_or(0.0)).abs()
            })
            .fold(0.0f64, f64::max)
    };

    let entangled = gaussian_entangled_pair(&grid, &grid, 1.0, 1.4).unwrap();
    let err_entangled = schmidt_gap(&reconstruct(&entangled), &entangled.schmidt_values().unwrap());

    // Equal correlation widths factorize: the control must come back
    // rank 1.
    let product = gaussian_entangled_pair(&grid, &grid, 1.2, 1.2).unwrap();
    let got_product = reconstruct(&product);
    let second_singular = got_product.get(1).copied().unwrap_or(0.0);

    let elapsed = start.elapsed().as_secs_f64();
    let pass = err_entangled < 1e-4 && second_singular < 1e-6 && elapsed < 300.0;
    report(
        "double fringe scan recovers the two-photon Schmidt spectrum at n = 32 per photon",
        pass,
        &format!(
            "entangled pair: max Schmidt err {err_entangled:.2e}; separable control: \
             second singular value {second_singular:.2e}; {elapsed:.2} s"
        ),
    );
}

#[test]
fn a09_estimator_noise_scales_with_strength_and_budget() {
    let grid = wide_grid();
    let rho = pure_to_density(&gaussian_pulse(&grid, 0.0, 0.8, 0.0, 0.0).unwrap());
    let j = grid.time_index_of(0.0).unwrap();
    let k = grid.omega_index_of(0.0).unwrap();
    let n_trials = 200;

    let cfg = ShotNoiseConfig {
        total_pairs: 1_000_000,
        seed: 90_210,
    };
    let rows = estimator_variance_sweep(&rho, j, k, &[0.05, FRAC_PI_4], &cfg, n_trials).unwrap();
    let (weak, strong) = (&rows[0], &rows[1]);
    let succ = |r: &VarianceRow| (r.n_trials - r.failed_trials) as f64;
    // Standard error of a sample std is about std / sqrt(2 (n - 1)).
    let se_std = |r: &VarianceRow| r.std / (2.0 * (succ(r) - 1.0)).sqrt();
    let separation = (weak.std - strong.std)
        / (se_std(weak).powi(2) + se_std(strong).powi(2)).sqrt();
    let mean_gap = (weak.mean - strong.mean).abs()
        / (weak.std.powi(2) / succ(weak) + strong.std.powi(2) / succ(strong)).sqrt();

    // Two decades of budget at fixed strength: std should shrink by 10.
    let low = ShotNoiseConfig {
        total_pairs: 100_000,
        seed: 90_210,
    };
    let high = ShotNoiseConfig {
        total_pairs: 10_000_000,
        seed: 90_210,
    };
    let row_low =
        estimator_variance_sweep(&rho, j, k, &[FRAC_PI_4], &low, n_trials).unwrap()[0];
    let row_high =
        estimator_variance_sweep(&rho, j, k, &[FRAC_PI_4], &high, n_trials).unwrap()[0];
    let ratio = row_low.std / row_high.std;

    let pass = separation > 3.0 && mean_gap < 3.0 && (ratio / 10.0 - 1.0).abs() < 0.2;
    report(
        "shot-noise precision improves with strength and follows the square-root budget law",
        pass,
        &format!(
            "std {:.3e} (theta = 0.05) vs {:.3e} (pi/4), separation {separation:.1} sigma, \
             means within {mean_gap:.2} SE; std ratio over two budget decades {ratio:.2} (want 10 +- 20%)",
            weak.std, strong.std
        ),
    );
}

#[test]
fn a10_reference_width_systematics_degrade_monotonically() {
    let grid = TemporalGrid::new(512, 0.125, -32.0).unwrap();
    // A plain Gaussian's shortest feature is its own rms width.
    let feature = 2.5;
    let psi = gaussian_pulse(&grid, 0.0, feature, 0.0, 0.0).unwrap();
    let rho = pure_to_density(&psi);
    let theta = 0.35;
    let fidelity_at = |width: f64| -> f64 {
        let table = RateTable::gaussian(&rho, width).unwrap();
        let records = sweep_fringe_records(&table, theta, 4);
        let k = kirkwood_from_fringes(&grid, &records, theta).unwrap();
        // Re<psi|rho_hat|psi>: stays defined even where the smeared
        // reconstruction is no longer a valid density matrix.
        k.pure_overlap(&psi).unwrap().re
    };
    let fids: Vec<f64> = [feature / 10.0, feature / 2.0, feature]
        .iter()
        .map(|&w| fidelity_at(w))
        .collect();
    let pass = fids[0] > 0.99 && fids[0] > fids[1] && fids[1] > fids[2];
    report(
        "finite reference pulses degrade reconstruction fidelity monotonically with width",
        pass,
        &format!(
            "fidelity {:.6} at width = feature/10, {:.6} at feature/2, {:.6} at feature",
            fids[0], fids[1], fids[2]
        ),
    );
}
