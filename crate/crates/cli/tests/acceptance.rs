//! Acceptance run: one PASS/FAIL line per criterion.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shuttlesim_cli::table::{Layout, SpinTable};
use shuttlesim_cli::{main_with_args, run_experiment, ExperimentConfig, ExperimentKind};
use shuttlesim_core::readout::simulate_charge_cycles;
use shuttlesim_core::spinsim::{dg_for_frequency, sigma_energy_for_t2_nev, Propagator};
use shuttlesim_core::{
    build_schedule, charge_fidelity, DisorderSpec, Kernel, ZeemanLandscape, evolve, fit_gaussian_decay, fit_narrowing, fit_single_tone, fit_threshold,
    monte_carlo_sweep, shuttle_infidelity, singlet_probability, t2_epr_model, trajectory_of, Classifier,
    CurrentModel, DephasingModelParams, Direction, EnsembleConfig, ExchangeModel, Motion, NarrowingPoint,
    OscillationData, PulseSchedule, ScheduleRequest, ShuttleSegment, TwoLevelState,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(limit: Duration, elapsed: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("runtime {elapsed:?} exceeds {limit:?}"))
    }
}

/// Pair dephasing model at the quoted parameters.
fn dephasing_model() -> Outcome {
    let start = Instant::now();
    let p = DephasingModelParams::new(1110.0, 520.0, 13.0).map_err(|e| e.to_string())?;
    let t2s = p.t2_shuttled(280.0);
    let t2_0 = t2_epr_model(&p, 0.0);
    let elapsed = start.elapsed();
    within_time(Duration::from_millis(1), elapsed)?;
    // direct evaluation of the closed forms
    let want_s = 520.0 * ((280.0f64 + 13.0) / 13.0).sqrt();
    let want_0 = 1.0 / (1.0 / 1110.0f64.powi(2) + 1.0 / 520.0f64.powi(2)).sqrt();
    let ok = (t2s / want_s - 1.0).abs() < 0.01
        && (t2s / 2469.0 - 1.0).abs() < 0.01
        && (t2_0 / want_0 - 1.0).abs() < 0.01
        && (t2_0 / 471.0 - 1.0).abs() < 0.01;
    ensure(
        ok,
        format!("T2,S(280 nm) = {t2s:.1} ns, T2(0) = {t2_0:.1} ns in {elapsed:?}"),
    )
}

/// Phase infidelity of the 560 nm loop.
fn infidelity() -> Outcome {
    let start = Instant::now();
    let f = shuttle_infidelity(2460.0, 280.0, 2.8).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within_time(Duration::from_millis(1), elapsed)?;
    let ok = (f.shuttle_time_ns - 200.0).abs() < 1e-9 && (f.exact - 0.0066).abs() < 0.0002;
    ensure(
        ok,
        format!(
            "tau_S = {:.1} ns, 1-F = {:.4} % in {elapsed:?}",
            f.shuttle_time_ns,
            100.0 * f.exact
        ),
    )
}

/// Config of the double-dot oscillation at 7.29 MHz and T2* = 565 ns.
fn st0_config(dir: &std::path::Path) -> ExperimentConfig {
    let text = format!(
        r#"
experiment = "st0_dqd"
label = "acceptance"
magnetic_field_t = 0.8
master_seed = 2024
shots_per_point = 50000
realizations = 10000
output_dir = "{}"

[disorder]
channel_length_nm = 10.0
mean_dg = {}
sigma_hf_nev = {}

[scan]
tau_ns = {{ start = 0.0, stop = 1500.0, step = 10.0 }}
"#,
        dir.display(),
        dg_for_frequency(7.29, 0.8),
        sigma_energy_for_t2_nev(565.0)
    );
    ExperimentConfig::parse(&text).unwrap()
}

fn read_table(dir: &std::path::Path, kind: ExperimentKind) -> SpinTable {
    let file = fs::File::open(dir.join("data.csv")).unwrap();
    SpinTable::read_csv(Layout::of(kind).unwrap(), file).unwrap()
}

/// Shots synthesised from the ensemble, fitted with one tone.
fn forward_then_fit() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = run_experiment(&st0_config(tmp.path())).map_err(|e| e.to_string())?;
    let table = read_table(&run.dir, ExperimentKind::St0Dqd);
    let data = OscillationData::new(
        table.rows.iter().map(|r| r.x).collect(),
        table.rows.iter().map(|r| r.p_s).collect(),
        Some(table.rows.iter().map(|r| r.stderr.max(1e-3)).collect()),
    )
    .map_err(|e| e.to_string())?;
    let fit = fit_single_tone(&data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within_time(Duration::from_secs(60), elapsed)?;
    let ok = (fit.nu_mhz / 7.29 - 1.0).abs() < 0.005 && (fit.t2_star_ns / 565.0 - 1.0).abs() < 0.05;
    ensure(
        ok,
        format!(
            "nu = {:.4} MHz, T2* = {:.1} ns from {} points x 50000 shots in {:.1?}",
            fit.nu_mhz,
            fit.t2_star_ns,
            table.rows.len(),
            elapsed
        ),
    )
}

/// One frozen Δg landscape without hyperfine field at 0.6 T and 0.8 T.
fn zeeman_linearity() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = format!(
        r#"
experiment = "coherent_shuttle_map"
label = "linearity"
magnetic_field_t = 0.8
master_seed = 99
shots_per_point = 50000
realizations = 100
output_dir = "{}"

[disorder]
channel_length_nm = 400.0
sigma_dg = 2.0e-5
correlation_length_nm = 13.0

[ensemble]
freeze_dg = true

[scan]
tau_ns = {{ start = 0.0, stop = 1500.0, step = 10.0 }}
d_nm = [0.0, 20.0, 50.0, 100.0, 200.0, 280.0, 336.0]
b_t = [0.6, 0.8]
"#,
        tmp.path().display()
    );
    let config = ExperimentConfig::parse(&text).map_err(|e| e.to_string())?;
    let run = run_experiment(&config).map_err(|e| e.to_string())?;
    if run.fits.failures() > 0 {
        return Err(format!("{} fit failures", run.fits.failures()));
    }
    let rows = &run.fits.ratios;
    let worst = rows.iter().map(|r| (r.ratio / 0.75 - 1.0).abs()).fold(0.0, f64::max);
    let worst_z = rows
        .iter()
        .map(|r| (r.ratio - 0.75).abs() / r.ratio_err)
        .fold(0.0, f64::max);
    ensure(
        rows.len() == 7 && worst < 0.01,
        format!(
            "{} ratios, largest deviation {:.4} % ({:.1} fit errors)",
            rows.len(),
            100.0 * worst,
            worst_z
        ),
    )
}

fn loop_schedule(d_nm: f64, tau_ns: f64, max_distance_nm: f64) -> PulseSchedule {
    let motion = if d_nm == 0.0 {
        Motion::None
    } else {
        Motion::loop_in_time(d_nm, tau_ns * 1e-9, 280.0)
    };
    build_schedule(&ScheduleRequest {
        motion,
        tau_dqd_s: if d_nm == 0.0 { tau_ns * 1e-9 } else { 0.0 },
        max_distance_nm,
        ..ScheduleRequest::default()
    })
    .unwrap()
}

/// T2* fitted to the Monte Carlo decay of every distance.
fn t2_versus_distance(
    distances: &[f64],
    guess: impl Fn(f64) -> f64,
    config: &EnsembleConfig,
) -> Result<Vec<(f64, f64, f64)>, String> {
    let max_d = config.disorder.channel_length_nm;
    let mut schedules = Vec::new();
    let mut grids = Vec::new();
    for &d in distances {
        let t2 = guess(d);
        let first = if d == 0.0 { 0.0 } else { 0.1 * t2 };
        let taus: Vec<f64> = (0..25).map(|k| first + (2.5 * t2 - first) * k as f64 / 24.0).collect();
        schedules.extend(taus.iter().map(|&t| loop_schedule(d, t, max_d)));
        grids.push(taus);
    }
    let est = monte_carlo_sweep(&schedules, config).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for (k, (&d, taus)) in distances.iter().zip(&grids).enumerate() {
        let line = &est[k * 25..(k + 1) * 25];
        let data = OscillationData::new(
            taus.clone(),
            line.iter().map(|e| e.mean).collect(),
            Some(line.iter().map(|e| e.stderr.max(1e-4)).collect()),
        )
        .map_err(|e| e.to_string())?;
        let fit = fit_gaussian_decay(&data).map_err(|e| format!("d = {d}: {e}"))?;
        out.push((d, fit.t2_star_ns, fit.t2_star_err_ns));
    }
    Ok(out)
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Motional narrowing: scaling exponent and recovery of the pair model.
fn narrowing() -> Outcome {
    let start = Instant::now();
    let lc = 13.0;
    let t2r = 520.0;
    let sigma = sigma_energy_for_t2_nev(t2r);

    // shuttled spin only, exponential kernel, d from 10 l_c to 1000 l_c
    let spec = DisorderSpec {
        channel_length_nm: 1000.0 * lc,
        mean_dg: 0.0,
        sigma_hf_nev: sigma,
        correlation_length_nm: lc,
        kernel: Kernel::Exponential,
        ..DisorderSpec::default()
    };
    let distances: Vec<f64> = (0..7).map(|k| 10.0 * lc * 100f64.powf(k as f64 / 6.0)).collect();
    // windowed-mean variance of an exponentially correlated field sets the τ grid
    let guess = |d: f64| {
        let r = d / lc;
        t2r / (2.0 * (r - 1.0 + (-r).exp()) / (r * r)).sqrt()
    };
    let config = EnsembleConfig::new(spec, 10_000, 505);
    let t2 = t2_versus_distance(&distances, guess, &config)?;
    let lx: Vec<f64> = t2.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = t2.iter().map(|p| p.1.ln()).collect();
    let s = slope(&lx, &ly);
    let s_closed = slope(&lx, &distances.iter().map(|&d| guess(d).ln()).collect::<Vec<_>>());

    // full pair curve, kernel whose windowed variance follows l_c/(d + l_c)
    let spec = DisorderSpec {
        channel_length_nm: 400.0,
        mean_dg: 0.0,
        sigma_hf_nev: sigma,
        correlation_length_nm: lc,
        kernel: Kernel::PowerLaw,
        ..DisorderSpec::default()
    };
    let truth = DephasingModelParams::new(1110.0, t2r, lc).map_err(|e| e.to_string())?;
    let mut config = EnsembleConfig::new(spec, 10_000, 506);
    config.static_left_t2_ns = Some(1110.0);
    let d_pair = [0.0, 5.0, 10.0, 20.0, 40.0, 70.0, 110.0, 160.0, 220.0, 280.0, 336.0];
    let pair = t2_versus_distance(&d_pair, |d| t2_epr_model(&truth, d), &config)?;
    let points: Vec<NarrowingPoint> = pair
        .iter()
        .map(|&(d, t2, err)| NarrowingPoint {
            d_nm: d,
            t2_ns: t2,
            stderr_ns: Some(err),
        })
        .collect();
    let fit = fit_narrowing(&points).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    within_time(Duration::from_secs(600), elapsed)?;
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();
    let ok = (s - 0.5).abs() <= 0.05
        && rel(fit.t2l_ns, 1110.0) < 0.1
        && rel(fit.t2r_ns, t2r) < 0.1
        && rel(fit.lc_nm, lc) < 0.1;
    ensure(
        ok,
        format!(
            "slope {s:.3} (closed form {s_closed:.3}); fitted T2L = {:.0} ns, T2R = {:.0} ns, l_c = {:.2} nm in {:.1?}",
            fit.t2l_ns, fit.t2r_ns, fit.lc_nm, elapsed
        ),
    )
}

/// Fidelity, Wilson interval and misclassification rate of one run.
type ChargeRun = (f64, (f64, f64), f64);

const CHARGE_CYCLES: u64 = 50_000;
const CHARGE_SEED: u64 = 2000;
const COVERAGE_SEEDS: u64 = 300;

/// Out-and-back charge benchmark with per-leg success 0.9986.
fn charge_pipeline() -> Outcome {
    let model = CurrentModel::default();
    let truth = 0.9986f64 * 0.9986;
    let run = |seed: u64| -> Result<ChargeRun, String> {
        let shots =
            simulate_charge_cycles(CHARGE_CYCLES, 0.9986, 0.9986, &model, seed).map_err(|e| e.to_string())?;
        let hist = fit_threshold(&shots).map_err(|e| e.to_string())?;
        let classifier = Classifier::new(hist.threshold, model.four_below());
        let r = charge_fidelity(&shots, &classifier).map_err(|e| e.to_string())?;
        let mis = classifier.misclassification_rate(&shots).map_err(|e| e.to_string())?;
        Ok((r.fidelity, r.wilson_interval, mis))
    };
    let start = Instant::now();
    let (f, (lo, hi), mis) = run(CHARGE_SEED)?;
    let elapsed = start.elapsed();
    within_time(Duration::from_secs(30), elapsed)?;
    let separation = (model.mu3 - model.mu4) / model.sigma3.max(model.sigma4);

    // the 1σ interval is a statistical statement; its coverage is checked over many seeds
    let mut covered = 0;
    let mut mean = 0.0;
    for seed in 0..COVERAGE_SEEDS {
        let (f, (lo, hi), _) = run(CHARGE_SEED + 1 + seed)?;
        covered += usize::from(lo <= truth && truth <= hi);
        mean += f / COVERAGE_SEEDS as f64;
    }
    let coverage = covered as f64 / COVERAGE_SEEDS as f64;
    let mean_err = (truth * (1.0 - truth) / (CHARGE_CYCLES as f64 * COVERAGE_SEEDS as f64)).sqrt();
    let ok = separation >= 8.0
        && lo <= truth
        && truth <= hi
        && mis < 1e-4
        && (coverage - 0.6827).abs() < 0.08
        && (mean - truth).abs() < 3.0 * mean_err;
    ensure(
        ok,
        format!(
            "F = {f:.5} with 1-sigma Wilson [{lo:.5}, {hi:.5}] (seed {CHARGE_SEED}), misclassified {mis:.2e}, {separation:.0} sigma apart, in {elapsed:.1?}; over {COVERAGE_SEEDS} seeds mean F = {mean:.6}, coverage {:.1} %",
            100.0 * coverage
        ),
    )
}

/// Norm preservation over random steps and the cosine-squared limit.
fn unitarity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1_000_000 {
        let mut psi = TwoLevelState::singlet();
        for _ in 0..rng.random_range(1..=16) {
            let j = rng.random_range(-5e-9..5e-9);
            let delta = rng.random_range(-5e-8..5e-8);
            let dt = rng.random_range(1e-12..1e-6);
            psi = psi.apply(&Propagator::new(j, delta, dt));
        }
        worst = worst.max((psi.norm_sqr() - 1.0).abs());
    }

    let nu = 7.29e6;
    let spec = DisorderSpec {
        channel_length_nm: 10.0,
        ..DisorderSpec::default()
    };
    let land = ZeemanLandscape::uniform(spec, dg_for_frequency(7.29, 0.8), 0.0).map_err(|e| e.to_string())?;
    let mut cos_err: f64 = 0.0;
    for k in 1..=500 {
        let t = 10.0 / nu * k as f64 / 500.0;
        let traj = trajectory_of(&loop_schedule(0.0, t * 1e9, 336.0)).map_err(|e| e.to_string())?;
        let out = evolve(TwoLevelState::singlet(), &traj, &land, 0.8, &ExchangeModel::default(), 1e-10)
            .map_err(|e| e.to_string())?;
        cos_err = cos_err.max((singlet_probability(&out) - (PI * nu * t).cos().powi(2)).abs());
    }
    ensure(
        worst < 1e-12 && cos_err < 1e-9,
        format!("norm drift {worst:.1e} over 1e6 random evolutions, cos^2 deviation {cos_err:.1e} over 10 periods"),
    )
}

/// Byte-identical bundles for one and four workers.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = tmp.path().join("map.toml");
    fs::write(
        &cfg,
        r#"
experiment = "coherent_shuttle_map"
label = "determinism"
magnetic_field_t = 0.8
master_seed = 17
shots_per_point = 5000
realizations = 500

[disorder]
channel_length_nm = 400.0
sigma_dg = 1.0e-5
sigma_hf_nev = 1.79
correlation_length_nm = 13.0

[ensemble]
static_left_t2_ns = 1110.0

[scan]
tau_ns = { start = 0.0, stop = 600.0, step = 20.0 }
d_nm = [0.0, 50.0, 140.0, 280.0]
b_t = [0.6, 0.8]
"#,
    )
    .map_err(|e| e.to_string())?;
    let mut bundles = Vec::new();
    for jobs in ["1", "4"] {
        let out = tmp.path().join(format!("jobs{jobs}"));
        let args = [
            "shuttlesim",
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            jobs,
            "--out",
            out.to_str().unwrap(),
        ];
        let code = main_with_args(args);
        if code != 0 {
            return Err(format!("run with {jobs} jobs exited with {code}"));
        }
        let dir = out.join("coherent_shuttle_map/determinism");
        let data = fs::read(dir.join("data.csv")).map_err(|e| e.to_string())?;
        let fits = fs::read(dir.join("fits.json")).map_err(|e| e.to_string())?;
        bundles.push((data, fits));
    }
    ensure(
        bundles[0] == bundles[1],
        format!(
            "data.csv ({} bytes) and fits.json ({} bytes) identical for 1 and 4 workers",
            bundles[0].0.len(),
            bundles[0].1.len()
        ),
    )
}

/// Gate waveforms against a direct evaluation of the drive formula.
fn waveform() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u_lower = 0.150;
    let u = [u_lower, 1.28 * u_lower, u_lower, 1.28 * u_lower];
    let c = [0.7, 0.896, 0.7, 0.896];
    let phi = [-PI / 2.0, 0.0, PI / 2.0, PI];
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let f = rng.random_range(0.5e6..10e6);
        let dur = rng.random_range(10e-9..1e-6);
        let phase0 = rng.random_range(-PI..PI);
        let seg = ShuttleSegment::new(f, u_lower, dur, Direction::Forward).with_start_phase(phase0);
        let tau = rng.random_range(0.0..=dur);
        let gate = rng.random_range(1..=4usize);
        let i = gate - 1;
        let direct = u[i] * (2.0 * PI * f * tau + phi[i] + phase0).sin() + c[i];
        let got = seg.waveform_at(tau, gate).map_err(|e| e.to_string())?;
        worst = worst.max((got - direct).abs());
    }
    let gate2 = ShuttleSegment::new(10e6, u_lower, 100e-9, Direction::Forward)
        .waveform_at(0.0, 2)
        .map_err(|e| e.to_string())?;
    ensure(
        worst < 1e-12 && (gate2 - 0.896).abs() < 1e-15,
        format!("max deviation {worst:.1e} V over 1e4 points, S2(0) = {gate2} V"),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("pair dephasing model", dephasing_model),
        ("shuttle phase infidelity", infidelity),
        ("forward-then-fit round trip", forward_then_fit),
        ("Zeeman linearity in B", zeeman_linearity),
        ("motional narrowing", narrowing),
        ("charge-fidelity pipeline", charge_pipeline),
        ("unitarity and analytic limit", unitarity),
        ("determinism across workers", determinism),
        ("waveform exactness", waveform),
    ];
    let filter: Option<usize> = std::env::args().nth(1).and_then(|a| a.parse().ok());
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if filter.is_some_and(|f| f != n) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {n} {name}: {detail} [{secs:.2} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {n} {name}: {detail} [{secs:.2} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
