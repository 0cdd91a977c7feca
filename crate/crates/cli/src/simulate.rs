//! Forward simulation of one experiment: schedules, ensemble, shots.

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use shuttlesim_core::{
    build_schedule, charge_fidelity, fit_threshold, monte_carlo_sweep, seed, simulate_shot, singlet_fraction,
    Classifier, Filling, Motion, PulseSchedule, SetHistogram, ShotRecord, ShotStage,
};
use shuttlesim_core::readout::{simulate_charge_cycles, simulate_spin_shots};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::CliError;
use crate::table::{ChargeRow, Layout, SpinRow, SpinTable};

/// Simulated data of one run before analysis.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub table: Table,
    pub threshold: SetHistogram,
    /// SHA-256 over the TOML form of every schedule, in scan order.
    pub schedule_digest: String,
    /// Points dropped because they need a velocity above the drive limit.
    pub masked_points: usize,
}

#[derive(Debug, Clone)]
pub enum Table {
    Spin(SpinTable),
    Charge(Vec<ChargeRow>),
}

/// One planned point: its coordinates and the schedule that produces it.
struct Point {
    b_t: f64,
    series: Option<f64>,
    x: f64,
    schedule: PulseSchedule,
}

/// Fits the readout threshold on a 50/50 labelled reference histogram.
pub fn calibrate(config: &ExperimentConfig) -> Result<(SetHistogram, Classifier), CliError> {
    let model = &config.readout.current;
    let n = config.readout.calibration_shots;
    let shots: Vec<ShotRecord> = (0..n)
        .into_par_iter()
        .map(|k| {
            let truth = if k < n / 2 { Filling::Three } else { Filling::Four };
            let s = seed::derive(config.master_seed, seed::DOMAIN_CALIBRATION, k);
            simulate_shot(k, ShotStage::SpinReadout, truth, model, s)
        })
        .collect();
    let hist = fit_threshold(&shots)?;
    let classifier = Classifier::new(hist.threshold, model.four_below());
    Ok((hist, classifier))
}

/// Whether the loop over `d_nm` fits into `tau_ns` at the drive limit.
pub fn accessible(config: &ExperimentConfig, d_nm: f64, tau_ns: f64) -> bool {
    let v_max_nm_s = config.pulse.frequency_hz * config.pulse.lambda_nm;
    tau_ns * 1e-9 * v_max_nm_s >= 2.0 * d_nm
}

fn plan(config: &ExperimentConfig) -> Result<(Vec<Point>, usize), CliError> {
    let f = config.pulse.frequency_hz;
    let mut points = Vec::new();
    let mut masked = 0;
    for b_t in config.fields() {
        let base = config.schedule_request(b_t);
        let mut push = |series: Option<f64>, x: f64, motion: Motion, tau_dqd_ns: f64| -> Result<(), CliError> {
            let mut req = base.clone();
            req.motion = motion;
            req.tau_dqd_s = tau_dqd_ns * 1e-9;
            points.push(Point {
                b_t,
                series,
                x,
                schedule: build_schedule(&req)?,
            });
            Ok(())
        };
        match config.experiment {
            ExperimentKind::St0Dqd => {
                for tau in config.axis(&config.scan.tau_ns) {
                    push(None, tau, Motion::None, tau)?;
                }
            }
            ExperimentKind::CoherentShuttleMap => {
                for d in config.axis(&config.scan.d_nm) {
                    for tau in config.axis(&config.scan.tau_ns) {
                        if d == 0.0 {
                            push(Some(d), tau, Motion::None, tau)?;
                        } else if accessible(config, d, tau) {
                            let motion = Motion::loop_in_time(d, tau * 1e-9, config.pulse.lambda_nm);
                            push(Some(d), tau, motion, 0.0)?;
                        } else {
                            masked += 1;
                        }
                    }
                }
            }
            ExperimentKind::WaitMap => {
                for x in config.axis(&config.scan.x_nm) {
                    for tau_w in config.axis(&config.scan.tau_w_ns) {
                        let motion = Motion::WaitAt {
                            x_nm: x,
                            wait_s: tau_w * 1e-9,
                            frequency_hz: f,
                        };
                        push(Some(x), tau_w, motion, 0.0)?;
                    }
                }
            }
            ExperimentKind::LongDistance => {
                for &count in config.scan.periods.iter().flatten() {
                    for tau in config.axis(&config.scan.tau_ns) {
                        let motion = Motion::Periods { count, frequency_hz: f };
                        push(Some(f64::from(count)), tau, motion, tau)?;
                    }
                }
            }
            ExperimentKind::ChargeFidelityScan => {
                for u in config.axis(&config.scan.u_lower_v) {
                    for fr in config.axis(&config.scan.frequency_hz) {
                        let mut req = base.clone();
                        req.amplitude_lower_v = u;
                        req.motion = Motion::ChargeCycle {
                            distance_nm: config.pulse.max_distance_nm,
                            frequency_hz: fr,
                        };
                        points.push(Point {
                            b_t,
                            series: Some(u),
                            x: fr,
                            schedule: build_schedule(&req)?,
                        });
                    }
                }
            }
        }
        if config.experiment == ExperimentKind::ChargeFidelityScan {
            break;
        }
    }
    Ok((points, masked))
}

fn digest(points: &[Point]) -> Result<String, CliError> {
    let mut h = Sha256::new();
    for p in points {
        h.update(p.schedule.to_toml()?.as_bytes());
        h.update([0u8]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Runs the forward model of `config` on the current rayon pool.
pub fn simulate(config: &ExperimentConfig) -> Result<Simulation, CliError> {
    let (points, masked_points) = plan(config)?;
    let schedule_digest = digest(&points)?;
    let (threshold, classifier) = calibrate(config)?;
    let shots = config.shots();
    let model = &config.readout.current;

    let table = if let Some(layout) = Layout::of(config.experiment) {
        let mut rows = Vec::with_capacity(points.len());
        let ensemble = config.ensemble_config();
        for b_t in config.fields() {
            let line: Vec<&Point> = points.iter().filter(|p| p.b_t.to_bits() == b_t.to_bits()).collect();
            let schedules: Vec<PulseSchedule> = line.iter().map(|p| p.schedule.clone()).collect();
            let estimates = monte_carlo_sweep(&schedules, &ensemble)?;
            for (p, est) in line.into_iter().zip(estimates) {
                let index = rows.len() as u64;
                let p_true = est.mean.clamp(0.0, 1.0);
                let s = seed::derive(config.master_seed, seed::DOMAIN_POINT, index);
                let record = simulate_spin_shots(shots, p_true, &config.readout.spam, model, 0, s)?;
                let measured = singlet_fraction(&record, &classifier)?;
                rows.push(SpinRow {
                    b_t,
                    series: p.series,
                    x: p.x,
                    p_s: measured.mean,
                    stderr: measured.stderr,
                    p_s_model: est.mean,
                    p_s_model_stderr: est.stderr,
                    shots,
                });
            }
        }
        Table::Spin(SpinTable { layout, rows })
    } else {
        let mut rows = Vec::with_capacity(points.len());
        for (index, p) in points.iter().enumerate() {
            let u = p.series.unwrap_or(config.pulse.amplitude_lower_v);
            let p_leg = config.charge.probability(u, p.x);
            let s = seed::derive(config.master_seed, seed::DOMAIN_POINT, index as u64);
            let record = simulate_charge_cycles(shots, p_leg, p_leg, model, s)?;
            let r = charge_fidelity(&record, &classifier)?;
            rows.push(ChargeRow {
                u_lower_v: u,
                frequency_hz: p.x,
                fidelity: r.fidelity,
                wilson_lo: r.wilson_interval.0,
                wilson_hi: r.wilson_interval.1,
                successes: r.successes,
                n_cycles: r.n_cycles,
                p_leg,
            });
        }
        Table::Charge(rows)
    };
    Ok(Simulation {
        table,
        threshold,
        schedule_digest,
        masked_points,
    })
}
