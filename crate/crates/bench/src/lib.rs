//! Shared fixtures for the benchmarks.

use shuttlesim_core::spinsim::{dg_for_frequency, sigma_energy_for_t2_nev};
use shuttlesim_core::{
    build_schedule, DisorderSpec, Kernel, Motion, OscillationData, PulseSchedule, ScheduleRequest,
};

/// Power-law disorder over a 400 nm channel with both fields random.
pub fn channel_disorder() -> DisorderSpec {
    DisorderSpec {
        channel_length_nm: 400.0,
        mean_dg: dg_for_frequency(5.47, 0.6),
        sigma_dg: 2e-6,
        sigma_hf_nev: sigma_energy_for_t2_nev(520.0),
        correlation_length_nm: 13.0,
        kernel: Kernel::PowerLaw,
        ..DisorderSpec::default()
    }
}

/// A 280 nm out-and-back loop completed in `tau_ns`.
pub fn loop_schedule(tau_ns: f64) -> PulseSchedule {
    build_schedule(&ScheduleRequest {
        motion: Motion::loop_in_time(280.0, tau_ns * 1e-9, 280.0),
        ..ScheduleRequest::default()
    })
    .expect("valid loop")
}

/// Noise-free two-tone oscillation sampled every 10 ns.
pub fn two_tone_data(points: usize) -> OscillationData {
    let t: Vec<f64> = (0..points).map(|k| 10.0 * k as f64).collect();
    let p = t
        .iter()
        .map(|&t| {
            let decay = (-(t / 900.0).powi(2)).exp();
            let osc = 0.3 * (2.0 * std::f64::consts::PI * 5.40e-3 * t).cos()
                + 0.2 * (2.0 * std::f64::consts::PI * 5.55e-3 * t).cos();
            0.5 + decay * osc
        })
        .collect();
    OscillationData::new(t, p, None).expect("valid data")
}
