//! Simulation and analysis toolkit for conveyor-mode single-electron spin
//! shuttling.
//!
//! The crate forward-models the separation and recombination of a spin
//! singlet pair where one electron rides a travelling-wave quantum dot across
//! a disordered Zeeman landscape, generates shot-level charge-sensor data, and
//! recovers dephasing times, oscillation frequencies and fidelities by
//! least-squares fitting.
//!
//! Modules, bottom-up:
//!
//! - [`landscape`]: spatially correlated Δg(x) / ΔE_hf(x) fields.
//! - [`pulsegen`]: the staged gate-voltage program and the ideal dot trajectory.
//! - [`spinsim`]: two-level S/T₀ evolution, closed-form dephasing models and
//!   the quasistatic Monte Carlo ensemble.
//! - [`readout`]: SET-current shots, crossing-point thresholds, fidelities.
//! - [`analysis`]: Levenberg–Marquardt fits of the oscillation and
//!   motional-narrowing models.

pub mod analysis;
pub mod error;
pub mod landscape;
pub mod pulsegen;
pub mod readout;
pub mod seed;
pub mod spinsim;

pub use error::{Error, Result};

pub use analysis::{
    fit_gaussian_decay, fit_narrowing, fit_single_tone, fit_two_tone, frequency_ratio_report,
    DecayFit, FieldScan, NarrowingFit, NarrowingPoint, OscillationData, RatioRow, ScanPoint,
    St0SingleToneFit, St0TwoToneFit, ToneFit,
};
pub use landscape::{generate_landscape, DisorderSpec, Kernel, LandscapeGenerator, ZeemanLandscape};
pub use pulsegen::{
    build_schedule, trajectory_of, Direction, Motion, PulseSchedule, ScheduleKind,
    ScheduleRequest, SegmentKind, ShuttleSegment, Stage, StageDurations, Trajectory,
    TrajectorySegment,
};
pub use readout::{
    charge_fidelity, fit_threshold, simulate_shot, singlet_fraction, Classifier, CurrentModel,
    FidelityResult, Filling, LegSuccessModel, SetHistogram, ShotRecord, ShotStage, SpamRates,
};
pub use spinsim::{
    avg_frequency, evolve, monte_carlo_ps, monte_carlo_sweep, shuttle_infidelity,
    singlet_probability, t2_epr_model, DephasingModelParams, EnsembleConfig, ExchangeModel,
    PhysicalConstants, PsEstimate, SecondTone, TwoLevelState,
};
