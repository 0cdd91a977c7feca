//! Quasistatic Monte Carlo over landscape realizations.
//!
//! Each realization draws fresh Δg(x) and ΔE_hf(x) fields, an optional static
//! left-dot frequency shift and an optional choice between two mean Δg
//! values, then evolves the singlet along every requested schedule.
//! Realizations are grouped into fixed chunks whose partial statistics are
//! merged in chunk order, so results do not depend on the thread count.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    evolve_exact, evolve_with_offset, singlet_probability, sigma_nu_for_t2_mhz, ExchangeModel,
    PhysicalConstants, TwoLevelState,
};
use crate::error::{Error, Result};
use crate::landscape::{DisorderSpec, LandscapeGenerator, ZeemanLandscape};
use crate::pulsegen::{trajectory_of, PulseSchedule, Trajectory};
use crate::seed;

/// Smallest ensemble accepted.
pub const MIN_REALIZATIONS: usize = 100;
const CHUNK: usize = 64;

/// Alternative mean Δg drawn per realization with probability `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecondTone {
    pub mean_dg: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub disorder: DisorderSpec,
    pub realizations: usize,
    pub master_seed: u64,
    /// Static left-dot dephasing time; adds a Gaussian frequency shift with
    /// σ = 1/(√2·π·T*₂,L). `None` keeps the left spin noiseless.
    #[serde(default)]
    pub static_left_t2_ns: Option<f64>,
    #[serde(default)]
    pub second_tone: Option<SecondTone>,
    /// Keep one Δg(x) device landscape for all realizations and redraw only
    /// the hyperfine field.
    #[serde(default)]
    pub freeze_dg: bool,
    #[serde(default)]
    pub exchange: ExchangeModel,
    /// Use the stepped midpoint integrator with this step instead of the
    /// exact piecewise propagators.
    #[serde(default)]
    pub step_s: Option<f64>,
}

impl EnsembleConfig {
    pub fn new(disorder: DisorderSpec, realizations: usize, master_seed: u64) -> Self {
        Self {
            disorder,
            realizations,
            master_seed,
            static_left_t2_ns: None,
            second_tone: None,
            freeze_dg: false,
            exchange: ExchangeModel::default(),
            step_s: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.disorder.validate()?;
        if self.realizations < MIN_REALIZATIONS {
            return Err(Error::param(
                "realizations",
                format!("{} < {MIN_REALIZATIONS}", self.realizations),
            ));
        }
        if let Some(t2) = self.static_left_t2_ns {
            if !(t2 > 0.0) {
                return Err(Error::param("static_left_t2_ns", "must be > 0"));
            }
        }
        if let Some(tone) = self.second_tone {
            if !(0.0..=1.0).contains(&tone.weight) {
                return Err(Error::param("second_tone.weight", "must lie in [0, 1]"));
            }
            if !tone.mean_dg.is_finite() {
                return Err(Error::param("second_tone.mean_dg", "must be finite"));
            }
        }
        if let Some(dt) = self.step_s {
            if !(dt > 0.0) {
                return Err(Error::param("step_s", "must be > 0"));
            }
        }
        self.exchange.validate()
    }
}

/// Ensemble mean of P_S with its standard error (sample std / √n).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Welford) -> Welford {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let frac = other.n as f64 / n as f64;
        Welford {
            n,
            mean: self.mean + d * frac,
            m2: self.m2 + other.m2 + d * d * self.n as f64 * frac,
        }
    }

    fn estimate(&self) -> PsEstimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        PsEstimate {
            mean: self.mean,
            stderr: (var.max(0.0) / self.n as f64).sqrt(),
            n: self.n,
        }
    }
}

struct Prepared {
    trajectory: Trajectory,
    b_t: f64,
}

/// Mean singlet probability for every schedule over one shared set of
/// realizations.
pub fn monte_carlo_sweep(schedules: &[PulseSchedule], config: &EnsembleConfig) -> Result<Vec<PsEstimate>> {
    config.validate()?;
    let prepared = schedules
        .iter()
        .map(|s| {
            let trajectory = trajectory_of(s)?;
            let reach = trajectory.max_position_nm();
            if reach > config.disorder.channel_length_nm * (1.0 + 1e-12) {
                return Err(Error::OutOfRange {
                    x_nm: reach,
                    length_nm: config.disorder.channel_length_nm,
                });
            }
            Ok(Prepared {
                trajectory,
                b_t: s.magnetic_field_t,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if prepared.is_empty() {
        return Ok(Vec::new());
    }

    let generator = LandscapeGenerator::new(&config.disorder)?;
    let device_dg = config
        .freeze_dg
        .then(|| generator.sample_dg(seed::derive(config.master_seed, seed::DOMAIN_DEVICE, 0)));
    let sigma_left_ev = config
        .static_left_t2_ns
        .map(|t2| sigma_nu_for_t2_mhz(t2) * 1e6 * PhysicalConstants::H);

    let n_chunks = config.realizations.div_ceil(CHUNK);
    let partials: Vec<Result<Vec<Welford>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![Welford::default(); prepared.len()];
            let end = ((c + 1) * CHUNK).min(config.realizations);
            for r in c * CHUNK..end {
                let r = r as u64;
                let hf = generator.sample_hf(seed::derive(config.master_seed, seed::DOMAIN_HF, r));
                let dg = match &device_dg {
                    Some(dg) => dg.clone(),
                    None => generator.sample_dg(seed::derive(config.master_seed, seed::DOMAIN_DG, r)),
                };
                let landscape = generator.with_fields(dg, hf);
                let left_ev = match sigma_left_ev {
                    Some(s) => {
                        let z: f64 = seed::rng(seed::derive(config.master_seed, seed::DOMAIN_LEFT_DOT, r))
                            .sample(StandardNormal);
                        s * z
                    }
                    None => 0.0,
                };
                let dg_shift = match config.second_tone {
                    Some(tone) => {
                        let u: f64 = seed::rng(seed::derive(config.master_seed, seed::DOMAIN_REALIZATION, r))
                            .random();
                        if u < tone.weight {
                            tone.mean_dg - config.disorder.mean_dg
                        } else {
                            0.0
                        }
                    }
                    None => 0.0,
                };
                for (p, w) in prepared.iter().zip(acc.iter_mut()) {
                    let offset = left_ev + dg_shift * PhysicalConstants::MU_B * p.b_t;
                    w.push(realization_ps(p, &landscape, config, offset)?);
                }
            }
            Ok(acc)
        })
        .collect();

    let mut total = vec![Welford::default(); prepared.len()];
    for part in partials {
        for (t, w) in total.iter_mut().zip(part?) {
            *t = t.merge(w);
        }
    }
    Ok(total.iter().map(Welford::estimate).collect())
}

fn realization_ps(p: &Prepared, landscape: &ZeemanLandscape, config: &EnsembleConfig, offset_ev: f64) -> Result<f64> {
    let psi = match config.step_s {
        Some(dt) => evolve_with_offset(
            TwoLevelState::singlet(),
            &p.trajectory,
            landscape,
            p.b_t,
            &config.exchange,
            dt,
            offset_ev,
        )?,
        None => evolve_exact(
            TwoLevelState::singlet(),
            &p.trajectory,
            landscape,
            p.b_t,
            &config.exchange,
            offset_ev,
        )?,
    };
    Ok(singlet_probability(&psi))
}

/// Ensemble-averaged P_S for a single schedule.
pub fn monte_carlo_ps(schedule: &PulseSchedule, config: &EnsembleConfig) -> Result<PsEstimate> {
    Ok(monte_carlo_sweep(std::slice::from_ref(schedule), config)?[0])
}

/// One exported Monte Carlo point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub d_nm: f64,
    pub tau_ns: f64,
    #[serde(rename = "P_S")]
    pub p_s: f64,
    pub stderr: f64,
}

/// Writes rows as `d_nm,tau_ns,P_S,stderr`.
pub fn write_results_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["d_nm", "tau_ns", "P_S", "stderr"])?;
    }
    w.flush().map_err(|e| Error::io("<results>", e))?;
    Ok(())
}
