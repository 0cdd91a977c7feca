//! S/T₀ two-level dynamics of the separated pair and closed-form dephasing
//! models.
//!
//! In the (|S⟩, |T₀⟩) basis the Hamiltonian is
//!
//! ```text
//! H = | -J      δ/2 |      δ = Δg·μ_B·B + ΔE_hf
//!     | δ/2     0   |
//! ```
//!
//! Energies are handled in eV, times in seconds, positions in nm. Public
//! helpers take and return ns, nm, MHz, T and neV.

mod ensemble;

pub use ensemble::{
    monte_carlo_ps, monte_carlo_sweep, write_results_csv, EnsembleConfig, MIN_REALIZATIONS, PsEstimate, ResultRow,
    SecondTone,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::ZeemanLandscape;
use crate::pulsegen::{SegmentKind, Trajectory, TrajectorySegment};

/// Fixed physical constants.
pub struct PhysicalConstants;

impl PhysicalConstants {
    /// Planck constant in eV·s.
    pub const H: f64 = 4.135667696e-15;
    /// Reduced Planck constant in eV·s.
    pub const HBAR: f64 = Self::H / std::f64::consts::TAU;
    /// Bohr magneton in eV/T.
    pub const MU_B: f64 = 5.7883818060e-5;
    pub const NEV: f64 = 1e-9;
}

/// Zeeman-energy difference δ in eV.
pub fn zeeman_difference_ev(dg: f64, hf_nev: f64, b_t: f64) -> f64 {
    dg * PhysicalConstants::MU_B * b_t + hf_nev * PhysicalConstants::NEV
}

/// Δg that makes ν = `nu_mhz` at field `b_t` without hyperfine contribution.
pub fn dg_for_frequency(nu_mhz: f64, b_t: f64) -> f64 {
    nu_mhz * 1e6 * PhysicalConstants::H / (PhysicalConstants::MU_B * b_t)
}

/// Spread σ_ν (MHz) of a quasistatic Gaussian frequency distribution whose
/// ensemble average decays as exp(−(t/T₂*)²).
pub fn sigma_nu_for_t2_mhz(t2_ns: f64) -> f64 {
    1e3 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * t2_ns)
}

/// Energy spread σ (neV) giving dephasing time `t2_ns`.
pub fn sigma_energy_for_t2_nev(t2_ns: f64) -> f64 {
    sigma_nu_for_t2_mhz(t2_ns) * 1e6 * PhysicalConstants::H / PhysicalConstants::NEV
}

/// Dephasing time (ns) of a Gaussian energy spread `sigma_nev`.
pub fn t2_for_sigma_energy_ns(sigma_nev: f64) -> f64 {
    let sigma_mhz = sigma_nev * PhysicalConstants::NEV / PhysicalConstants::H / 1e6;
    1e3 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * sigma_mhz)
}

/// Pair state in the (S, T₀) basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelState {
    pub amp_s: Complex64,
    pub amp_t0: Complex64,
}

impl TwoLevelState {
    pub fn singlet() -> Self {
        Self {
            amp_s: Complex64::new(1.0, 0.0),
            amp_t0: Complex64::new(0.0, 0.0),
        }
    }

    pub fn triplet() -> Self {
        Self {
            amp_s: Complex64::new(0.0, 0.0),
            amp_t0: Complex64::new(1.0, 0.0),
        }
    }

    pub fn new(amp_s: Complex64, amp_t0: Complex64) -> Self {
        Self { amp_s, amp_t0 }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp_s.norm_sqr() + self.amp_t0.norm_sqr()
    }

    /// `U·ψ`.
    pub fn apply(self, u: &Propagator) -> Self {
        Self {
            amp_s: u.m[0][0] * self.amp_s + u.m[0][1] * self.amp_t0,
            amp_t0: u.m[1][0] * self.amp_s + u.m[1][1] * self.amp_t0,
        }
    }
}

/// |⟨S|ψ⟩|², clamped to [0, 1] against round-off.
pub fn singlet_probability(state: &TwoLevelState) -> f64 {
    state.amp_s.norm_sqr().clamp(0.0, 1.0)
}

/// Exact `exp(−iHt/ħ)` for the 2×2 Hamiltonian with exchange `j_ev` and
/// off-diagonal `delta_ev / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Propagator {
    pub m: [[Complex64; 2]; 2],
}

impl Propagator {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self {
            m: [[one, zero], [zero, one]],
        }
    }

    pub fn new(j_ev: f64, delta_ev: f64, t_s: f64) -> Self {
        // H = a0·I + ax·σx + az·σz; the global phase exp(−i·a0·t/ħ) is
        // dropped since no observable depends on it.
        let az = -0.5 * j_ev;
        let ax = 0.5 * delta_ev;
        let norm = ax.hypot(az);
        let theta = norm * t_s / PhysicalConstants::HBAR;
        let (s, c) = theta.sin_cos();
        let (nx, nz) = if norm > 0.0 { (ax / norm, az / norm) } else { (0.0, 0.0) };
        Self::su2(Complex64::new(c, -s * nz), Complex64::new(0.0, -s * nx))
    }

    /// [[a, b], [−b*, a*]] with (a, b) rescaled onto the unit sphere so the
    /// step is unitary to round-off.
    fn su2(a: Complex64, b: Complex64) -> Self {
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (a, b) = (a / r, b / r);
        Self {
            m: [[a, b], [-b.conj(), a.conj()]],
        }
    }

    /// Pure σx rotation `exp(−iφσx)` generated by a time-dependent δ(t) with
    /// J = 0; `phase` is ∫δ dt / (2ħ).
    pub fn x_rotation(phase: f64) -> Self {
        let (s, c) = phase.sin_cos();
        Self::su2(Complex64::new(c, 0.0), Complex64::new(0.0, -s))
    }
}

/// How the exchange J is set along the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExchangeForm {
    /// J = J₀ in the double dot, 0 while the electron is shuttled or parked.
    #[default]
    OffDuringShuttle,
    /// J = J₀·exp(ε/ε₀) in the double dot, 0 while shuttled or parked.
    ExponentialInDetuning,
}

/// Exchange J(ε) applied in the double-dot stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeModel {
    #[serde(default)]
    pub j0_nev: f64,
    #[serde(default = "default_epsilon0")]
    pub epsilon0_v: f64,
    /// Detuning at the separation stage.
    #[serde(default)]
    pub epsilon_v: f64,
    #[serde(default)]
    pub form: ExchangeForm,
}

fn default_epsilon0() -> f64 {
    1.0
}

impl Default for ExchangeModel {
    fn default() -> Self {
        Self {
            j0_nev: 0.0,
            epsilon0_v: 1.0,
            epsilon_v: 0.0,
            form: ExchangeForm::OffDuringShuttle,
        }
    }
}

impl ExchangeModel {
    /// Constant J in the double dot.
    pub fn constant(j_nev: f64) -> Self {
        Self {
            j0_nev: j_nev,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.j0_nev >= 0.0 && self.j0_nev.is_finite()) {
            return Err(Error::param("j0_nev", "must be finite and >= 0"));
        }
        if self.form == ExchangeForm::ExponentialInDetuning
            && !(self.epsilon0_v > 0.0 && self.epsilon0_v.is_finite())
        {
            return Err(Error::param("epsilon0_v", "must be finite and > 0"));
        }
        Ok(())
    }

    /// J(ε) in eV at detuning `epsilon_v`.
    pub fn j_at(&self, epsilon_v: f64) -> f64 {
        let j = match self.form {
            ExchangeForm::OffDuringShuttle => self.j0_nev,
            ExchangeForm::ExponentialInDetuning => self.j0_nev * (epsilon_v / self.epsilon0_v).exp(),
        };
        j * PhysicalConstants::NEV
    }

    /// J in eV on a trajectory piece of the given kind.
    pub fn j_for(&self, kind: SegmentKind) -> f64 {
        match kind {
            SegmentKind::Dqd => self.j_at(self.epsilon_v),
            SegmentKind::Shuttle | SegmentKind::Wait => 0.0,
        }
    }
}

/// Largest phase per step accepted by [`evolve`].
pub const MAX_STEP_PHASE: f64 = 0.05;

fn delta_at(landscape: &ZeemanLandscape, x_nm: f64, b_t: f64) -> Result<f64> {
    let (dg, hf) = landscape.field_at(x_nm)?;
    Ok(zeeman_difference_ev(dg, hf, b_t))
}

/// Time-ordered product of exact step propagators with H sampled at the
/// midpoint of every step. `offset_ev` is added to δ everywhere.
pub fn evolve_with_offset(
    state: TwoLevelState,
    trajectory: &Trajectory,
    landscape: &ZeemanLandscape,
    b_t: f64,
    exchange: &ExchangeModel,
    dt_s: f64,
    offset_ev: f64,
) -> Result<TwoLevelState> {
    if !(dt_s > 0.0 && dt_s.is_finite()) {
        return Err(Error::param("dt_s", "must be finite and > 0"));
    }
    exchange.validate()?;
    let mut psi = state;
    for seg in &trajectory.segments {
        let dur = seg.duration_s();
        if dur <= 0.0 {
            continue;
        }
        let n = (dur / dt_s).ceil().max(1.0) as usize;
        let h = dur / n as f64;
        let j = exchange.j_for(seg.kind);
        let check = |delta: f64| -> Result<()> {
            let phase = (0.5 * j.abs() + 0.5 * j.hypot(delta)) * dt_s / PhysicalConstants::HBAR;
            if phase >= MAX_STEP_PHASE {
                return Err(Error::StepTooLarge {
                    phase,
                    limit: MAX_STEP_PHASE,
                });
            }
            Ok(())
        };
        if seg.is_static() {
            // constant H: the n step propagators multiply to one exactly
            let delta = delta_at(landscape, seg.x_start_nm, b_t)? + offset_ev;
            check(delta)?;
            psi = psi.apply(&Propagator::new(j, delta, dur));
        } else if j == 0.0 {
            // H ∝ σx at every step, so the steps commute and their product
            // is a single rotation by the summed midpoint phases
            let mut sum = 0.0;
            let mut comp = 0.0;
            for k in 0..n {
                let t_mid = seg.t_start_s + (k as f64 + 0.5) * h;
                let delta = delta_at(landscape, seg.position_at(t_mid), b_t)? + offset_ev;
                check(delta)?;
                let term = delta * h;
                let t = sum + term;
                comp += if sum.abs() >= term.abs() { (sum - t) + term } else { (term - t) + sum };
                sum = t;
            }
            psi = psi.apply(&Propagator::x_rotation((sum + comp) / (2.0 * PhysicalConstants::HBAR)));
        } else {
            for k in 0..n {
                let t_mid = seg.t_start_s + (k as f64 + 0.5) * h;
                let delta = delta_at(landscape, seg.position_at(t_mid), b_t)? + offset_ev;
                check(delta)?;
                psi = psi.apply(&Propagator::new(j, delta, h));
            }
        }
    }
    Ok(psi)
}

/// Evolves `state` along `trajectory` through `landscape` in steps of at most
/// `dt_s`.
pub fn evolve(
    state: TwoLevelState,
    trajectory: &Trajectory,
    landscape: &ZeemanLandscape,
    b_t: f64,
    exchange: &ExchangeModel,
    dt_s: f64,
) -> Result<TwoLevelState> {
    evolve_with_offset(state, trajectory, landscape, b_t, exchange, dt_s, 0.0)
}

/// Propagator of one trajectory piece without time stepping.
///
/// Static pieces have constant H. Moving pieces carry J = 0, so H ∝ σx at
/// every instant and the rotation angle follows from the exact integral of
/// the interpolated field over the path.
pub fn segment_propagator(
    seg: &TrajectorySegment,
    landscape: &ZeemanLandscape,
    b_t: f64,
    exchange: &ExchangeModel,
    offset_ev: f64,
) -> Result<Propagator> {
    let dur = seg.duration_s();
    if dur <= 0.0 {
        return Ok(Propagator::identity());
    }
    if seg.is_static() {
        let delta = delta_at(landscape, seg.x_start_nm, b_t)? + offset_ev;
        return Ok(Propagator::new(exchange.j_for(seg.kind), delta, dur));
    }
    let (g, h) = landscape.integrate(seg.x_start_nm, seg.x_end_nm)?;
    let dx = seg.x_end_nm - seg.x_start_nm;
    // ∫δ dt = ∫δ dx / v, with the signed integral and signed dx
    let path_integral = zeeman_difference_ev(g, h, b_t) / dx * dur;
    Ok(Propagator::x_rotation(
        (path_integral + offset_ev * dur) / (2.0 * PhysicalConstants::HBAR),
    ))
}

/// Exact evolution along a trajectory, one propagator per piece.
pub fn evolve_exact(
    state: TwoLevelState,
    trajectory: &Trajectory,
    landscape: &ZeemanLandscape,
    b_t: f64,
    exchange: &ExchangeModel,
    offset_ev: f64,
) -> Result<TwoLevelState> {
    let mut psi = state;
    for seg in &trajectory.segments {
        psi = psi.apply(&segment_propagator(seg, landscape, b_t, exchange, offset_ev)?);
    }
    Ok(psi)
}

/// Position-averaged oscillation frequency ν(d) in MHz over [0, d].
pub fn avg_frequency(landscape: &ZeemanLandscape, d_nm: f64, b_t: f64) -> Result<f64> {
    let (dg, hf) = landscape.window_average(0.0, d_nm)?;
    Ok(zeeman_difference_ev(dg, hf, b_t) / PhysicalConstants::H / 1e6)
}

/// Parameters of the motional-narrowing model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DephasingModelParams {
    /// Static left-dot dephasing time T*₂,L.
    pub t2l_ns: f64,
    /// Right-dot dephasing time at rest T*₂,R.
    pub t2r_ns: f64,
    /// Correlation length l_c.
    pub lc_nm: f64,
}

impl DephasingModelParams {
    pub fn new(t2l_ns: f64, t2r_ns: f64, lc_nm: f64) -> Result<Self> {
        let p = Self { t2l_ns, t2r_ns, lc_nm };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t2l_ns", self.t2l_ns), ("t2r_ns", self.t2r_ns), ("lc_nm", self.lc_nm)] {
            if !(v > 0.0) {
                return Err(Error::param(name, "must be > 0"));
            }
        }
        Ok(())
    }

    /// Shuttled-spin dephasing time T*₂,S(d) = T*₂,R·√((d + l_c)/l_c).
    pub fn t2_shuttled(&self, d_nm: f64) -> f64 {
        self.t2r_ns * ((d_nm + self.lc_nm) / self.lc_nm).sqrt()
    }
}

/// Pair dephasing time T₂*(d) in ns:
/// (1/T₂*)² = (1/T*₂,L)² + (1/T*₂,R)²·l_c/(d + l_c).
pub fn t2_epr_model(params: &DephasingModelParams, d_nm: f64) -> f64 {
    let left = params.t2l_ns.recip().powi(2);
    let right = params.t2r_ns.recip().powi(2) * params.lc_nm / (d_nm + params.lc_nm);
    (left + right).sqrt().recip()
}

/// Phase infidelity of one out-and-back shuttle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShuttleInfidelity {
    /// τ_S = 2d/v_S.
    pub shuttle_time_ns: f64,
    /// 1 − exp(−(τ_S/T*₂,S)²).
    pub exact: f64,
    /// (τ_S/T*₂,S)².
    pub quadratic: f64,
}

/// Infidelity for shuttle distance `d_nm` (each way) at velocity `v_m_s`.
pub fn shuttle_infidelity(t2s_ns: f64, d_nm: f64, v_m_s: f64) -> Result<ShuttleInfidelity> {
    if !(t2s_ns > 0.0) {
        return Err(Error::param("t2s_ns", "must be > 0"));
    }
    if !(d_nm >= 0.0) {
        return Err(Error::param("d_nm", "must be >= 0"));
    }
    if !(v_m_s > 0.0) {
        return Err(Error::param("v_m_s", "must be > 0"));
    }
    // nm / (m/s) = ns
    let tau = 2.0 * d_nm / v_m_s;
    let x = (tau / t2s_ns).powi(2);
    Ok(ShuttleInfidelity {
        shuttle_time_ns: tau,
        exact: -(-x).exp_m1(),
        quadratic: x,
    })
}
