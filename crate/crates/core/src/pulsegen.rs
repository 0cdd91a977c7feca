//! Staged voltage programs and the ideal moving-dot trajectory.
//!
//! The four shuttle gate sets S1..S4 are driven with phase-shifted sinusoids
//! `V_i(τ) = U_i·sin(2πfτ + φ_i) + C_i`. One full period of the drive moves the
//! potential minimum by one wavelength λ, so the dot position follows the
//! accumulated conveyor phase: `x = λ·Δφ / 2π`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Period of the travelling-wave potential.
pub const LAMBDA_NM: f64 = 280.0;
/// Upper-layer amplitude relative to the lower layer.
pub const CROSS_TALK_FACTOR: f64 = 1.28;
/// φ₁..φ₄ of the travelling wave.
pub const SHUTTLE_PHASES_RAD: [f64; 4] = [-FRAC_PI_2, 0.0, FRAC_PI_2, PI];
/// C₁..C₄.
pub const SHUTTLE_OFFSETS_V: [f64; 4] = [0.7, 0.896, 0.7, 0.896];
/// Default lower-layer amplitude U_lower.
pub const AMPLITUDE_LOWER_V: f64 = 0.150;
/// Highest drive frequency with reliable charge transfer.
pub const MAX_FREQUENCY_HZ: f64 = 10e6;
/// Usable one-way distance, 1.2 λ.
pub const USABLE_RANGE_NM: f64 = 336.0;

/// Fastest shuttle velocity, f_max·λ.
pub fn max_velocity_m_s() -> f64 {
    MAX_FREQUENCY_HZ * LAMBDA_NM * 1e-9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// One sinusoidal drive segment on S1..S4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuttleSegment {
    pub frequency_hz: f64,
    /// U_1 = U_3 (gate sets S1, S3).
    pub amplitude_lower_v: f64,
    /// U_2 = U_4 (gate sets S2, S4).
    pub amplitude_upper_v: f64,
    pub offsets_v: [f64; 4],
    pub phases_rad: [f64; 4],
    /// Conveyor phase at τ = 0 relative to the initialisation potential.
    #[serde(default)]
    pub start_phase_rad: f64,
    pub duration_s: f64,
    pub direction: Direction,
    pub lambda_nm: f64,
}

impl ShuttleSegment {
    /// Segment with the default offsets, phases and λ, and the 1.28
    /// cross-talk compensation applied to the upper layer.
    pub fn new(frequency_hz: f64, amplitude_lower_v: f64, duration_s: f64, direction: Direction) -> Self {
        Self {
            frequency_hz,
            amplitude_lower_v,
            amplitude_upper_v: CROSS_TALK_FACTOR * amplitude_lower_v,
            offsets_v: SHUTTLE_OFFSETS_V,
            phases_rad: SHUTTLE_PHASES_RAD,
            start_phase_rad: 0.0,
            duration_s,
            direction,
            lambda_nm: LAMBDA_NM,
        }
    }

    pub fn with_start_phase(mut self, phase: f64) -> Self {
        self.start_phase_rad = phase;
        self
    }

    pub fn velocity_m_s(&self) -> f64 {
        self.frequency_hz * self.lambda_nm * 1e-9
    }

    /// |Δφ| swept by the segment.
    pub fn phase_advance(&self) -> f64 {
        TAU * self.frequency_hz * self.duration_s
    }

    pub fn end_phase_rad(&self) -> f64 {
        match self.direction {
            Direction::Forward => self.start_phase_rad + self.phase_advance(),
            Direction::Backward => self.start_phase_rad - self.phase_advance(),
        }
    }

    pub fn distance_nm(&self) -> f64 {
        self.lambda_nm * self.phase_advance() / TAU
    }

    pub fn amplitude(&self, gate: usize) -> f64 {
        if gate % 2 == 1 {
            self.amplitude_lower_v
        } else {
            self.amplitude_upper_v
        }
    }

    fn forward_value(&self, base_phase: f64, tau_s: f64, gate: usize) -> f64 {
        let i = gate - 1;
        self.amplitude(gate) * (TAU * self.frequency_hz * tau_s + self.phases_rad[i] + base_phase).sin()
            + self.offsets_v[i]
    }

    /// Gate voltage on S`gate` (1..=4) at time `tau_s` into the segment.
    ///
    /// A backward segment is the time reverse of the forward segment that
    /// ends where this one starts.
    pub fn waveform_at(&self, tau_s: f64, gate: usize) -> Result<f64> {
        if !(1..=4).contains(&gate) {
            return Err(Error::param("gate", format!("{gate} not in 1..=4")));
        }
        let slack = 1e-12 * self.duration_s.max(1e-9);
        if !(tau_s >= -slack && tau_s <= self.duration_s + slack) {
            return Err(Error::param(
                "tau_s",
                format!("{tau_s} outside [0, {}]", self.duration_s),
            ));
        }
        Ok(match self.direction {
            Direction::Forward => self.forward_value(self.start_phase_rad, tau_s, gate),
            Direction::Backward => {
                self.forward_value(self.end_phase_rad(), self.duration_s - tau_s, gate)
            }
        })
    }

    /// All four gate voltages at `tau_s`.
    pub fn voltages_at(&self, tau_s: f64) -> Result<[f64; 4]> {
        Ok([
            self.waveform_at(tau_s, 1)?,
            self.waveform_at(tau_s, 2)?,
            self.waveform_at(tau_s, 3)?,
            self.waveform_at(tau_s, 4)?,
        ])
    }

    /// Gate voltages while the conveyor is held at `phase`.
    fn held_voltages(&self, phase: f64) -> [f64; 4] {
        std::array::from_fn(|i| self.forward_value(phase, 0.0, i + 1))
    }
}

/// One step of the pulse program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "snake_case")]
pub enum Stage {
    Load { duration_s: f64 },
    InitI { duration_s: f64 },
    SeparateS,
    CloseT,
    Shuttle(ShuttleSegment),
    WaitAt { x_nm: f64, duration_s: f64 },
    WaitDqd { duration_s: f64 },
    PsbP { duration_s: f64 },
    FreezeF,
    MeasureM,
}

impl Stage {
    fn name(&self) -> &'static str {
        match self {
            Stage::Load { .. } => "Load",
            Stage::InitI { .. } => "InitI",
            Stage::SeparateS => "SeparateS",
            Stage::CloseT => "CloseT",
            Stage::Shuttle(_) => "Shuttle",
            Stage::WaitAt { .. } => "WaitAt",
            Stage::WaitDqd { .. } => "WaitDqd",
            Stage::PsbP { .. } => "PsbP",
            Stage::FreezeF => "FreezeF",
            Stage::MeasureM => "MeasureM",
        }
    }
}

/// Which grammar a schedule satisfies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Load→I→S→T→(Shuttle|WaitAt)*→S→WaitDqd?→P→F→M
    Coherent,
    /// Load→I?→S→T→Shuttle+→M→Shuttle+→M
    Charge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseSchedule {
    pub magnetic_field_t: f64,
    pub stages: Vec<Stage>,
}

struct Cursor<'a> {
    stages: &'a [Stage],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Stage> {
        self.stages.get(self.pos)
    }

    fn expect(&mut self, want: &str, ok: impl Fn(&Stage) -> bool) -> Result<()> {
        match self.peek() {
            Some(s) if ok(s) => {
                self.pos += 1;
                Ok(())
            }
            Some(s) => Err(Error::Schedule(format!(
                "stage {}: expected {want}, found {}",
                self.pos,
                s.name()
            ))),
            None => Err(Error::Schedule(format!(
                "stage {}: expected {want}, found end of schedule",
                self.pos
            ))),
        }
    }

    fn accept(&mut self, ok: impl Fn(&Stage) -> bool) -> bool {
        match self.peek() {
            Some(s) if ok(s) => {
                self.pos += 1;
                true
            }
            _ => false,
        }
    }

    fn end(&self) -> Result<()> {
        match self.peek() {
            None => Ok(()),
            Some(s) => Err(Error::Schedule(format!(
                "stage {}: trailing {} after final measurement",
                self.pos,
                s.name()
            ))),
        }
    }
}

fn is_shuttle(s: &Stage) -> bool {
    matches!(s, Stage::Shuttle(_))
}

fn parse_coherent(stages: &[Stage]) -> Result<()> {
    let mut c = Cursor { stages, pos: 0 };
    c.expect("Load", |s| matches!(s, Stage::Load { .. }))?;
    c.expect("InitI", |s| matches!(s, Stage::InitI { .. }))?;
    c.expect("SeparateS", |s| matches!(s, Stage::SeparateS))?;
    c.expect("CloseT", |s| matches!(s, Stage::CloseT))?;
    while c.accept(|s| matches!(s, Stage::Shuttle(_) | Stage::WaitAt { .. })) {}
    c.expect("SeparateS", |s| matches!(s, Stage::SeparateS))?;
    c.accept(|s| matches!(s, Stage::WaitDqd { .. }));
    c.expect("PsbP", |s| matches!(s, Stage::PsbP { .. }))?;
    c.expect("FreezeF", |s| matches!(s, Stage::FreezeF))?;
    c.expect("MeasureM", |s| matches!(s, Stage::MeasureM))?;
    c.end()
}

fn parse_charge(stages: &[Stage]) -> Result<()> {
    let mut c = Cursor { stages, pos: 0 };
    c.expect("Load", |s| matches!(s, Stage::Load { .. }))?;
    c.accept(|s| matches!(s, Stage::InitI { .. }));
    c.expect("SeparateS", |s| matches!(s, Stage::SeparateS))?;
    c.expect("CloseT", |s| matches!(s, Stage::CloseT))?;
    c.expect("Shuttle", is_shuttle)?;
    while c.accept(is_shuttle) {}
    c.expect("MeasureM", |s| matches!(s, Stage::MeasureM))?;
    c.expect("Shuttle", is_shuttle)?;
    while c.accept(is_shuttle) {}
    c.expect("MeasureM", |s| matches!(s, Stage::MeasureM))?;
    c.end()
}

const PHASE_TOL: f64 = 1e-9;
const POSITION_TOL_NM: f64 = 1e-6;
/// Largest voltage step allowed between consecutive shuttle segments.
pub const MAX_VOLTAGE_JUMP_V: f64 = 1e-9;

impl PulseSchedule {
    /// Checks the stage grammar, phase continuity and that the dot returns home.
    pub fn validate(&self) -> Result<ScheduleKind> {
        if !(self.magnetic_field_t.is_finite() && self.magnetic_field_t >= 0.0) {
            return Err(Error::param("magnetic_field_t", "must be finite and >= 0"));
        }
        let kind = match parse_coherent(&self.stages) {
            Ok(()) => ScheduleKind::Coherent,
            Err(coherent_err) => match parse_charge(&self.stages) {
                Ok(()) => ScheduleKind::Charge,
                Err(_) => return Err(coherent_err),
            },
        };

        let mut phase = 0.0;
        let mut lambda: Option<f64> = None;
        let mut previous: Option<&ShuttleSegment> = None;
        for (i, stage) in self.stages.iter().enumerate() {
            match stage {
                Stage::Shuttle(seg) => {
                    if !(seg.frequency_hz > 0.0 && seg.frequency_hz.is_finite()) {
                        return Err(Error::Schedule(format!("stage {i}: frequency must be > 0")));
                    }
                    if !(seg.duration_s >= 0.0 && seg.duration_s.is_finite()) {
                        return Err(Error::Schedule(format!("stage {i}: duration must be >= 0")));
                    }
                    if !(seg.lambda_nm > 0.0) {
                        return Err(Error::Schedule(format!("stage {i}: lambda must be > 0")));
                    }
                    match lambda {
                        Some(l) if (l - seg.lambda_nm).abs() > 1e-12 * l => {
                            return Err(Error::Schedule(format!(
                                "stage {i}: lambda {} differs from {l}",
                                seg.lambda_nm
                            )))
                        }
                        _ => lambda = Some(seg.lambda_nm),
                    }
                    if (seg.start_phase_rad - phase).abs() > PHASE_TOL * (1.0 + phase.abs()) {
                        return Err(Error::Schedule(format!(
                            "stage {i}: segment starts at phase {} but conveyor is at {phase}",
                            seg.start_phase_rad
                        )));
                    }
                    if let Some(prev) = previous {
                        let end = prev.voltages_at(prev.duration_s)?;
                        let start = seg.voltages_at(0.0)?;
                        let jump = end
                            .iter()
                            .zip(&start)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max);
                        if jump >= MAX_VOLTAGE_JUMP_V {
                            return Err(Error::Schedule(format!(
                                "stage {i}: gate voltage jumps by {jump:.3e} V"
                            )));
                        }
                    }
                    phase = seg.end_phase_rad();
                    if phase < -PHASE_TOL {
                        return Err(Error::Schedule(format!(
                            "stage {i}: dot moves behind its initial position"
                        )));
                    }
                    previous = Some(seg);
                }
                Stage::WaitAt { x_nm, duration_s } => {
                    let x = lambda.unwrap_or(LAMBDA_NM) * phase / TAU;
                    if (x - x_nm).abs() > POSITION_TOL_NM {
                        return Err(Error::Schedule(format!(
                            "stage {i}: WaitAt x = {x_nm} nm but dot is at {x} nm"
                        )));
                    }
                    if !(*duration_s >= 0.0) {
                        return Err(Error::Schedule(format!("stage {i}: duration must be >= 0")));
                    }
                }
                Stage::Load { duration_s }
                | Stage::InitI { duration_s }
                | Stage::WaitDqd { duration_s }
                | Stage::PsbP { duration_s } => {
                    if !(*duration_s >= 0.0 && duration_s.is_finite()) {
                        return Err(Error::Schedule(format!("stage {i}: duration must be >= 0")));
                    }
                }
                Stage::MeasureM if kind == ScheduleKind::Charge => {}
                _ => {}
            }
        }
        if phase.abs() > PHASE_TOL * (1.0 + self.total_phase()) {
            return Err(Error::Schedule(format!(
                "net displacement is non-zero (final phase {phase} rad)"
            )));
        }
        Ok(kind)
    }

    fn total_phase(&self) -> f64 {
        self.segments().map(|s| s.phase_advance()).sum()
    }

    pub fn segments(&self) -> impl Iterator<Item = &ShuttleSegment> {
        self.stages.iter().filter_map(|s| match s {
            Stage::Shuttle(seg) => Some(seg),
            _ => None,
        })
    }

    /// Accumulated path length of all shuttle segments.
    pub fn path_length_nm(&self) -> f64 {
        self.segments().map(|s| s.distance_nm()).sum()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

/// Durations of the static stages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageDurations {
    pub load_s: f64,
    pub init_s: f64,
    pub psb_s: f64,
}

impl Default for StageDurations {
    fn default() -> Self {
        Self {
            load_s: 2e-3,
            init_s: 1e-3,
            psb_s: 500e-9,
        }
    }
}

/// What the shuttled electron does between separation and detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Motion {
    /// Stay in the double dot.
    None,
    /// Forward by `distance_nm` and straight back.
    Loop { distance_nm: f64, frequency_hz: f64 },
    /// Forward to `x_nm`, wait, and back.
    WaitAt { x_nm: f64, wait_s: f64, frequency_hz: f64 },
    /// `count` periods forward plus backward (D): one half-period out and back
    /// for D = 1, otherwise alternating full-period segments.
    Periods { count: u32, frequency_hz: f64 },
    /// Charge-shuttle benchmark: out, measure, back, measure.
    ChargeCycle { distance_nm: f64, frequency_hz: f64 },
}

impl Motion {
    /// Loop whose forward plus backward leg takes `shuttle_time_s` in total.
    pub fn loop_in_time(distance_nm: f64, shuttle_time_s: f64, lambda_nm: f64) -> Motion {
        if distance_nm == 0.0 {
            return Motion::None;
        }
        let velocity_nm_s = 2.0 * distance_nm / shuttle_time_s;
        Motion::Loop {
            distance_nm,
            frequency_hz: velocity_nm_s / lambda_nm,
        }
    }
}

/// Everything needed to emit one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRequest {
    pub magnetic_field_t: f64,
    pub motion: Motion,
    /// Extra wait at stage S before PSB; 0 omits the stage.
    pub tau_dqd_s: f64,
    pub amplitude_lower_v: f64,
    pub cross_talk_compensation: bool,
    pub offsets_v: [f64; 4],
    pub phases_rad: [f64; 4],
    pub lambda_nm: f64,
    pub durations: StageDurations,
    /// Largest one-way excursion accepted.
    pub max_distance_nm: f64,
}

impl Default for ScheduleRequest {
    fn default() -> Self {
        Self {
            magnetic_field_t: 0.8,
            motion: Motion::None,
            tau_dqd_s: 0.0,
            amplitude_lower_v: AMPLITUDE_LOWER_V,
            cross_talk_compensation: true,
            offsets_v: SHUTTLE_OFFSETS_V,
            phases_rad: SHUTTLE_PHASES_RAD,
            lambda_nm: LAMBDA_NM,
            durations: StageDurations::default(),
            max_distance_nm: USABLE_RANGE_NM,
        }
    }
}

impl ScheduleRequest {
    fn segment(&self, distance_nm: f64, frequency_hz: f64, direction: Direction, start_phase: f64) -> ShuttleSegment {
        let upper = if self.cross_talk_compensation {
            CROSS_TALK_FACTOR * self.amplitude_lower_v
        } else {
            self.amplitude_lower_v
        };
        ShuttleSegment {
            frequency_hz,
            amplitude_lower_v: self.amplitude_lower_v,
            amplitude_upper_v: upper,
            offsets_v: self.offsets_v,
            phases_rad: self.phases_rad,
            start_phase_rad: start_phase,
            duration_s: distance_nm / (frequency_hz * self.lambda_nm),
            direction,
            lambda_nm: self.lambda_nm,
        }
    }

    /// Out-and-back pair of segments starting from the home position.
    fn out_and_back(&self, distance_nm: f64, frequency_hz: f64) -> [Stage; 2] {
        let out = self.segment(distance_nm, frequency_hz, Direction::Forward, 0.0);
        let back = self.segment(distance_nm, frequency_hz, Direction::Backward, out.end_phase_rad());
        [Stage::Shuttle(out), Stage::Shuttle(back)]
    }

    fn check_distance(&self, distance_nm: f64) -> Result<()> {
        if !(distance_nm >= 0.0 && distance_nm.is_finite()) {
            return Err(Error::param("distance_nm", "must be finite and >= 0"));
        }
        if distance_nm > self.max_distance_nm * (1.0 + 1e-12) {
            return Err(Error::DistanceBeyondRange {
                distance_nm,
                limit_nm: self.max_distance_nm,
            });
        }
        Ok(())
    }

    fn check_frequency(frequency_hz: f64) -> Result<()> {
        if !(frequency_hz > 0.0 && frequency_hz.is_finite()) {
            return Err(Error::param("frequency_hz", "must be finite and > 0"));
        }
        Ok(())
    }
}

/// Emits the stage list for a request.
pub fn build_schedule(req: &ScheduleRequest) -> Result<PulseSchedule> {
    if !(req.lambda_nm > 0.0) {
        return Err(Error::param("lambda_nm", "must be > 0"));
    }
    if !(req.tau_dqd_s >= 0.0 && req.tau_dqd_s.is_finite()) {
        return Err(Error::param("tau_dqd_s", "must be finite and >= 0"));
    }
    let d = &req.durations;
    let mut stages = vec![
        Stage::Load { duration_s: d.load_s },
        Stage::InitI { duration_s: d.init_s },
        Stage::SeparateS,
        Stage::CloseT,
    ];

    if let Motion::ChargeCycle { distance_nm, frequency_hz } = req.motion {
        req.check_distance(distance_nm)?;
        ScheduleRequest::check_frequency(frequency_hz)?;
        if distance_nm == 0.0 {
            return Err(Error::param("distance_nm", "charge cycle needs a non-zero distance"));
        }
        let [out, back] = req.out_and_back(distance_nm, frequency_hz);
        stages.extend([out, Stage::MeasureM, back, Stage::MeasureM]);
        let schedule = PulseSchedule {
            magnetic_field_t: req.magnetic_field_t,
            stages,
        };
        schedule.validate()?;
        return Ok(schedule);
    }

    match req.motion {
        Motion::None | Motion::ChargeCycle { .. } => {}
        Motion::Loop { distance_nm, frequency_hz } => {
            req.check_distance(distance_nm)?;
            if distance_nm > 0.0 {
                ScheduleRequest::check_frequency(frequency_hz)?;
                stages.extend(req.out_and_back(distance_nm, frequency_hz));
            }
        }
        Motion::WaitAt { x_nm, wait_s, frequency_hz } => {
            req.check_distance(x_nm)?;
            if !(wait_s >= 0.0 && wait_s.is_finite()) {
                return Err(Error::param("wait_s", "must be finite and >= 0"));
            }
            if x_nm > 0.0 {
                ScheduleRequest::check_frequency(frequency_hz)?;
                let [out, back] = req.out_and_back(x_nm, frequency_hz);
                stages.push(out);
                stages.push(Stage::WaitAt { x_nm, duration_s: wait_s });
                stages.push(back);
            } else {
                stages.push(Stage::WaitAt { x_nm: 0.0, duration_s: wait_s });
            }
        }
        Motion::Periods { count, frequency_hz } => {
            if count > 0 {
                ScheduleRequest::check_frequency(frequency_hz)?;
                let full = count - count % 2;
                if full > 0 {
                    req.check_distance(req.lambda_nm)?;
                }
                for _ in 0..full / 2 {
                    stages.extend(req.out_and_back(req.lambda_nm, frequency_hz));
                }
                if count % 2 == 1 {
                    req.check_distance(req.lambda_nm / 2.0)?;
                    stages.extend(req.out_and_back(req.lambda_nm / 2.0, frequency_hz));
                }
            }
        }
    }

    stages.push(Stage::SeparateS);
    if req.tau_dqd_s > 0.0 {
        stages.push(Stage::WaitDqd { duration_s: req.tau_dqd_s });
    }
    stages.extend([
        Stage::PsbP { duration_s: d.psb_s },
        Stage::FreezeF,
        Stage::MeasureM,
    ]);
    let schedule = PulseSchedule {
        magnetic_field_t: req.magnetic_field_t,
        stages,
    };
    schedule.validate()?;
    Ok(schedule)
}

/// Where the shuttled electron is during one piece of the coherent window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// Back in the double dot at x = 0 (stage S).
    Dqd,
    /// Moving with the conveyor.
    Shuttle,
    /// Parked at a position along the channel.
    Wait,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub x_start_nm: f64,
    pub x_end_nm: f64,
    pub kind: SegmentKind,
}

impl TrajectorySegment {
    pub fn duration_s(&self) -> f64 {
        self.t_end_s - self.t_start_s
    }

    pub fn is_static(&self) -> bool {
        self.x_start_nm == self.x_end_nm
    }

    pub fn position_at(&self, t_s: f64) -> f64 {
        let dur = self.duration_s();
        if dur == 0.0 {
            return self.x_end_nm;
        }
        let frac = ((t_s - self.t_start_s) / dur).clamp(0.0, 1.0);
        self.x_start_nm + frac * (self.x_end_nm - self.x_start_nm)
    }
}

/// Piecewise-linear x(t) over the coherent window, starting at the first
/// separation stage (t = 0) and ending at PSB conversion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<TrajectorySegment>,
    /// Largest |dx/dt|, f·λ of the fastest segment; 0 without shuttling.
    pub velocity_m_s: f64,
}

impl Trajectory {
    pub fn duration_s(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t_end_s)
    }

    /// Knots `(t_s, x_nm)` of the piecewise-linear path.
    pub fn samples(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0)];
        for s in &self.segments {
            out.push((s.t_end_s, s.x_end_nm));
        }
        out
    }

    pub fn position_at(&self, t_s: f64) -> f64 {
        for s in &self.segments {
            if t_s <= s.t_end_s {
                return s.position_at(t_s);
            }
        }
        self.segments.last().map_or(0.0, |s| s.x_end_nm)
    }

    pub fn max_position_nm(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.x_start_nm.max(s.x_end_nm))
            .fold(0.0, f64::max)
    }

    /// Total time spent moving.
    pub fn shuttle_time_s(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.kind == SegmentKind::Shuttle)
            .map(TrajectorySegment::duration_s)
            .sum()
    }
}

/// Ideal dot trajectory of a validated schedule, x = λΔφ/2π.
pub fn trajectory_of(schedule: &PulseSchedule) -> Result<Trajectory> {
    let kind = schedule.validate()?;
    let start = schedule
        .stages
        .iter()
        .position(|s| matches!(s, Stage::SeparateS))
        .ok_or_else(|| Error::Schedule("no separation stage".into()))?;

    let mut segments = Vec::new();
    let (mut t, mut x, mut vmax) = (0.0_f64, 0.0_f64, 0.0_f64);
    let mut push = |dur: f64, x_end: f64, kind: SegmentKind, t: &mut f64, x: &mut f64| {
        if dur > 0.0 {
            segments.push(TrajectorySegment {
                t_start_s: *t,
                t_end_s: *t + dur,
                x_start_nm: *x,
                x_end_nm: x_end,
                kind,
            });
        }
        *t += dur;
        *x = x_end;
    };
    for stage in &schedule.stages[start..] {
        match stage {
            Stage::Shuttle(seg) => {
                let x_end = seg.lambda_nm * seg.end_phase_rad() / TAU;
                // clamp round-off at the home position
                let x_end = if x_end.abs() < POSITION_TOL_NM { 0.0 } else { x_end };
                vmax = vmax.max(seg.velocity_m_s());
                push(seg.duration_s, x_end, SegmentKind::Shuttle, &mut t, &mut x);
            }
            Stage::WaitAt { duration_s, .. } => {
                push(*duration_s, x, SegmentKind::Wait, &mut t, &mut x);
            }
            Stage::WaitDqd { duration_s } => {
                push(*duration_s, x, SegmentKind::Dqd, &mut t, &mut x);
            }
            Stage::PsbP { .. } if kind == ScheduleKind::Coherent => break,
            _ => {}
        }
    }
    Ok(Trajectory {
        segments,
        velocity_m_s: vmax,
    })
}

/// S1..S4 voltages sampled at `rate_hz` across the coherent window.
pub fn waveform_samples(schedule: &PulseSchedule, rate_hz: f64) -> Result<Vec<[f64; 4]>> {
    if !(rate_hz > 0.0) {
        return Err(Error::param("rate_hz", "must be > 0"));
    }
    let traj = trajectory_of(schedule)?;
    let reference = schedule
        .segments()
        .next()
        .cloned()
        .unwrap_or_else(|| ShuttleSegment::new(MAX_FREQUENCY_HZ, AMPLITUDE_LOWER_V, 0.0, Direction::Forward));

    // (t_start, t_end, driving segment, held phase)
    let start = schedule
        .stages
        .iter()
        .position(|s| matches!(s, Stage::SeparateS))
        .unwrap_or(0);
    let mut pieces: Vec<(f64, f64, Option<&ShuttleSegment>, f64)> = Vec::new();
    let (mut t, mut phase) = (0.0, 0.0);
    for stage in &schedule.stages[start..] {
        let (dur, seg) = match stage {
            Stage::Shuttle(seg) => (seg.duration_s, Some(seg)),
            Stage::WaitAt { duration_s, .. } | Stage::WaitDqd { duration_s } => (*duration_s, None),
            Stage::PsbP { .. } => break,
            _ => (0.0, None),
        };
        if dur > 0.0 {
            pieces.push((t, t + dur, seg, phase));
        }
        if let Some(s) = seg {
            phase = s.end_phase_rad();
        }
        t += dur;
    }

    let n = (traj.duration_s() * rate_hz).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    let mut held_ref = &reference;
    let mut k = 0;
    for i in 0..n {
        let ti = i as f64 / rate_hz;
        while k + 1 < pieces.len() && ti >= pieces[k].1 {
            if let Some(s) = pieces[k].2 {
                held_ref = s;
            }
            k += 1;
        }
        let v = match pieces.get(k) {
            Some(&(t0, t1, Some(seg), _)) if ti >= t0 && ti <= t1 => seg.voltages_at((ti - t0).min(seg.duration_s))?,
            Some(&(_, _, _, hold)) => held_ref.held_voltages(hold),
            None => reference.held_voltages(0.0),
        };
        out.push(v);
    }
    Ok(out)
}

/// Writes `s1_v,s2_v,s3_v,s4_v` rows, sample `i` at `t = i / rate_hz`.
pub fn write_waveform_csv<W: Write>(schedule: &PulseSchedule, rate_hz: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s1_v", "s2_v", "s3_v", "s4_v"])?;
    for v in waveform_samples(schedule, rate_hz)? {
        w.write_record(v.iter().map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<waveform>", e))?;
    Ok(())
}
