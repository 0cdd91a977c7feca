//! Experiment configuration file and its validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shuttlesim_core::pulsegen::{
    AMPLITUDE_LOWER_V, LAMBDA_NM, MAX_FREQUENCY_HZ, SHUTTLE_OFFSETS_V, SHUTTLE_PHASES_RAD, USABLE_RANGE_NM,
};
use shuttlesim_core::readout::MIN_THRESHOLD_SHOTS;
use shuttlesim_core::spinsim::MIN_REALIZATIONS;
use shuttlesim_core::{
    CurrentModel, DisorderSpec, EnsembleConfig, ExchangeModel, LegSuccessModel, ScheduleRequest, SecondTone,
    SpamRates, StageDurations,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// P_S against the wait τ_DQD with both electrons in the double dot.
    St0Dqd,
    /// P_S over shuttle distance d and total shuttle time τ_S.
    CoherentShuttleMap,
    /// P_S over parking position x and wait τ_W.
    WaitMap,
    /// P_S against τ_DQD after D shuttled periods.
    LongDistance,
    /// Charge-shuttle fidelity over drive amplitude and frequency.
    ChargeFidelityScan,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::St0Dqd => "st0_dqd",
            ExperimentKind::CoherentShuttleMap => "coherent_shuttle_map",
            ExperimentKind::WaitMap => "wait_map",
            ExperimentKind::LongDistance => "long_distance",
            ExperimentKind::ChargeFidelityScan => "charge_fidelity_scan",
        }
    }
}

/// A scan axis: explicit values, a stepped range or an evenly spaced grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    Values(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
    Linspace { start: f64, stop: f64, count: usize },
}

impl Axis {
    /// Expanded axis values; empty when the description is invalid.
    pub fn values(&self) -> Vec<f64> {
        match *self {
            Axis::Values(ref v) => v.clone(),
            Axis::Range { start, stop, step } => {
                if !(step > 0.0 && start.is_finite() && stop.is_finite()) || stop < start {
                    return Vec::new();
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| start + k as f64 * step).collect()
            }
            Axis::Linspace { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![start],
                _ => (0..count)
                    .map(|k| start + (stop - start) * k as f64 / (count - 1) as f64)
                    .collect(),
            },
        }
    }
}

fn default_frequency() -> f64 {
    MAX_FREQUENCY_HZ
}

fn default_amplitude() -> f64 {
    AMPLITUDE_LOWER_V
}

fn default_true() -> bool {
    true
}

fn default_offsets() -> [f64; 4] {
    SHUTTLE_OFFSETS_V
}

fn default_phases() -> [f64; 4] {
    SHUTTLE_PHASES_RAD
}

fn default_lambda() -> f64 {
    LAMBDA_NM
}

fn default_max_distance() -> f64 {
    USABLE_RANGE_NM
}

/// Shuttle drive defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseConfig {
    #[serde(default = "default_frequency")]
    pub frequency_hz: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude_lower_v: f64,
    #[serde(default = "default_true")]
    pub cross_talk_compensation: bool,
    #[serde(default = "default_offsets")]
    pub offsets_v: [f64; 4],
    #[serde(default = "default_phases")]
    pub phases_rad: [f64; 4],
    #[serde(default = "default_lambda")]
    pub lambda_nm: f64,
    /// Usable one-way range; the default is 1.2λ.
    #[serde(default = "default_max_distance")]
    pub max_distance_nm: f64,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            frequency_hz: default_frequency(),
            amplitude_lower_v: default_amplitude(),
            cross_talk_compensation: true,
            offsets_v: default_offsets(),
            phases_rad: default_phases(),
            lambda_nm: default_lambda(),
            max_distance_nm: default_max_distance(),
        }
    }
}

/// Scan axes; which ones are required depends on the experiment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// τ_DQD for `st0_dqd` and `long_distance`, τ_S for `coherent_shuttle_map`.
    pub tau_ns: Option<Axis>,
    pub d_nm: Option<Axis>,
    pub x_nm: Option<Axis>,
    pub tau_w_ns: Option<Axis>,
    pub u_lower_v: Option<Axis>,
    pub frequency_hz: Option<Axis>,
    /// D, the number of periods shuttled forward plus backward.
    pub periods: Option<Vec<u32>>,
    /// Magnetic fields; defaults to `magnetic_field_t`.
    pub b_t: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleOptions {
    pub static_left_t2_ns: Option<f64>,
    pub second_tone: Option<SecondTone>,
    #[serde(default)]
    pub freeze_dg: bool,
    #[serde(default)]
    pub exchange: ExchangeModel,
    pub step_s: Option<f64>,
}

fn default_calibration_shots() -> u64 {
    20_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    #[serde(default)]
    pub current: CurrentModel,
    #[serde(default)]
    pub spam: SpamRates,
    /// Shots in the 50/50 reference histogram that sets the threshold.
    #[serde(default = "default_calibration_shots")]
    pub calibration_shots: u64,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self {
            current: CurrentModel::default(),
            spam: SpamRates::default(),
            calibration_shots: default_calibration_shots(),
        }
    }
}

fn default_label() -> String {
    "default".into()
}

fn default_shots() -> i64 {
    50_000
}

fn default_realizations() -> usize {
    1000
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Name of the run directory below `<output_dir>/<experiment>/`.
    #[serde(default = "default_label")]
    pub label: String,
    pub magnetic_field_t: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_shots")]
    pub shots_per_point: i64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub disorder: DisorderSpec,
    #[serde(default)]
    pub pulse: PulseConfig,
    #[serde(default)]
    pub durations: StageDurations,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub ensemble: EnsembleOptions,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub charge: LegSuccessModel,
}

/// One problem found in a configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub key: String,
    pub message: String,
    /// 1-based line and column for parse and schema errors.
    pub position: Option<(usize, usize)>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.position {
            Some((line, col)) => write!(f, "{}:{}: {}: {}", line, col, self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

fn violation(key: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        key: key.into(),
        message: message.into(),
        position: None,
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl ExperimentConfig {
    /// Parses a TOML document; parse and schema errors carry line and column.
    pub fn parse(text: &str) -> Result<Self, Violation> {
        toml::from_str(text).map_err(|e| {
            let position = e.span().map(|s| line_col(text, s.start));
            let key = if position.is_some() && e.message().contains("unknown field") {
                "schema"
            } else if text.parse::<toml::Table>().is_err() {
                "syntax"
            } else {
                "schema"
            };
            Violation {
                key: key.into(),
                message: e.message().trim().to_string(),
                position,
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
        Self::parse(&text).map_err(LoadError::Invalid)
    }

    pub fn fields(&self) -> Vec<f64> {
        self.scan.b_t.clone().unwrap_or_else(|| vec![self.magnetic_field_t])
    }

    pub fn axis(&self, axis: &Option<Axis>) -> Vec<f64> {
        axis.as_ref().map(Axis::values).unwrap_or_default()
    }

    pub fn shots(&self) -> u64 {
        self.shots_per_point.max(0) as u64
    }

    pub fn schedule_request(&self, b_t: f64) -> ScheduleRequest {
        ScheduleRequest {
            magnetic_field_t: b_t,
            amplitude_lower_v: self.pulse.amplitude_lower_v,
            cross_talk_compensation: self.pulse.cross_talk_compensation,
            offsets_v: self.pulse.offsets_v,
            phases_rad: self.pulse.phases_rad,
            lambda_nm: self.pulse.lambda_nm,
            durations: self.durations,
            max_distance_nm: self.pulse.max_distance_nm,
            ..ScheduleRequest::default()
        }
    }

    pub fn ensemble_config(&self) -> EnsembleConfig {
        EnsembleConfig {
            disorder: self.disorder.clone(),
            realizations: self.realizations,
            master_seed: self.master_seed,
            static_left_t2_ns: self.ensemble.static_left_t2_ns,
            second_tone: self.ensemble.second_tone,
            freeze_dg: self.ensemble.freeze_dg,
            exchange: self.ensemble.exchange,
            step_s: self.ensemble.step_s,
        }
    }

    /// Every range and physics violation; empty for a runnable config.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, key: &str, message: String| {
            if !ok {
                out.push(violation(key, message));
            }
        };

        check(
            self.magnetic_field_t > 0.0 && self.magnetic_field_t.is_finite(),
            "magnetic_field_t",
            format!("{} T must be finite and > 0", self.magnetic_field_t),
        );
        check(
            self.shots_per_point >= 1,
            "shots_per_point",
            format!("{} must be >= 1", self.shots_per_point),
        );
        check(
            !self.label.is_empty() && !self.label.contains(['/', '\\']) && self.label != ".." && self.label != ".",
            "label",
            format!("{:?} must be a plain directory name", self.label),
        );
        if self.experiment != ExperimentKind::ChargeFidelityScan {
            check(
                self.realizations >= MIN_REALIZATIONS,
                "realizations",
                format!("{} < {MIN_REALIZATIONS}", self.realizations),
            );
            if let Err(e) = self.disorder.validate() {
                check(false, "disorder", e.to_string());
            }
            let options = EnsembleConfig {
                disorder: DisorderSpec::default(),
                realizations: MIN_REALIZATIONS,
                ..self.ensemble_config()
            };
            if let Err(e) = options.validate() {
                check(false, "ensemble", e.to_string());
            }
        }
        for b in self.scan.b_t.iter().flatten() {
            check(b.is_finite() && *b > 0.0, "scan.b_t", format!("{b} T must be finite and > 0"));
        }
        if let Some(b) = &self.scan.b_t {
            let mut sorted = b.clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                check(false, "scan.b_t", "fields must be distinct".into());
            }
        }
        if self.scan.b_t.as_ref().is_some_and(Vec::is_empty) {
            check(false, "scan.b_t", "must not be empty".into());
        }

        let p = &self.pulse;
        check(
            p.frequency_hz > 0.0 && p.frequency_hz.is_finite(),
            "pulse.frequency_hz",
            format!("{} must be finite and > 0", p.frequency_hz),
        );
        check(
            p.amplitude_lower_v > 0.0 && p.amplitude_lower_v.is_finite(),
            "pulse.amplitude_lower_v",
            format!("{} must be finite and > 0", p.amplitude_lower_v),
        );
        check(
            p.lambda_nm > 0.0 && p.lambda_nm.is_finite(),
            "pulse.lambda_nm",
            format!("{} must be finite and > 0", p.lambda_nm),
        );
        check(
            p.max_distance_nm > 0.0 && p.max_distance_nm.is_finite(),
            "pulse.max_distance_nm",
            format!("{} must be finite and > 0", p.max_distance_nm),
        );
        for (name, v) in [
            ("durations.load_s", self.durations.load_s),
            ("durations.init_s", self.durations.init_s),
            ("durations.psb_s", self.durations.psb_s),
        ] {
            check(v >= 0.0 && v.is_finite(), name, format!("{v} must be finite and >= 0"));
        }

        let r = &self.readout;
        if let Err(e) = r.current.validate() {
            check(false, "readout.current", e.to_string());
        }
        for (name, v) in [
            ("readout.spam.false_singlet", r.spam.false_singlet),
            ("readout.spam.false_triplet", r.spam.false_triplet),
        ] {
            check((0.0..=1.0).contains(&v), name, format!("{v} must lie in [0, 1]"));
        }
        check(
            r.calibration_shots >= MIN_THRESHOLD_SHOTS as u64,
            "readout.calibration_shots",
            format!("{} < {MIN_THRESHOLD_SHOTS}", r.calibration_shots),
        );

        let mut axis = |name: &str, axis: &Option<Axis>, lo: f64, hi: f64, unit: &str, bound: &str| {
            let key = format!("scan.{name}");
            let Some(a) = axis else {
                out.push(violation(&key, format!("required by experiment {}", self.experiment.name())));
                return;
            };
            let values = a.values();
            if values.is_empty() {
                out.push(violation(&key, "scan range is empty"));
            }
            if values.windows(2).any(|w| w[1] <= w[0]) {
                out.push(violation(&key, "values must be strictly increasing"));
            }
            for v in values {
                if !v.is_finite() || v < lo {
                    out.push(violation(&key, format!("{v} {unit} is below {lo} {unit}")));
                } else if v > hi {
                    out.push(violation(&key, format!("{v} {unit} exceeds {bound}")));
                }
            }
        };
        let range = p.max_distance_nm;
        let usable = format!("the usable range of {range} nm (1.2λ)");
        match self.experiment {
            ExperimentKind::St0Dqd => {
                axis("tau_ns", &self.scan.tau_ns, 0.0, f64::INFINITY, "ns", "");
            }
            ExperimentKind::CoherentShuttleMap => {
                axis("tau_ns", &self.scan.tau_ns, 0.0, f64::INFINITY, "ns", "");
                axis("d_nm", &self.scan.d_nm, 0.0, range, "nm", &usable);
            }
            ExperimentKind::WaitMap => {
                axis("x_nm", &self.scan.x_nm, 0.0, range, "nm", &usable);
                axis("tau_w_ns", &self.scan.tau_w_ns, 0.0, f64::INFINITY, "ns", "");
            }
            ExperimentKind::LongDistance => {
                axis("tau_ns", &self.scan.tau_ns, 0.0, f64::INFINITY, "ns", "");
                match &self.scan.periods {
                    None => out.push(violation("scan.periods", "required by experiment long_distance")),
                    Some(v) if v.is_empty() => out.push(violation("scan.periods", "scan range is empty")),
                    Some(v) => {
                        if v.iter().any(|&d| d >= 2) && p.lambda_nm > range {
                            out.push(violation(
                                "scan.periods",
                                format!("a full period of {} nm exceeds {usable}", p.lambda_nm),
                            ));
                        }
                    }
                }
            }
            ExperimentKind::ChargeFidelityScan => {
                axis("u_lower_v", &self.scan.u_lower_v, 0.0, f64::INFINITY, "V", "");
                axis("frequency_hz", &self.scan.frequency_hz, f64::MIN_POSITIVE, f64::INFINITY, "Hz", "");
                if let Err(e) = self.charge.validate() {
                    out.push(violation("charge", e.to_string()));
                }
            }
        }

        if self.experiment != ExperimentKind::ChargeFidelityScan {
            let reach = match self.experiment {
                ExperimentKind::CoherentShuttleMap => self.axis(&self.scan.d_nm).into_iter().fold(0.0, f64::max),
                ExperimentKind::WaitMap => self.axis(&self.scan.x_nm).into_iter().fold(0.0, f64::max),
                ExperimentKind::LongDistance => match &self.scan.periods {
                    Some(v) if v.iter().any(|&d| d >= 2) => p.lambda_nm,
                    Some(v) if !v.is_empty() => p.lambda_nm / 2.0,
                    _ => 0.0,
                },
                _ => 0.0,
            };
            if reach.is_finite() && reach > self.disorder.channel_length_nm {
                out.push(violation(
                    "disorder.channel_length_nm",
                    format!(
                        "{} nm is shorter than the farthest position {reach} nm",
                        self.disorder.channel_length_nm
                    ),
                ));
            }
        }
        out
    }
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Invalid(Violation),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            LoadError::Invalid(v) => v.fmt(f),
        }
    }
}
