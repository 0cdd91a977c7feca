use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("position {x_nm} nm outside channel [0, {length_nm}] nm")]
    OutOfRange { x_nm: f64, length_nm: f64 },

    #[error("step too large: |H|·dt/ħ = {phase:.4} rad exceeds {limit} rad")]
    StepTooLarge { phase: f64, limit: f64 },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("distance {distance_nm} nm exceeds usable shuttle range {limit_nm} nm")]
    DistanceBeyondRange { distance_nm: f64, limit_nm: f64 },

    #[error("histogram is not bimodal: {0}")]
    Unimodal(String),

    #[error("threshold {threshold} not between component means {lower} and {upper}")]
    CrossingOutsideMeans { threshold: f64, lower: f64, upper: f64 },

    #[error("cycle {0} is missing a forward or return measurement")]
    UnpairedCycle(u64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("fit did not converge: {0}")]
    NonConvergence(String),

    #[error("degenerate fit design: {0}")]
    DegenerateDesign(String),

    #[error("mismatched scan grids: {0}")]
    MismatchedGrids(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
