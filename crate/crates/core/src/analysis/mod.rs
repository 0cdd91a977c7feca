//! Least-squares fits of the oscillation, decay and motional-narrowing
//! models, and the two-field frequency-ratio report.
//!
//! Times are passed in ns and frequencies in MHz; internally the fits work
//! in µs so that every parameter is of order one.

pub mod lm;
mod narrowing;
mod spectrum;
mod tones;

pub use narrowing::{fit_narrowing, NarrowingFit, NarrowingPoint};
pub use spectrum::{spectral_peaks, SpectralPeak};
pub use tones::{
    fit_gaussian_decay, fit_single_tone, fit_two_tone, single_tone_model, two_tone_model, DecayFit,
    St0SingleToneFit, St0TwoToneFit, ToneFit,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// P_S(τ) series with optional per-point standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationData {
    pub t_ns: Vec<f64>,
    pub p_s: Vec<f64>,
    pub stderr: Option<Vec<f64>>,
}

impl OscillationData {
    pub fn new(t_ns: Vec<f64>, p_s: Vec<f64>, stderr: Option<Vec<f64>>) -> Result<Self> {
        let d = Self { t_ns, p_s, stderr };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_ns.len() != self.p_s.len() {
            return Err(Error::param("p_s", "length differs from t_ns"));
        }
        if let Some(e) = &self.stderr {
            if e.len() != self.t_ns.len() {
                return Err(Error::param("stderr", "length differs from t_ns"));
            }
            if e.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::param("stderr", "entries must be finite and > 0"));
            }
        }
        if self.t_ns.iter().chain(&self.p_s).any(|v| !v.is_finite()) {
            return Err(Error::param("data", "non-finite entry"));
        }
        if self.t_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("t_ns", "must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.t_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ns.is_empty()
    }

    /// Least-squares weights: 1/σ² when errors are present, else 1.
    pub fn weights(&self) -> Vec<f64> {
        match &self.stderr {
            Some(e) => e.iter().map(|s| 1.0 / (s * s)).collect(),
            None => vec![1.0; self.len()],
        }
    }

    pub(crate) fn t_us(&self) -> Vec<f64> {
        self.t_ns.iter().map(|t| t * 1e-3).collect()
    }
}

/// Fitted frequencies of one scan line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub d_nm: f64,
    /// Tone frequencies in ascending order.
    pub nu_mhz: Vec<f64>,
    pub nu_err_mhz: Vec<f64>,
}

impl ScanPoint {
    pub fn from_fit(d_nm: f64, fit: &ToneFit) -> Self {
        let (nu_mhz, nu_err_mhz) = fit.frequencies().into_iter().unzip();
        Self { d_nm, nu_mhz, nu_err_mhz }
    }
}

/// Frequencies fitted along a distance grid at one magnetic field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScan {
    pub b_t: f64,
    pub points: Vec<ScanPoint>,
}

/// ν(B_low)/ν(B_high) for one distance and tone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub d_nm: f64,
    /// 0 for the lower tone, 1 for the upper.
    pub tone: usize,
    pub ratio: f64,
    pub ratio_err: f64,
    pub b_low_t: f64,
    pub b_high_t: f64,
}

/// Pairwise frequency ratios between two scans on the same distance grid.
/// Only tones resolved in both scans are paired.
pub fn frequency_ratio_report(low: &FieldScan, high: &FieldScan) -> Result<Vec<RatioRow>> {
    if low.points.len() != high.points.len() {
        return Err(Error::MismatchedGrids(format!(
            "{} vs {} scan lines",
            low.points.len(),
            high.points.len()
        )));
    }
    let mut rows = Vec::new();
    for (a, b) in low.points.iter().zip(&high.points) {
        if (a.d_nm - b.d_nm).abs() > 1e-9 * (1.0 + a.d_nm.abs()) {
            return Err(Error::MismatchedGrids(format!("d = {} nm vs {} nm", a.d_nm, b.d_nm)));
        }
        for tone in 0..a.nu_mhz.len().min(b.nu_mhz.len()) {
            let (na, nb) = (a.nu_mhz[tone], b.nu_mhz[tone]);
            let ratio = na / nb;
            let rel = ((a.nu_err_mhz[tone] / na).powi(2) + (b.nu_err_mhz[tone] / nb).powi(2)).sqrt();
            rows.push(RatioRow {
                d_nm: a.d_nm,
                tone,
                ratio,
                ratio_err: ratio.abs() * rel,
                b_low_t: low.b_t,
                b_high_t: high.b_t,
            });
        }
    }
    Ok(rows)
}

/// Wraps a phase into (−π, π].
pub fn wrap_phase(phi: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = phi.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}
