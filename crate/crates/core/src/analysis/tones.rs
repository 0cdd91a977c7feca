//! Gaussian-damped one- and two-tone oscillation fits and the bare Gaussian
//! decay fit.
//!
//! The envelope is parametrised by γ = 1/T₂* so that an undamped signal sits
//! at γ = 0 instead of at infinity.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmFit, LmOptions};
use super::spectrum::spectral_peaks;
use super::{wrap_phase, OscillationData};
use crate::error::{Error, Result};

/// Second spectral peak must reach this fraction of the strongest one.
const SECOND_PEAK_RATIO: f64 = 0.1;
/// Fitted tone amplitude below this fraction of the other means no second tone.
const MIN_AMPLITUDE_RATIO: f64 = 1e-3;

/// a·exp(−(t/T₂*)²)·cos(2πνt + φ) + c with t in ns and ν in MHz.
pub fn single_tone_model(t_ns: f64, a: f64, nu_mhz: f64, phi: f64, c: f64, t2_ns: f64) -> f64 {
    let t = t_ns * 1e-3;
    a * (-(t_ns / t2_ns).powi(2)).exp() * (TAU * nu_mhz * t + phi).cos() + c
}

/// Shared-envelope sum of two tones `(a, ν, φ)` plus offset `c`.
pub fn two_tone_model(t_ns: f64, t2_ns: f64, tones: [(f64, f64, f64); 2], c: f64) -> f64 {
    let t = t_ns * 1e-3;
    let env = (-(t_ns / t2_ns).powi(2)).exp();
    env * tones.iter().map(|(a, nu, phi)| a * (TAU * nu * t + phi).cos()).sum::<f64>() + c
}

fn eval_tones(p: &[f64], n_tones: usize, t_us: &[f64], out: &mut [f64]) {
    let c = p[3 * n_tones];
    let gamma = p[3 * n_tones + 1];
    for (o, &t) in out.iter_mut().zip(t_us) {
        let env = (-(gamma * t).powi(2)).exp();
        let mut s = 0.0;
        for k in 0..n_tones {
            s += p[3 * k] * (TAU * p[3 * k + 1] * t + p[3 * k + 2]).cos();
        }
        *o = env * s + c;
    }
}

/// Weighted linear least squares over column vectors; returns coefficients
/// and χ².
fn linear_lsq(cols: &[Vec<f64>], y: &[f64], w: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = y.len();
    let m = cols.len();
    let b = DMatrix::from_fn(n, m, |i, j| cols[j][i] * w[i].sqrt());
    let yw = DVector::from_iterator(n, y.iter().zip(w).map(|(y, w)| y * w.sqrt()));
    let svd = b.clone().svd(true, true);
    let x = svd.solve(&yw, 1e-12 * svd.singular_values.max()).ok()?;
    let r = &yw - &b * &x;
    Some((x.iter().copied().collect(), r.norm_squared()))
}

/// Linear amplitudes for fixed frequencies and envelope; returns
/// `[a₁, ν₁, φ₁, …, c, γ]` and its χ².
fn project(t_us: &[f64], y: &[f64], w: &[f64], nus: &[f64], gamma: f64) -> Option<(Vec<f64>, f64)> {
    let env: Vec<f64> = t_us.iter().map(|t| (-(gamma * t).powi(2)).exp()).collect();
    let mut cols = Vec::with_capacity(2 * nus.len() + 1);
    for &nu in nus {
        cols.push(t_us.iter().zip(&env).map(|(t, e)| e * (TAU * nu * t).cos()).collect());
        cols.push(t_us.iter().zip(&env).map(|(t, e)| -e * (TAU * nu * t).sin()).collect());
    }
    cols.push(vec![1.0; t_us.len()]);
    let (x, cost) = linear_lsq(&cols, y, w)?;
    let mut p = Vec::with_capacity(3 * nus.len() + 2);
    for (k, &nu) in nus.iter().enumerate() {
        let (ca, sb) = (x[2 * k], x[2 * k + 1]);
        p.extend([ca.hypot(sb), nu, sb.atan2(ca)]);
    }
    p.push(x[2 * nus.len()]);
    p.push(gamma);
    Some((p, cost))
}

fn gamma_starts(span_us: f64) -> Vec<f64> {
    let mut g = vec![0.0];
    g.extend([0.25, 0.5, 1.0, 2.0, 4.0].iter().map(|k| 1.0 / (k * span_us)));
    g
}

/// Best LM optimum over several starting points.
fn multistart(
    t_us: &[f64],
    data: &OscillationData,
    n_tones: usize,
    starts: Vec<Vec<f64>>,
) -> Result<LmFit> {
    let w = data.weights();
    let mut best: Option<LmFit> = None;
    let mut last_err = None;
    for p0 in starts {
        let model = |p: &[f64], out: &mut [f64]| eval_tones(p, n_tones, t_us, out);
        match levenberg_marquardt(model, &data.p_s, &w, &p0, &LmOptions::default()) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NonConvergence("no starting point".into())))
}

/// Report-space parameters: each tone `(a ≥ 0, ν ≥ 0, φ ∈ (−π, π])`,
/// then c and T₂* in ns, with the diagonal Jacobian of that map.
fn normalise(p: &[f64], n_tones: usize) -> (Vec<f64>, Vec<f64>) {
    let mut q = p.to_vec();
    let mut jac = vec![1.0; p.len()];
    for k in 0..n_tones {
        let (ia, inu, iphi) = (3 * k, 3 * k + 1, 3 * k + 2);
        if q[inu] < 0.0 {
            q[inu] = -q[inu];
            q[iphi] = -q[iphi];
            jac[inu] = -1.0;
            jac[iphi] = -jac[iphi];
        }
        if q[ia] < 0.0 {
            q[ia] = -q[ia];
            q[iphi] += PI;
            jac[ia] = -1.0;
        }
        q[iphi] = wrap_phase(q[iphi]);
    }
    let ig = 3 * n_tones + 1;
    let gamma = p[ig];
    if gamma == 0.0 {
        q[ig] = f64::INFINITY;
        jac[ig] = f64::INFINITY;
    } else {
        q[ig] = 1e3 / gamma.abs();
        jac[ig] = -1e3 * gamma.signum() / (gamma * gamma);
    }
    (q, jac)
}

fn transformed_covariance(cov: &DMatrix<f64>, jac: &[f64], order: &[usize]) -> Vec<Vec<f64>> {
    order
        .iter()
        .map(|&i| {
            order
                .iter()
                .map(|&j| {
                    let v = jac[i] * cov[(i, j)] * jac[j];
                    if v.is_nan() && (jac[i].is_infinite() || jac[j].is_infinite()) {
                        f64::INFINITY
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect()
}

fn residual_rms(t_us: &[f64], data: &OscillationData, p: &[f64], n_tones: usize) -> f64 {
    let mut f = vec![0.0; t_us.len()];
    eval_tones(p, n_tones, t_us, &mut f);
    (f.iter().zip(&data.p_s).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / f.len() as f64).sqrt()
}

fn check_data(data: &OscillationData, n_params: usize) -> Result<()> {
    data.validate()?;
    if data.len() <= n_params {
        return Err(Error::DegenerateDesign(format!(
            "{} points for {n_params} parameters",
            data.len()
        )));
    }
    Ok(())
}

/// Single-tone fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct St0SingleToneFit {
    pub a: f64,
    pub nu_mhz: f64,
    pub phi_rad: f64,
    pub c: f64,
    pub t2_star_ns: f64,
    pub a_err: f64,
    pub nu_err_mhz: f64,
    pub phi_err_rad: f64,
    pub c_err: f64,
    pub t2_star_err_ns: f64,
    /// Order: a, ν, φ, c, T₂*.
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    /// Cost after every accepted optimizer step.
    pub cost_trace: Vec<f64>,
}

impl St0SingleToneFit {
    fn from_lm(fit: &LmFit, t_us: &[f64], data: &OscillationData) -> Self {
        let (q, jac) = normalise(&fit.params, 1);
        let cov = transformed_covariance(&fit.covariance(data.stderr.is_none()), &jac, &[0, 1, 2, 3, 4]);
        let err = |i: usize| cov[i][i].sqrt();
        Self {
            a: q[0],
            nu_mhz: q[1],
            phi_rad: q[2],
            c: q[3],
            t2_star_ns: q[4],
            a_err: err(0),
            nu_err_mhz: err(1),
            phi_err_rad: err(2),
            c_err: err(3),
            t2_star_err_ns: err(4),
            residual_rms: residual_rms(t_us, data, &fit.params, 1),
            covariance: cov,
            reduced_chi2: fit.reduced_chi2(),
            iterations: fit.iterations,
            cost_trace: fit.trace.clone(),
        }
    }

    pub fn eval(&self, t_ns: f64) -> f64 {
        single_tone_model(t_ns, self.a, self.nu_mhz, self.phi_rad, self.c, self.t2_star_ns)
    }
}

/// Two-tone fit result with ν_lt ≤ ν_gt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct St0TwoToneFit {
    pub t2_star_ns: f64,
    pub a_lt: f64,
    pub a_gt: f64,
    pub nu_lt_mhz: f64,
    pub nu_gt_mhz: f64,
    pub phi_lt_rad: f64,
    pub phi_gt_rad: f64,
    pub c: f64,
    pub t2_star_err_ns: f64,
    pub a_lt_err: f64,
    pub a_gt_err: f64,
    pub nu_lt_err_mhz: f64,
    pub nu_gt_err_mhz: f64,
    pub phi_lt_err_rad: f64,
    pub phi_gt_err_rad: f64,
    pub c_err: f64,
    /// Order: a_lt, ν_lt, φ_lt, a_gt, ν_gt, φ_gt, c, T₂*.
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub reduced_chi2: f64,
    pub iterations: usize,
    pub cost_trace: Vec<f64>,
}

impl St0TwoToneFit {
    fn from_lm(fit: &LmFit, t_us: &[f64], data: &OscillationData) -> Self {
        let (q, jac) = normalise(&fit.params, 2);
        let order: [usize; 8] = if q[1] <= q[4] {
            [0, 1, 2, 3, 4, 5, 6, 7]
        } else {
            [3, 4, 5, 0, 1, 2, 6, 7]
        };
        let cov = transformed_covariance(&fit.covariance(data.stderr.is_none()), &jac, &order);
        let v = |k: usize| q[order[k]];
        let err = |k: usize| cov[k][k].sqrt();
        Self {
            a_lt: v(0),
            nu_lt_mhz: v(1),
            phi_lt_rad: v(2),
            a_gt: v(3),
            nu_gt_mhz: v(4),
            phi_gt_rad: v(5),
            c: v(6),
            t2_star_ns: v(7),
            a_lt_err: err(0),
            nu_lt_err_mhz: err(1),
            phi_lt_err_rad: err(2),
            a_gt_err: err(3),
            nu_gt_err_mhz: err(4),
            phi_gt_err_rad: err(5),
            c_err: err(6),
            t2_star_err_ns: err(7),
            residual_rms: residual_rms(t_us, data, &fit.params, 2),
            covariance: cov,
            reduced_chi2: fit.reduced_chi2(),
            iterations: fit.iterations,
            cost_trace: fit.trace.clone(),
        }
    }

    pub fn eval(&self, t_ns: f64) -> f64 {
        two_tone_model(
            t_ns,
            self.t2_star_ns,
            [
                (self.a_lt, self.nu_lt_mhz, self.phi_lt_rad),
                (self.a_gt, self.nu_gt_mhz, self.phi_gt_rad),
            ],
            self.c,
        )
    }
}

/// Outcome of [`fit_two_tone`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ToneFit {
    Two(St0TwoToneFit),
    /// Fewer than two resolvable tones; a single-tone fit was used.
    SingleFallback(St0SingleToneFit),
}

impl ToneFit {
    pub fn is_fallback(&self) -> bool {
        matches!(self, ToneFit::SingleFallback(_))
    }

    /// `(ν, σ_ν)` per tone in ascending frequency.
    pub fn frequencies(&self) -> Vec<(f64, f64)> {
        match self {
            ToneFit::Two(f) => vec![(f.nu_lt_mhz, f.nu_lt_err_mhz), (f.nu_gt_mhz, f.nu_gt_err_mhz)],
            ToneFit::SingleFallback(f) => vec![(f.nu_mhz, f.nu_err_mhz)],
        }
    }

    pub fn t2_star_ns(&self) -> (f64, f64) {
        match self {
            ToneFit::Two(f) => (f.t2_star_ns, f.t2_star_err_ns),
            ToneFit::SingleFallback(f) => (f.t2_star_ns, f.t2_star_err_ns),
        }
    }

    pub fn eval(&self, t_ns: f64) -> f64 {
        match self {
            ToneFit::Two(f) => f.eval(t_ns),
            ToneFit::SingleFallback(f) => f.eval(t_ns),
        }
    }
}

/// P_S(t) = a·exp(−(t/T₂*)²)·cos(2πνt + φ) + c.
pub fn fit_single_tone(data: &OscillationData) -> Result<St0SingleToneFit> {
    check_data(data, 5)?;
    let t_us = data.t_us();
    let span = t_us[t_us.len() - 1] - t_us[0];
    let w = data.weights();
    let peaks = spectral_peaks(&data.t_ns, &data.p_s);
    let mut nus: Vec<f64> = peaks.iter().take(1).map(|p| p.frequency_mhz).collect();
    if nus.is_empty() {
        nus.push(1.0 / span);
    }
    let mut starts = Vec::new();
    for &nu in &nus {
        for g in gamma_starts(span) {
            if let Some((p, _)) = project(&t_us, &data.p_s, &w, &[nu], g) {
                starts.push(p);
            }
        }
    }
    let fit = multistart(&t_us, data, 1, starts)?;
    Ok(St0SingleToneFit::from_lm(&fit, &t_us, data))
}

/// Two tones under one Gaussian envelope, seeded from the two strongest
/// spectral peaks. Falls back to a single tone when the spectrum or the fit
/// resolves only one.
pub fn fit_two_tone(data: &OscillationData) -> Result<ToneFit> {
    check_data(data, 8)?;
    let t_us = data.t_us();
    let span = t_us[t_us.len() - 1] - t_us[0];
    let w = data.weights();
    let peaks = spectral_peaks(&data.t_ns, &data.p_s);
    let resolved = peaks.len() >= 2 && peaks[1].magnitude >= SECOND_PEAK_RATIO * peaks[0].magnitude;
    if !resolved {
        return fit_single_tone(data).map(ToneFit::SingleFallback);
    }
    let pair = [peaks[0].frequency_mhz, peaks[1].frequency_mhz];
    let starts: Vec<Vec<f64>> = gamma_starts(span)
        .into_iter()
        .filter_map(|g| project(&t_us, &data.p_s, &w, &pair, g).map(|(p, _)| p))
        .collect();
    let fit = match multistart(&t_us, data, 2, starts) {
        Ok(f) => f,
        Err(_) => return fit_single_tone(data).map(ToneFit::SingleFallback),
    };
    let two = St0TwoToneFit::from_lm(&fit, &t_us, data);
    let amp_max = two.a_lt.max(two.a_gt);
    let merged = (two.nu_gt_mhz - two.nu_lt_mhz) * span < 0.25;
    if two.a_lt.min(two.a_gt) < MIN_AMPLITUDE_RATIO * amp_max || merged {
        return fit_single_tone(data).map(ToneFit::SingleFallback);
    }
    Ok(ToneFit::Two(two))
}

/// Non-oscillating Gaussian decay fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub c: f64,
    pub t2_star_ns: f64,
    pub a_err: f64,
    pub c_err: f64,
    pub t2_star_err_ns: f64,
    /// Order: a, c, T₂*.
    pub covariance: Vec<Vec<f64>>,
    pub residual_rms: f64,
    pub reduced_chi2: f64,
    pub cost_trace: Vec<f64>,
}

/// P(t) = a·exp(−(t/T₂*)²) + c.
pub fn fit_gaussian_decay(data: &OscillationData) -> Result<DecayFit> {
    check_data(data, 3)?;
    let t_us = data.t_us();
    let span = t_us[t_us.len() - 1] - t_us[0];
    let w = data.weights();
    let model = |p: &[f64], out: &mut [f64]| {
        for (o, t) in out.iter_mut().zip(&t_us) {
            *o = p[0] * (-(p[2] * t).powi(2)).exp() + p[1];
        }
    };
    let mut best: Option<LmFit> = None;
    let mut last_err = None;
    for g in gamma_starts(span).into_iter().skip(1) {
        let env: Vec<f64> = t_us.iter().map(|t| (-(g * t).powi(2)).exp()).collect();
        let Some((x, _)) = linear_lsq(&[env, vec![1.0; t_us.len()]], &data.p_s, &w) else {
            continue;
        };
        match levenberg_marquardt(model, &data.p_s, &w, &[x[0], x[1], g], &LmOptions::default()) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.cost < b.cost) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let fit = best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NonConvergence("no starting point".into())))?;
    let p = &fit.params;
    let gamma = p[2];
    let (t2, dt2) = if gamma == 0.0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        (1e3 / gamma.abs(), -1e3 * gamma.signum() / (gamma * gamma))
    };
    let jac = [1.0, 1.0, dt2];
    let cov = transformed_covariance(&fit.covariance(data.stderr.is_none()), &jac, &[0, 1, 2]);
    let mut f = vec![0.0; t_us.len()];
    model(p, &mut f);
    let rms = (f.iter().zip(&data.p_s).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / f.len() as f64).sqrt();
    Ok(DecayFit {
        a: p[0],
        c: p[1],
        t2_star_ns: t2,
        a_err: cov[0][0].sqrt(),
        c_err: cov[1][1].sqrt(),
        t2_star_err_ns: cov[2][2].sqrt(),
        covariance: cov,
        residual_rms: rms,
        reduced_chi2: fit.reduced_chi2(),
        cost_trace: fit.trace.clone(),
    })
}
