//! Shot-level SET-current readout: simulation, crossing-point threshold,
//! classification, charge-shuttle fidelity and singlet fraction.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::lm::{levenberg_marquardt, LmOptions};
use crate::error::{Error, Result};
use crate::seed;
use crate::spinsim::PsEstimate;

/// Electron filling of the detector dot under P1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Filling {
    #[serde(rename = "three_electrons")]
    Three,
    #[serde(rename = "four_electrons")]
    Four,
}

/// Measurement point a shot belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShotStage {
    /// Stage M after the forward shuttle leg.
    MAfterForward,
    /// Stage M after the return leg.
    MAfterReturn,
    /// Stage M after PSB conversion and freeze in a spin experiment.
    SpinReadout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    #[serde(rename = "cycle")]
    pub cycle_index: u64,
    pub stage: ShotStage,
    pub i_set: f64,
    /// Simulation ground truth, absent for measured data.
    pub truth: Option<Filling>,
}

/// Truth-conditional Gaussian SET currents (arbitrary units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurrentModel {
    pub mu3: f64,
    pub sigma3: f64,
    pub mu4: f64,
    pub sigma4: f64,
}

impl Default for CurrentModel {
    /// Peaks 8σ₃ apart with the narrower four-electron peak.
    fn default() -> Self {
        Self {
            mu3: 1.0,
            sigma3: 0.125,
            mu4: 0.0,
            sigma4: 0.1,
        }
    }
}

impl CurrentModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma3 >= 0.0 && self.sigma4 >= 0.0) {
            return Err(Error::param("sigma", "current widths must be >= 0"));
        }
        if !(self.mu3.is_finite() && self.mu4.is_finite()) || self.mu3 == self.mu4 {
            return Err(Error::param("mu", "current means must be finite and distinct"));
        }
        Ok(())
    }

    pub fn params(&self, truth: Filling) -> (f64, f64) {
        match truth {
            Filling::Three => (self.mu3, self.sigma3),
            Filling::Four => (self.mu4, self.sigma4),
        }
    }

    /// Whether the four-electron current lies below the three-electron one.
    pub fn four_below(&self) -> bool {
        self.mu4 < self.mu3
    }
}

/// Draws one SET current for `truth`.
pub fn simulate_shot(cycle_index: u64, stage: ShotStage, truth: Filling, model: &CurrentModel, seed: u64) -> ShotRecord {
    let (mu, sigma) = model.params(truth);
    let i_set = if sigma == 0.0 {
        mu
    } else {
        let z: f64 = seed::rng(seed).sample(StandardNormal);
        mu + sigma * z
    };
    ShotRecord {
        cycle_index,
        stage,
        i_set,
        truth: Some(truth),
    }
}

/// Two shots per cycle for the out-and-back charge benchmark.
///
/// The forward leg leaves three electrons in the detector dot with
/// probability `p_forward`; a returned electron restores four with
/// probability `p_return`. A cycle whose forward leg fails keeps four.
pub fn simulate_charge_cycles(
    n_cycles: u64,
    p_forward: f64,
    p_return: f64,
    model: &CurrentModel,
    master_seed: u64,
) -> Result<Vec<ShotRecord>> {
    model.validate()?;
    for (name, p) in [("p_forward", p_forward), ("p_return", p_return)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::param(name, "must lie in [0, 1]"));
        }
    }
    let shots: Vec<[ShotRecord; 2]> = (0..n_cycles)
        .into_par_iter()
        .map(|c| {
            let base = seed::derive(master_seed, seed::DOMAIN_SHOT, c);
            let mut rng = seed::rng(base);
            let left = rng.random::<f64>() < p_forward;
            let back = left && rng.random::<f64>() < p_return;
            let first = if left { Filling::Three } else { Filling::Four };
            let second = if !left || back { Filling::Four } else { Filling::Three };
            [
                simulate_shot(c, ShotStage::MAfterForward, first, model, seed::derive(base, 1, 0)),
                simulate_shot(c, ShotStage::MAfterReturn, second, model, seed::derive(base, 2, 0)),
            ]
        })
        .collect();
    Ok(shots.into_iter().flatten().collect())
}

/// Spin-to-charge conversion error rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpamRates {
    /// Triplet read as singlet.
    #[serde(default)]
    pub false_singlet: f64,
    /// Singlet read as triplet.
    #[serde(default)]
    pub false_triplet: f64,
}

/// `n` spin-readout shots for singlet probability `p_singlet`. A singlet
/// converts to (4,0), a blocked triplet stays (3,1). Cycle indices start at
/// `first_cycle`.
pub fn simulate_spin_shots(
    n: u64,
    p_singlet: f64,
    spam: &SpamRates,
    model: &CurrentModel,
    first_cycle: u64,
    seed_value: u64,
) -> Result<Vec<ShotRecord>> {
    model.validate()?;
    if !(0.0..=1.0).contains(&p_singlet) {
        return Err(Error::param("p_singlet", "must lie in [0, 1]"));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|k| {
            let base = seed::derive(seed_value, seed::DOMAIN_SHOT, k);
            let mut rng = seed::rng(base);
            let singlet = rng.random::<f64>() < p_singlet;
            let flip = rng.random::<f64>()
                < if singlet {
                    spam.false_triplet
                } else {
                    spam.false_singlet
                };
            let truth = if singlet != flip { Filling::Four } else { Filling::Three };
            simulate_shot(first_cycle + k, ShotStage::SpinReadout, truth, model, seed::derive(base, 1, 0))
        })
        .collect())
}

/// One weighted Gaussian a·N(x; μ, σ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub amplitude: f64,
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianComponent {
    pub fn eval(&self, x: f64) -> f64 {
        let z = (x - self.mean) / self.sigma;
        self.amplitude * (-0.5 * z * z).exp() / (self.sigma * (std::f64::consts::TAU).sqrt())
    }
}

/// Binned currents with the fitted two-Gaussian mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    /// Ordered by mean.
    pub fitted: [GaussianComponent; 2],
    pub threshold: f64,
}

impl SetHistogram {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Smallest number of shots accepted by [`fit_threshold`].
pub const MIN_THRESHOLD_SHOTS: usize = 1000;
const MIN_BINS: usize = 40;
const MAX_BINS: usize = 4000;

/// Crossing point of a₁N(x;μ₁,σ₁) = a₂N(x;μ₂,σ₂) between the two means.
pub fn crossing_point(lo: &GaussianComponent, hi: &GaussianComponent) -> Result<f64> {
    let (m1, s1, m2, s2) = (lo.mean, lo.sigma, hi.mean, hi.sigma);
    // ln a1 - ln s1 - (x-m1)²/2s1² = ln a2 - ln s2 - (x-m2)²/2s2²
    let k = (lo.amplitude / s1).ln() - (hi.amplitude / s2).ln();
    let qa = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let qb = m1 / (s1 * s1) - m2 / (s2 * s2);
    let qc = 0.5 * m2 * m2 / (s2 * s2) - 0.5 * m1 * m1 / (s1 * s1) + k;
    let inside = |x: f64| x > m1 && x < m2;
    let x = if qa.abs() < 1e-12 * (qb.abs() + 1.0 / (s1 * s1)) {
        -qc / qb
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            f64::NAN
        } else {
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -0.5 * (qb + qb.signum() * sq);
            let r1 = q / qa;
            let r2 = qc / q;
            if inside(r1) {
                r1
            } else {
                r2
            }
        }
    };
    if !inside(x) {
        return Err(Error::CrossingOutsideMeans {
            threshold: x,
            lower: m1,
            upper: m2,
        });
    }
    Ok(x)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Indices of the two most prominent maxima of the smoothed counts, or
/// `None` if only one significant peak exists.
fn two_peaks(smoothed: &[f64]) -> Option<(usize, usize)> {
    let n = smoothed.len();
    let (main, &top) = smoothed
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        if i == main {
            continue;
        }
        let left = if i > 0 { smoothed[i - 1] } else { f64::NEG_INFINITY };
        let right = if i + 1 < n { smoothed[i + 1] } else { f64::NEG_INFINITY };
        if !(smoothed[i] > left && smoothed[i] >= right) {
            continue;
        }
        let (a, b) = if i < main { (i, main) } else { (main, i) };
        let valley = smoothed[a..=b].iter().copied().fold(f64::INFINITY, f64::min);
        let peak = smoothed[i];
        let prominence = peak - valley;
        let significant = prominence > 3.0 * peak.max(1.0).sqrt() && valley < 0.75 * peak && peak <= top;
        if significant && best.is_none_or(|(_, p)| prominence > p) {
            best = Some((i, prominence));
        }
    }
    best.map(|(i, _)| if i < main { (i, main) } else { (main, i) })
}

/// Fits the crossing-point threshold to raw currents.
pub fn fit_threshold_currents(currents: &[f64]) -> Result<SetHistogram> {
    if currents.len() < MIN_THRESHOLD_SHOTS {
        return Err(Error::param(
            "shots",
            format!("{} < {MIN_THRESHOLD_SHOTS} required for a threshold fit", currents.len()),
        ));
    }
    if currents.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("i_set", "non-finite current"));
    }
    let mut sorted = currents.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi <= lo {
        return Err(Error::Unimodal("all currents identical".into()));
    }
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let fd_width = 2.0 * iqr / (sorted.len() as f64).cbrt();
    let span = hi - lo;
    let n_bins = if fd_width > 0.0 {
        ((span / fd_width).ceil() as usize).clamp(MIN_BINS, MAX_BINS)
    } else {
        MIN_BINS
    };
    let width = span / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0u64; n_bins];
    for &x in &sorted {
        let k = (((x - lo) / width) as usize).min(n_bins - 1);
        counts[k] += 1;
    }

    // binomial-weight smoothing over 5 bins
    let kernel = [1.0, 4.0, 6.0, 4.0, 1.0];
    let smoothed: Vec<f64> = (0..n_bins)
        .map(|i| {
            let (mut s, mut w) = (0.0, 0.0);
            for (k, kw) in kernel.iter().enumerate() {
                let j = i as isize + k as isize - 2;
                if j >= 0 && (j as usize) < n_bins {
                    s += kw * counts[j as usize] as f64;
                    w += kw;
                }
            }
            s / w
        })
        .collect();
    let (p1, p2) = two_peaks(&smoothed)
        .ok_or_else(|| Error::Unimodal("histogram has a single significant peak".into()))?;

    // deterministic 1-D 2-means starting from the valley between the peaks
    let valley_bin = (p1..=p2)
        .min_by(|&a, &b| smoothed[a].total_cmp(&smoothed[b]).then(a.cmp(&b)))
        .unwrap_or(p1);
    let mut split = bin_edges[valley_bin] + 0.5 * width;
    let mut cut = 0;
    for _ in 0..100 {
        cut = sorted.partition_point(|&x| x < split);
        if cut == 0 || cut == sorted.len() {
            return Err(Error::Unimodal("2-means split collapsed".into()));
        }
        let m1 = sorted[..cut].iter().sum::<f64>() / cut as f64;
        let m2 = sorted[cut..].iter().sum::<f64>() / (sorted.len() - cut) as f64;
        let next = 0.5 * (m1 + m2);
        if next == split {
            break;
        }
        split = next;
    }
    let stats = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64;
        (xs.len() as f64, m, v.sqrt().max(0.5 * width))
    };
    let (n1, m1, s1) = stats(&sorted[..cut]);
    let (n2, m2, s2) = stats(&sorted[cut..]);

    let centers: Vec<f64> = bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let y: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let w: Vec<f64> = counts.iter().map(|&c| 1.0 / (c as f64).max(1.0)).collect();
    let p0 = [n1 * width, m1, s1.ln(), n2 * width, m2, s2.ln()];
    let model = |p: &[f64], out: &mut [f64]| {
        let g1 = GaussianComponent {
            amplitude: p[0],
            mean: p[1],
            sigma: p[2].exp(),
        };
        let g2 = GaussianComponent {
            amplitude: p[3],
            mean: p[4],
            sigma: p[5].exp(),
        };
        for (o, &x) in out.iter_mut().zip(&centers) {
            *o = g1.eval(x) + g2.eval(x);
        }
    };
    let fit = levenberg_marquardt(model, &y, &w, &p0, &LmOptions::default())?;
    let p = &fit.params;
    let mut comps = [
        GaussianComponent {
            amplitude: p[0],
            mean: p[1],
            sigma: p[2].exp(),
        },
        GaussianComponent {
            amplitude: p[3],
            mean: p[4],
            sigma: p[5].exp(),
        },
    ];
    if comps[0].mean > comps[1].mean {
        comps.swap(0, 1);
    }
    if comps.iter().any(|c| !(c.amplitude > 0.0)) {
        return Err(Error::Unimodal("a mixture component vanished in the fit".into()));
    }
    let threshold = crossing_point(&comps[0], &comps[1])?;
    Ok(SetHistogram {
        bin_edges,
        counts,
        fitted: comps,
        threshold,
    })
}

/// Fits the two-Gaussian crossing-point threshold to all shot currents.
pub fn fit_threshold(shots: &[ShotRecord]) -> Result<SetHistogram> {
    let currents: Vec<f64> = shots.iter().map(|s| s.i_set).collect();
    fit_threshold_currents(&currents)
}

/// Threshold classifier; `four_below` says on which side (4,0) lies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub threshold: f64,
    pub four_below: bool,
}

impl Classifier {
    pub fn new(threshold: f64, four_below: bool) -> Self {
        Self { threshold, four_below }
    }

    pub fn classify(&self, i_set: f64) -> Filling {
        if (i_set < self.threshold) == self.four_below {
            Filling::Four
        } else {
            Filling::Three
        }
    }

    /// Fraction of labelled shots whose class differs from the truth.
    pub fn misclassification_rate(&self, shots: &[ShotRecord]) -> Result<f64> {
        let labelled: Vec<_> = shots.iter().filter_map(|s| s.truth.map(|t| (s.i_set, t))).collect();
        if labelled.is_empty() {
            return Err(Error::Empty("labelled shots"));
        }
        let wrong = labelled.iter().filter(|(i, t)| self.classify(*i) != *t).count();
        Ok(wrong as f64 / labelled.len() as f64)
    }
}

/// Charge-shuttle fidelity with its Wilson score interval at 1σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityResult {
    pub fidelity: f64,
    pub wilson_interval: (f64, f64),
    pub n_cycles: u64,
    pub successes: u64,
}

/// Wilson score interval for `k` successes out of `n` at `z` standard deviations.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    ((center - half).max(0.0).min(p), (center + half).min(1.0).max(p))
}

/// Counts a cycle as successful only if the first measurement reads three
/// electrons and the second reads four.
pub fn charge_fidelity(shots: &[ShotRecord], classifier: &Classifier) -> Result<FidelityResult> {
    let mut cycles: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for s in shots {
        let entry = cycles.entry(s.cycle_index).or_default();
        let slot = match s.stage {
            ShotStage::MAfterForward => &mut entry.0,
            ShotStage::MAfterReturn => &mut entry.1,
            ShotStage::SpinReadout => {
                return Err(Error::param("stage", "spin readout shot in a charge benchmark"))
            }
        };
        if slot.replace(s.i_set).is_some() {
            return Err(Error::param(
                "cycle",
                format!("cycle {} has a duplicated measurement", s.cycle_index),
            ));
        }
    }
    if cycles.is_empty() {
        return Err(Error::Empty("charge cycles"));
    }
    let mut successes = 0u64;
    for (&c, &(first, second)) in &cycles {
        let (Some(a), Some(b)) = (first, second) else {
            return Err(Error::UnpairedCycle(c));
        };
        if classifier.classify(a) == Filling::Three && classifier.classify(b) == Filling::Four {
            successes += 1;
        }
    }
    let n = cycles.len() as u64;
    Ok(FidelityResult {
        fidelity: successes as f64 / n as f64,
        wilson_interval: wilson_interval(successes, n, 1.0),
        n_cycles: n,
        successes,
    })
}

/// Fraction of shots on the (4,0) singlet side with its binomial standard error.
pub fn singlet_fraction(shots: &[ShotRecord], classifier: &Classifier) -> Result<PsEstimate> {
    if shots.is_empty() {
        return Err(Error::Empty("shots"));
    }
    let n = shots.len();
    let k = shots.iter().filter(|s| classifier.classify(s.i_set) == Filling::Four).count();
    let p = k as f64 / n as f64;
    Ok(PsEstimate {
        mean: p,
        stderr: (p * (1.0 - p) / n as f64).sqrt(),
        n,
    })
}

/// Per-leg charge transfer probability as a function of drive amplitude and
/// frequency: a logistic rise in U_lower times a logistic roll-off in f.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegSuccessModel {
    pub p_max: f64,
    pub u_half_v: f64,
    pub u_width_v: f64,
    pub f_half_hz: f64,
    pub f_width_hz: f64,
}

impl Default for LegSuccessModel {
    fn default() -> Self {
        Self {
            p_max: 0.9986,
            u_half_v: 0.110,
            u_width_v: 0.004,
            f_half_hz: 15e6,
            f_width_hz: 0.4e6,
        }
    }
}

impl LegSuccessModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_max) {
            return Err(Error::param("p_max", "must lie in [0, 1]"));
        }
        if !(self.u_width_v > 0.0 && self.f_width_hz > 0.0) {
            return Err(Error::param("width", "logistic widths must be > 0"));
        }
        Ok(())
    }

    pub fn probability(&self, u_lower_v: f64, frequency_hz: f64) -> f64 {
        let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
        self.p_max
            * logistic((u_lower_v - self.u_half_v) / self.u_width_v)
            * logistic((self.f_half_hz - frequency_hz) / self.f_width_hz)
    }
}

#[derive(Serialize, Deserialize)]
struct ShotRow {
    cycle: u64,
    stage: ShotStage,
    i_set: f64,
    truth: Option<Filling>,
}

/// Writes `cycle,stage,i_set,truth` rows; `truth` is empty for measured data.
pub fn write_shots_csv<W: Write>(shots: &[ShotRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if shots.is_empty() {
        w.write_record(["cycle", "stage", "i_set", "truth"])?;
    }
    for s in shots {
        w.serialize(ShotRow {
            cycle: s.cycle_index,
            stage: s.stage,
            i_set: s.i_set,
            truth: s.truth,
        })?;
    }
    w.flush().map_err(|e| Error::io("<shots>", e))?;
    Ok(())
}

pub fn read_shots_csv<R: Read>(input: R) -> Result<Vec<ShotRecord>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<ShotRow>()
        .map(|row| {
            let row = row?;
            Ok(ShotRecord {
                cycle_index: row.cycle,
                stage: row.stage,
                i_set: row.i_set,
                truth: row.truth,
            })
        })
        .collect()
}
