//! Fits of simulated or previously written tables.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use shuttlesim_core::{
    fit_narrowing, fit_single_tone, fit_two_tone, frequency_ratio_report, FieldScan, NarrowingFit, NarrowingPoint,
    OscillationData, RatioRow, ScanPoint, ToneFit,
};

use crate::config::ExperimentKind;
use crate::table::{ChargeRow, SpinRow, SpinTable};

/// Fewest distinct distances for a narrowing fit.
pub const MIN_NARROWING_POINTS: usize = 4;

/// Result of fitting one scan line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok { fit: T },
    /// Too few points for any model; not a failure.
    Skipped { reason: String },
    Failed { error: String },
}

impl<T> Outcome<T> {
    pub fn fit(&self) -> Option<&T> {
        match self {
            Outcome::Ok { fit } => Some(fit),
            _ => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Failed { .. })
    }
}

/// Fit of one scan line, keyed by field and series value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub b_t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    pub n_points: usize,
    #[serde(flatten)]
    pub outcome: Outcome<ToneFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrowingRecord {
    pub b_t: f64,
    pub n_points: usize,
    #[serde(flatten)]
    pub outcome: Outcome<NarrowingFit>,
}

/// Best point of a charge-fidelity scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeSummary {
    pub best: ChargeRow,
    pub n_points: usize,
}

/// Everything written to `fits.json`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Fits {
    pub experiment: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<LineFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub narrowing: Vec<NarrowingRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<RatioRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge: Option<ChargeSummary>,
}

impl Fits {
    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|l| l.outcome.is_failure()).count()
            + self.narrowing.iter().filter(|n| n.outcome.is_failure()).count()
            + usize::from(self.ratio_error.is_some())
    }
}

/// Binomial standard error with add-one smoothing, so 0/n and n/n points
/// keep a finite weight.
pub fn smoothed_stderr(p: f64, shots: u64) -> f64 {
    let n = shots.max(1) as f64;
    let q = (p * n + 1.0) / (n + 2.0);
    (q * (1.0 - q) / n).sqrt()
}

/// Two tones when the line has enough points, otherwise one.
pub fn fit_line(rows: &[SpinRow]) -> Outcome<ToneFit> {
    let mut pts: Vec<&SpinRow> = rows.iter().collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x));
    let t: Vec<f64> = pts.iter().map(|r| r.x).collect();
    let y: Vec<f64> = pts.iter().map(|r| r.p_s).collect();
    let e: Vec<f64> = pts.iter().map(|r| smoothed_stderr(r.p_s, r.shots)).collect();
    if t.len() <= 5 {
        return Outcome::Skipped {
            reason: format!("{} points; a single-tone fit needs at least 6", t.len()),
        };
    }
    let result = OscillationData::new(t, y, Some(e)).and_then(|data| {
        if data.len() > 8 {
            fit_two_tone(&data)
        } else {
            fit_single_tone(&data).map(ToneFit::SingleFallback)
        }
    });
    match result {
        Ok(fit) => Outcome::Ok { fit },
        Err(e) => Outcome::Failed { error: e.to_string() },
    }
}

fn narrowing_for(b_t: f64, lines: &[LineFit]) -> Option<NarrowingRecord> {
    let fitted: Vec<NarrowingPoint> = lines
        .iter()
        .filter(|l| l.b_t.to_bits() == b_t.to_bits())
        .filter_map(|l| {
            let (t2, err) = l.outcome.fit()?.t2_star_ns();
            Some(NarrowingPoint {
                d_nm: l.value?,
                t2_ns: t2,
                stderr_ns: (err > 0.0 && err.is_finite()).then_some(err),
            })
        })
        .collect();
    // lines without a resolved decay carry no T2* information
    let unresolved = fitted.iter().filter(|p| !(p.t2_ns.is_finite() && p.t2_ns > 0.0)).count();
    let points: Vec<NarrowingPoint> = fitted.into_iter().filter(|p| p.t2_ns.is_finite() && p.t2_ns > 0.0).collect();
    if points.len() < MIN_NARROWING_POINTS {
        return (unresolved > 0).then(|| NarrowingRecord {
            b_t,
            n_points: points.len(),
            outcome: Outcome::Skipped {
                reason: format!("dephasing not resolved at {unresolved} distances"),
            },
        });
    }
    // weights are used only when every point has an uncertainty
    let points = if points.iter().all(|p| p.stderr_ns.is_some()) {
        points
    } else {
        points.into_iter().map(|p| NarrowingPoint { stderr_ns: None, ..p }).collect()
    };
    let outcome = match fit_narrowing(&points) {
        Ok(fit) => Outcome::Ok { fit },
        Err(e) => Outcome::Failed { error: e.to_string() },
    };
    Some(NarrowingRecord {
        b_t,
        n_points: points.len(),
        outcome,
    })
}

/// ν ratios of every field against the highest one, on distances fitted at both.
fn ratios(lines: &[LineFit], fields: &[f64]) -> Result<Vec<RatioRow>, String> {
    let Some(&high) = fields.iter().max_by(|a, b| a.total_cmp(b)) else {
        return Ok(Vec::new());
    };
    let fitted = |b: f64| -> Vec<(f64, &ToneFit)> {
        lines
            .iter()
            .filter(|l| l.b_t.to_bits() == b.to_bits())
            .filter_map(|l| Some((l.value?, l.outcome.fit()?)))
            .collect()
    };
    let at_high = fitted(high);
    let mut out = Vec::new();
    for &b in fields.iter().filter(|b| b.to_bits() != high.to_bits()) {
        let at_low = fitted(b);
        let common: Vec<(ScanPoint, ScanPoint)> = at_low
            .iter()
            .filter_map(|&(d, fl)| {
                let &(_, fh) = at_high.iter().find(|(dh, _)| dh.to_bits() == d.to_bits())?;
                Some((ScanPoint::from_fit(d, fl), ScanPoint::from_fit(d, fh)))
            })
            .collect();
        let (lo, hi): (Vec<_>, Vec<_>) = common.into_iter().unzip();
        let rows = frequency_ratio_report(&FieldScan { b_t: b, points: lo }, &FieldScan { b_t: high, points: hi })
            .map_err(|e| e.to_string())?;
        out.extend(rows);
    }
    Ok(out)
}

/// Fits every scan line of a spin table.
pub fn analyze_spin(kind: ExperimentKind, table: &SpinTable) -> Fits {
    let groups = table.lines();
    let lines: Vec<LineFit> = groups
        .par_iter()
        .map(|(b_t, value, rows)| LineFit {
            b_t: *b_t,
            axis: table.layout.series.map(str::to_string),
            value: *value,
            n_points: rows.len(),
            outcome: fit_line(rows),
        })
        .collect();

    let mut fields: Vec<f64> = Vec::new();
    for (b, _, _) in &groups {
        if !fields.iter().any(|f| f.to_bits() == b.to_bits()) {
            fields.push(*b);
        }
    }
    let mut fits = Fits {
        experiment: kind.name().into(),
        ..Fits::default()
    };
    if kind == ExperimentKind::CoherentShuttleMap {
        fits.narrowing = fields.iter().filter_map(|&b| narrowing_for(b, &lines)).collect();
        if fields.len() >= 2 {
            match ratios(&lines, &fields) {
                Ok(r) => fits.ratios = r,
                Err(e) => fits.ratio_error = Some(e),
            }
        }
    }
    fits.lines = lines;
    fits
}

pub fn analyze_charge(rows: &[ChargeRow]) -> Fits {
    Fits {
        experiment: ExperimentKind::ChargeFidelityScan.name().into(),
        charge: rows
            .iter()
            .copied()
            .max_by(|a, b| a.fidelity.total_cmp(&b.fidelity))
            .map(|best| ChargeSummary {
                best,
                n_points: rows.len(),
            }),
        ..Fits::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use shuttlesim_core::analysis::single_tone_model;

    use crate::table::Layout;

    fn line(b_t: f64, d: f64, nu: f64, n: usize) -> Vec<SpinRow> {
        (0..n)
            .map(|k| {
                let t = 12.5 * k as f64;
                let p = single_tone_model(t, 0.4, nu, 0.0, 0.5, 600.0);
                SpinRow {
                    b_t,
                    series: Some(d),
                    x: t,
                    p_s: p,
                    stderr: 0.0,
                    p_s_model: p,
                    p_s_model_stderr: 0.0,
                    shots: 1_000_000,
                }
            })
            .collect()
    }

    #[test]
    fn smoothed_stderr_is_positive_at_the_edges() {
        assert!(smoothed_stderr(0.0, 1) > 0.0);
        assert!(smoothed_stderr(1.0, 50_000) > 0.0);
        assert!((smoothed_stderr(0.5, 1_000_000) - 5e-4).abs() < 1e-6);
    }

    #[test]
    fn short_lines_are_skipped() {
        let out = fit_line(&line(0.8, 0.0, 7.29, 1));
        assert!(matches!(out, Outcome::Skipped { .. }));
        assert!(!out.is_failure());
    }

    #[test]
    fn field_ratios_come_from_line_fits() {
        let mut rows = Vec::new();
        for d in [0.0, 100.0] {
            rows.extend(line(0.6, d, 7.29 * 0.75, 100));
            rows.extend(line(0.8, d, 7.29, 100));
        }
        let table = SpinTable {
            layout: Layout::of(ExperimentKind::CoherentShuttleMap).unwrap(),
            rows,
        };
        let fits = analyze_spin(ExperimentKind::CoherentShuttleMap, &table);
        assert_eq!(fits.failures(), 0, "{fits:?}");
        assert_eq!(fits.lines.len(), 4);
        assert_eq!(fits.ratios.len(), 2);
        for r in &fits.ratios {
            assert!((r.ratio - 0.75).abs() < 1e-4, "{r:?}");
        }
    }
}
