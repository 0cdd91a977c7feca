//! Per-point result tables and their CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentKind;
use crate::error::CliError;

/// Column names of a spin-readout table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Axis selecting one scan line, if the experiment has several per field.
    pub series: Option<&'static str>,
    /// Axis along which P_S is fitted.
    pub x: &'static str,
}

impl Layout {
    pub fn of(kind: ExperimentKind) -> Option<Layout> {
        match kind {
            ExperimentKind::St0Dqd => Some(Layout {
                series: None,
                x: "tau_ns",
            }),
            ExperimentKind::CoherentShuttleMap => Some(Layout {
                series: Some("d_nm"),
                x: "tau_ns",
            }),
            ExperimentKind::WaitMap => Some(Layout {
                series: Some("x_nm"),
                x: "tau_w_ns",
            }),
            ExperimentKind::LongDistance => Some(Layout {
                series: Some("periods"),
                x: "tau_ns",
            }),
            ExperimentKind::ChargeFidelityScan => None,
        }
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["b_t"];
        h.extend(self.series);
        h.extend([self.x, "P_S", "stderr", "P_S_model", "P_S_model_stderr", "shots"]);
        h
    }
}

/// One classified spin-readout point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinRow {
    pub b_t: f64,
    pub series: Option<f64>,
    pub x: f64,
    /// Singlet fraction of the classified shots.
    pub p_s: f64,
    pub stderr: f64,
    /// Ensemble-mean singlet probability the shots were drawn from.
    pub p_s_model: f64,
    pub p_s_model_stderr: f64,
    pub shots: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinTable {
    pub layout: Layout,
    pub rows: Vec<SpinRow>,
}

impl SpinTable {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.layout.header())?;
        for r in &self.rows {
            let mut rec = vec![r.b_t.to_string()];
            rec.extend(r.series.map(|v| v.to_string()));
            rec.extend([
                r.x.to_string(),
                r.p_s.to_string(),
                r.stderr.to_string(),
                r.p_s_model.to_string(),
                r.p_s_model_stderr.to_string(),
                r.shots.to_string(),
            ]);
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CliError::Io(format!("writing table: {e}")))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(layout: Layout, input: R) -> Result<Self, CliError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != layout.header() {
            return Err(CliError::Config(format!(
                "data.csv header {:?} does not match {:?}",
                header,
                layout.header()
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| CliError::Config(format!("data.csv row {}: bad {what}", line + 2));
            let f = |i: usize| -> Result<f64, CliError> {
                rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| bad(&header[i]))
            };
            let mut i = 0;
            let mut next = || {
                i += 1;
                i - 1
            };
            let b_t = f(next())?;
            let series = match layout.series {
                Some(_) => Some(f(next())?),
                None => None,
            };
            let x = f(next())?;
            let p_s = f(next())?;
            let stderr = f(next())?;
            let p_s_model = f(next())?;
            let p_s_model_stderr = f(next())?;
            let k = next();
            let shots = rec.get(k).and_then(|s| s.parse().ok()).ok_or_else(|| bad("shots"))?;
            rows.push(SpinRow {
                b_t,
                series,
                x,
                p_s,
                stderr,
                p_s_model,
                p_s_model_stderr,
                shots,
            });
        }
        Ok(Self { layout, rows })
    }

    /// Rows grouped into scan lines by (field, series value), in first-seen order.
    pub fn lines(&self) -> Vec<(f64, Option<f64>, Vec<SpinRow>)> {
        let mut out: Vec<(f64, Option<f64>, Vec<SpinRow>)> = Vec::new();
        for r in &self.rows {
            let key = (r.b_t.to_bits(), r.series.map(f64::to_bits));
            match out
                .iter_mut()
                .find(|(b, s, _)| (b.to_bits(), s.map(f64::to_bits)) == key)
            {
                Some(line) => line.2.push(*r),
                None => out.push((r.b_t, r.series, vec![*r])),
            }
        }
        out
    }
}

/// One point of the charge-fidelity scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeRow {
    pub u_lower_v: f64,
    pub frequency_hz: f64,
    pub fidelity: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub successes: u64,
    pub n_cycles: u64,
    /// Per-leg success probability the cycles were drawn with.
    pub p_leg: f64,
}

pub fn write_charge_csv<W: Write>(rows: &[ChargeRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "u_lower_v",
            "frequency_hz",
            "fidelity",
            "wilson_lo",
            "wilson_hi",
            "successes",
            "n_cycles",
            "p_leg",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("writing table: {e}")))?;
    Ok(())
}

pub fn read_charge_csv<R: Read>(input: R) -> Result<Vec<ChargeRow>, CliError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<ChargeRow>, _>>()
        .map_err(CliError::from)
}
