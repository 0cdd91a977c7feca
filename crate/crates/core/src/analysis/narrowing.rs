//! Motional-narrowing fit of T₂*(d).
//!
//! The model is linear in A = 1/T*₂,L² and B = 1/T*₂,R² once l_c is fixed:
//! y = 1/T₂*² = A + B·l_c/(d + l_c). The fit profiles l_c on a log grid with
//! non-negative A and B, refines it by golden-section search, and then runs
//! a joint Levenberg–Marquardt pass for the covariance.

use serde::{Deserialize, Serialize};

use super::lm::{levenberg_marquardt, LmOptions};
use crate::error::{Error, Result};
use crate::spinsim::DephasingModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowingPoint {
    pub d_nm: f64,
    pub t2_ns: f64,
    pub stderr_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarrowingFit {
    pub t2l_ns: f64,
    pub t2r_ns: f64,
    pub lc_nm: f64,
    pub t2l_err_ns: f64,
    pub t2r_err_ns: f64,
    pub lc_err_nm: f64,
    /// Order: T*₂,L, T*₂,R, l_c.
    pub covariance: Vec<Vec<f64>>,
    /// False when the narrowing term is not significant, so l_c carries no
    /// information.
    pub lc_identifiable: bool,
    pub residual_rms_ns: f64,
    pub reduced_chi2: f64,
}

impl NarrowingFit {
    pub fn params(&self) -> DephasingModelParams {
        DephasingModelParams {
            t2l_ns: self.t2l_ns,
            t2r_ns: self.t2r_ns,
            lc_nm: self.lc_nm,
        }
    }
}

const GRID: usize = 241;

struct Problem {
    d: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Problem {
    fn basis(&self, lc: f64) -> Vec<f64> {
        self.d.iter().map(|d| lc / (d + lc)).collect()
    }

    /// Non-negative weighted fit of (A, B) at fixed l_c.
    fn nnls(&self, lc: f64) -> (f64, f64, f64) {
        let u = self.basis(lc);
        let (mut s1, mut su, mut suu, mut sy, mut suy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for ((&ui, &yi), &wi) in u.iter().zip(&self.y).zip(&self.w) {
            s1 += wi;
            su += wi * ui;
            suu += wi * ui * ui;
            sy += wi * yi;
            suy += wi * ui * yi;
        }
        let cost = |a: f64, b: f64| -> f64 {
            u.iter()
                .zip(&self.y)
                .zip(&self.w)
                .map(|((ui, yi), wi)| wi * (yi - a - b * ui).powi(2))
                .sum()
        };
        let det = s1 * suu - su * su;
        let mut cands = Vec::with_capacity(3);
        if det > 1e-14 * s1 * suu {
            let a = (suu * sy - su * suy) / det;
            let b = (s1 * suy - su * sy) / det;
            if a >= 0.0 && b >= 0.0 {
                cands.push((a, b));
            }
        }
        cands.push(((sy / s1).max(0.0), 0.0));
        if suu > 0.0 {
            cands.push((0.0, (suy / suu).max(0.0)));
        }
        cands
            .into_iter()
            .map(|(a, b)| (a, b, cost(a, b)))
            .min_by(|p, q| p.2.total_cmp(&q.2))
            .expect("at least one candidate")
    }
}

/// Fits (T*₂,L, T*₂,R, l_c) to T₂*(d) points.
pub fn fit_narrowing(points: &[NarrowingPoint]) -> Result<NarrowingFit> {
    for p in points {
        if !(p.d_nm >= 0.0 && p.d_nm.is_finite()) {
            return Err(Error::param("d_nm", "must be finite and >= 0"));
        }
        if !(p.t2_ns > 0.0 && p.t2_ns.is_finite()) {
            return Err(Error::param("t2_ns", "must be finite and > 0"));
        }
        if let Some(e) = p.stderr_ns {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::param("stderr_ns", "must be finite and > 0"));
            }
        }
    }
    let mut distinct: Vec<f64> = points.iter().map(|p| p.d_nm).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    if distinct.len() < 4 {
        return Err(Error::DegenerateDesign(format!(
            "{} distinct distances, at least 4 needed",
            distinct.len()
        )));
    }
    let weighted = points.iter().all(|p| p.stderr_ns.is_some());
    let prob = Problem {
        d: points.iter().map(|p| p.d_nm).collect(),
        y: points.iter().map(|p| (p.t2_ns * 1e-3).powi(-2)).collect(),
        w: points
            .iter()
            .map(|p| match (weighted, p.stderr_ns) {
                (true, Some(e)) => {
                    let t = p.t2_ns * 1e-3;
                    let sy = 2.0 * e * 1e-3 / t.powi(3);
                    1.0 / (sy * sy)
                }
                _ => 1.0,
            })
            .collect(),
    };

    let d_pos = distinct.iter().copied().find(|d| *d > 0.0).unwrap_or(1.0);
    let d_max = distinct[distinct.len() - 1].max(d_pos);
    let (lo, hi) = ((d_pos * 1e-3).ln(), (d_max * 1e3).ln());
    let grid: Vec<f64> = (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect();
    let costs: Vec<f64> = grid.iter().map(|g| prob.nnls(g.exp()).2).collect();
    let k = (0..GRID).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap_or(0);
    let at_edge = k == 0 || k == GRID - 1;

    // golden-section search in ln l_c between the neighbouring grid nodes
    let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(GRID - 1)]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let f = |x: f64| prob.nnls(x.exp()).2;
    let (mut x1, mut x2) = (b - phi * (b - a), a + phi * (b - a));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + phi * (b - a);
            f2 = f(x2);
        }
    }
    let mut lc = (0.5 * (a + b)).exp();
    let (mut big_a, mut big_b, _) = prob.nnls(lc);

    let n = points.len();
    let model = |p: &[f64], out: &mut [f64]| {
        for (o, d) in out.iter_mut().zip(&prob.d) {
            *o = p[0] + p[1] * p[2] / (d + p[2]);
        }
    };
    let interior = big_a > 0.0 && big_b > 0.0;
    let mut cov3 = [[f64::NAN; 3]; 3];
    let reduced_chi2;
    let opts = LmOptions::default();
    if interior {
        let fit = levenberg_marquardt(model, &prob.y, &prob.w, &[big_a, big_b, lc], &opts)?;
        if fit.params.iter().all(|v| *v > 0.0) {
            big_a = fit.params[0];
            big_b = fit.params[1];
            lc = fit.params[2];
        }
        let cov = fit.covariance(!weighted);
        for i in 0..3 {
            for j in 0..3 {
                cov3[i][j] = cov[(i, j)];
            }
        }
        reduced_chi2 = fit.reduced_chi2();
    } else {
        // covariance of the free linear parameter only
        let u = prob.basis(lc);
        let (free, col): (usize, Vec<f64>) = if big_b > 0.0 { (1, u) } else { (0, vec![1.0; n]) };
        let info: f64 = col.iter().zip(&prob.w).map(|(c, w)| w * c * c).sum();
        let cost: f64 = prob
            .y
            .iter()
            .zip(&prob.d)
            .zip(&prob.w)
            .map(|((y, d), w)| w * (y - big_a - big_b * lc / (d + lc)).powi(2))
            .sum();
        let dof = n.saturating_sub(1).max(1) as f64;
        reduced_chi2 = cost / dof;
        let scale = if weighted { 1.0 } else { reduced_chi2 };
        for row in cov3.iter_mut() {
            for v in row.iter_mut() {
                *v = 0.0;
            }
        }
        cov3[free][free] = scale / info;
        cov3[1 - free][1 - free] = f64::INFINITY;
        cov3[2][2] = f64::INFINITY;
    }

    let sigma_b = cov3[1][1].sqrt();
    let lc_identifiable =
        interior && !at_edge && big_b > 3.0 * sigma_b && big_b / big_a > 1e-6 && sigma_b.is_finite();

    let to_t2 = |x: f64| if x > 0.0 { 1e3 / x.sqrt() } else { f64::INFINITY };
    let dt2 = |x: f64| if x > 0.0 { -0.5e3 * x.powf(-1.5) } else { f64::INFINITY };
    let jac = [dt2(big_a), dt2(big_b), 1.0];
    let covariance: Vec<Vec<f64>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| {
                    let v = jac[i] * cov3[i][j] * jac[j];
                    if v.is_nan() && (jac[i].is_infinite() || jac[j].is_infinite() || cov3[i][j].is_infinite()) {
                        if i == j {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    let lc_err_nm = if lc_identifiable { covariance[2][2].sqrt() } else { f64::INFINITY };
    let params = DephasingModelParams {
        t2l_ns: to_t2(big_a),
        t2r_ns: to_t2(big_b),
        lc_nm: lc,
    };
    let residual_rms_ns = (points
        .iter()
        .map(|p| (crate::spinsim::t2_epr_model(&params, p.d_nm) - p.t2_ns).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    Ok(NarrowingFit {
        t2l_ns: params.t2l_ns,
        t2r_ns: params.t2r_ns,
        lc_nm: lc,
        t2l_err_ns: covariance[0][0].sqrt(),
        t2r_err_ns: covariance[1][1].sqrt(),
        lc_err_nm,
        covariance,
        lc_identifiable,
        residual_rms_ns,
        reduced_chi2,
    })
}
