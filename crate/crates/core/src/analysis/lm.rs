//! Weighted Levenberg–Marquardt least squares with Marquardt scaling and
//! Nielsen's damping update.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Relative cost reduction below which an accepted step ends the fit.
    pub ftol: f64,
    /// Relative step size below which the fit ends.
    pub xtol: f64,
    /// Largest gradient component accepted as stationary.
    pub gtol: f64,
    /// Initial damping relative to the largest curvature.
    pub tau: f64,
    /// Relative central-difference step for the Jacobian.
    pub fd_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: 1e-15,
            xtol: 1e-12,
            gtol: 1e-14,
            tau: 1e-3,
            fd_step: 1e-6,
        }
    }
}

/// Optimum of a weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct LmFit {
    pub params: Vec<f64>,
    /// χ² = Σ wᵢ (yᵢ − fᵢ)².
    pub cost: f64,
    /// Jᵀ W J at the optimum.
    pub jtwj: DMatrix<f64>,
    pub iterations: usize,
    /// Cost after every accepted step, starting with the initial cost.
    pub trace: Vec<f64>,
    pub n_data: usize,
}

impl LmFit {
    pub fn dof(&self) -> usize {
        self.n_data.saturating_sub(self.params.len())
    }

    pub fn reduced_chi2(&self) -> f64 {
        match self.dof() {
            0 => 0.0,
            d => self.cost / d as f64,
        }
    }

    /// Parameter covariance. With inverse-variance weights use `scaled = false`;
    /// with unit weights `scaled = true` multiplies by the reduced χ².
    pub fn covariance(&self, scaled: bool) -> DMatrix<f64> {
        let inv = self
            .jtwj
            .clone()
            .try_inverse()
            .filter(|m| m.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| {
                self.jtwj
                    .clone()
                    .pseudo_inverse(1e-14 * self.jtwj.amax())
                    .unwrap_or_else(|_| DMatrix::from_element(self.params.len(), self.params.len(), f64::NAN))
            });
        if scaled {
            inv * self.reduced_chi2()
        } else {
            inv
        }
    }
}

fn cost_of(y: &[f64], w: &[f64], f: &[f64]) -> f64 {
    y.iter().zip(f).zip(w).map(|((y, f), w)| w * (y - f).powi(2)).sum()
}

fn jacobian<F>(model: &F, p: &[f64], n: usize, step: f64, scratch: &mut [Vec<f64>; 2]) -> DMatrix<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut jac = DMatrix::zeros(n, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let h = step * p[j].abs().max(1e-3);
        q[j] = p[j] + h;
        model(&q, &mut scratch[0]);
        q[j] = p[j] - h;
        model(&q, &mut scratch[1]);
        q[j] = p[j];
        for i in 0..n {
            jac[(i, j)] = (scratch[0][i] - scratch[1][i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimises Σ wᵢ (yᵢ − model(p)ᵢ)² from `p0`. `model` writes predictions
/// for every data point into its output slice. Accepted steps never increase
/// the cost.
pub fn levenberg_marquardt<F>(model: F, y: &[f64], w: &[f64], p0: &[f64], opts: &LmOptions) -> Result<LmFit>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = y.len();
    let m = p0.len();
    if w.len() != n {
        return Err(Error::param("weights", "length differs from data"));
    }
    if n < m {
        return Err(Error::DegenerateDesign(format!("{n} points for {m} parameters")));
    }
    if p0.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("p0", "non-finite start"));
    }
    let mut p = p0.to_vec();
    let mut f = vec![0.0; n];
    let mut scratch = [vec![0.0; n], vec![0.0; n]];
    model(&p, &mut f);
    let mut cost = cost_of(y, w, &f);
    if !cost.is_finite() {
        return Err(Error::NonConvergence("non-finite cost at the start point".into()));
    }
    let mut trace = vec![cost];
    let mut lambda = -1.0;
    let mut nu = 2.0;
    let mut trial = vec![0.0; m];
    let mut f_trial = vec![0.0; n];

    for iter in 0..opts.max_iter {
        let jac = jacobian(&model, &p, n, opts.fd_step, &mut scratch);
        let mut jtw = jac.transpose();
        for (i, wi) in w.iter().enumerate() {
            jtw.column_mut(i).scale_mut(*wi);
        }
        let a = &jtw * &jac;
        let r = DVector::from_iterator(n, y.iter().zip(&f).map(|(y, f)| y - f));
        let g = &jtw * &r;
        if g.amax() <= opts.gtol {
            return Ok(finish(p, cost, a, iter, trace, n));
        }
        let max_diag = (0..m).map(|k| a[(k, k)]).fold(0.0, f64::max);
        if lambda < 0.0 {
            lambda = opts.tau;
        }
        let diag: Vec<f64> = (0..m).map(|k| a[(k, k)].max(1e-12 * max_diag).max(f64::MIN_POSITIVE)).collect();

        loop {
            let mut damped = a.clone();
            for k in 0..m {
                damped[(k, k)] += lambda * diag[k];
            }
            let step = damped
                .clone()
                .cholesky()
                .map(|c| c.solve(&g))
                .or_else(|| damped.lu().solve(&g));
            let Some(delta) = step else {
                lambda *= nu;
                nu *= 2.0;
                if lambda > 1e30 {
                    return Ok(finish(p, cost, a, iter, trace, n));
                }
                continue;
            };
            let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            let small_step = delta.norm() <= opts.xtol * (p_norm + opts.xtol);
            for k in 0..m {
                trial[k] = p[k] + delta[k];
            }
            model(&trial, &mut f_trial);
            let new_cost = cost_of(y, w, &f_trial);
            let predicted = 2.0 * delta.dot(&g) - (delta.transpose() * &a * &delta)[(0, 0)];
            if new_cost.is_finite() && new_cost < cost {
                let rho = if predicted > 0.0 { (cost - new_cost) / predicted } else { 1.0 };
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                let reduction = cost - new_cost;
                p.copy_from_slice(&trial);
                std::mem::swap(&mut f, &mut f_trial);
                cost = new_cost;
                trace.push(cost);
                if reduction <= opts.ftol * cost || small_step {
                    let jac = jacobian(&model, &p, n, opts.fd_step, &mut scratch);
                    let mut jtw = jac.transpose();
                    for (i, wi) in w.iter().enumerate() {
                        jtw.column_mut(i).scale_mut(*wi);
                    }
                    let a = &jtw * &jac;
                    return Ok(finish(p, cost, a, iter + 1, trace, n));
                }
                break;
            }
            if small_step {
                return Ok(finish(p, cost, a, iter, trace, n));
            }
            lambda *= nu;
            nu *= 2.0;
            if lambda > 1e30 {
                return Ok(finish(p, cost, a, iter, trace, n));
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "no convergence after {} iterations (cost {cost:.6e})",
        opts.max_iter
    )))
}

fn finish(params: Vec<f64>, cost: f64, jtwj: DMatrix<f64>, iterations: usize, trace: Vec<f64>, n_data: usize) -> LmFit {
    LmFit {
        params,
        cost,
        jtwj,
        iterations,
        trace,
        n_data,
    }
}
