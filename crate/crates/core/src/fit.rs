// Copyright 2026 The qjump Authors
// SPDX-License-Identifier: Apache-2.0

//! Bounded Levenberg-Marquardt least squares with parameter covariance.
//!
//! Callers supply weighted residuals r_i = (y_i − f_i)/σ_i together with
//! their Jacobian, so the covariance is simply (JᵀJ)⁻¹ at the optimum.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError<E> {
    #[error("model evaluation failed at the starting point: {0}")]
    Model(E),
    #[error("residuals or Jacobian not finite")]
    NonFinite,
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("fit needs at least as many residuals ({residuals}) as parameters ({params})")]
    Underdetermined { residuals: usize, params: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative reduction of the cost below which the fit has converged.
    pub ftol: f64,
    /// Relative step size below which the fit has converged.
    pub xtol: f64,
    /// Largest |Jᵀr| at convergence.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            ftol: 1e-12,
            xtol: 1e-10,
            gtol: 1e-12,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub x: Vec<f64>,
    /// Σ r_i² at the optimum.
    pub chi2: f64,
    pub n_residuals: usize,
    /// (JᵀJ)⁻¹, absent if singular.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
}

impl LmReport {
    pub fn dof(&self) -> usize {
        self.n_residuals.saturating_sub(self.x.len())
    }

    pub fn reduced_chi2(&self) -> f64 {
        self.chi2 / self.dof().max(1) as f64
    }

    /// Standard errors √diag(cov), NaN where unavailable.
    pub fn stderr(&self) -> Vec<f64> {
        match &self.covariance {
            Some(c) => (0..self.x.len()).map(|i| c[(i, i)].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; self.x.len()],
        }
    }
}

/// Residuals and Jacobian (rows: residuals, columns: parameters).
pub type Evaluation = (DVector<f64>, DMatrix<f64>);

fn finite(e: &Evaluation) -> bool {
    e.0.iter().all(|v| v.is_finite()) && e.1.iter().all(|v| v.is_finite())
}

/// Minimizes Σ r(x)² subject to `bounds[i].0 ≤ x_i ≤ bounds[i].1`.
///
/// A failing evaluation at a trial point is treated as a rejected step.
pub fn levenberg_marquardt<E>(
    mut eval: impl FnMut(&[f64]) -> Result<Evaluation, E>,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    opts: &LmOptions,
) -> Result<LmReport, FitError<E>> {
    let clamp = |x: &mut [f64]| {
        if let Some(b) = bounds {
            for (v, (lo, hi)) in x.iter_mut().zip(b) {
                *v = v.clamp(*lo, *hi);
            }
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut cur = eval(&x).map_err(FitError::Model)?;
    if !finite(&cur) {
        return Err(FitError::NonFinite);
    }
    let (m, n) = cur.1.shape();
    if m < n {
        return Err(FitError::Underdetermined {
            residuals: m,
            params: n,
        });
    }
    let mut cost = cur.0.norm_squared();
    let mut lambda = opts.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        let jt = cur.1.transpose();
        let a = &jt * &cur.1;
        let g = &jt * &cur.0;
        if g.amax() <= opts.gtol {
            converged = true;
            break;
        }
        let scale = a.diagonal().map(|d| d.max(1e-12 * a.diagonal().amax().max(1e-300)));
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * scale[i];
            }
            let Some(step) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            clamp(&mut trial);
            let moved = x
                .iter()
                .zip(&trial)
                .map(|(a, b)| (a - b).abs() / (a.abs() + opts.xtol))
                .fold(0.0, f64::max);
            match eval(&trial) {
                Ok(next) if finite(&next) && next.0.norm_squared() <= cost => {
                    let new_cost = next.0.norm_squared();
                    let reduction = (cost - new_cost) / cost.max(1e-300);
                    x = trial;
                    cur = next;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    if reduction <= opts.ftol || moved <= opts.xtol {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    if moved <= opts.xtol {
                        // the clamped step no longer moves: at a bound or at the optimum
                        converged = true;
                        break;
                    }
                    lambda *= 10.0;
                }
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: the current point is a minimum to machine precision
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(FitError::NoConvergence { iterations });
    }
    let jt = cur.1.transpose();
    let covariance = (&jt * &cur.1).try_inverse();
    Ok(LmReport {
        x,
        chi2: cost,
        n_residuals: m,
        covariance,
        iterations,
    })
}

/// Forward-difference Jacobian of `f` at `x`.
pub fn numeric_jacobian<E>(
    mut f: impl FnMut(&[f64]) -> Result<DVector<f64>, E>,
    x: &[f64],
    r0: &DVector<f64>,
) -> Result<DMatrix<f64>, E> {
    let mut jac = DMatrix::zeros(r0.len(), x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = 1e-7 * x[j].abs().max(1e-3);
        xp[j] = x[j] + h;
        let r = f(&xp)?;
        jac.set_column(j, &((r - r0) / h));
        xp[j] = x[j];
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_model<'a>(ts: &'a [f64], ys: &'a [f64]) -> impl FnMut(&[f64]) -> Result<Evaluation, ()> + 'a {
        move |p: &[f64]| {
            let r = DVector::from_iterator(ts.len(), ts.iter().zip(ys).map(|(t, y)| y - p[0] * (-p[1] * t).exp()));
            let mut j = DMatrix::zeros(ts.len(), 2);
            for (i, t) in ts.iter().enumerate() {
                let e = (-p[1] * t).exp();
                j[(i, 0)] = -e;
                j[(i, 1)] = p[0] * t * e;
            }
            Ok((r, j))
        }
    }

    #[test]
    fn recovers_noiseless_exponential() {
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 2.5 * (-1.7 * t).exp()).collect();
        let fit = levenberg_marquardt(exp_model(&ts, &ys), &[1.0, 0.5], None, &LmOptions::default()).unwrap();
        assert!((fit.x[0] - 2.5).abs() < 1e-9);
        assert!((fit.x[1] - 1.7).abs() < 1e-9);
        assert!(fit.chi2 < 1e-20);
    }

    #[test]
    fn linear_fit_covariance_matches_normal_equations() {
        // y = a + b t with unit errors: cov = (XᵀX)⁻¹
        let ts = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [0.1, 1.9, 4.2, 5.8, 8.1];
        let eval = |p: &[f64]| -> Result<Evaluation, ()> {
            let r = DVector::from_iterator(5, ts.iter().zip(&ys).map(|(t, y)| y - p[0] - p[1] * t));
            let j = DMatrix::from_fn(5, 2, |i, k| if k == 0 { -1.0 } else { -ts[i] });
            Ok((r, j))
        };
        let fit = levenberg_marquardt(eval, &[0.0, 0.0], None, &LmOptions::default()).unwrap();
        let x = DMatrix::from_fn(5, 2, |i, k| if k == 0 { 1.0 } else { ts[i] });
        let cov = (x.transpose() * &x).try_inverse().unwrap();
        let got = fit.covariance.unwrap();
        assert!((got - cov).amax() < 1e-12);
        assert!((fit.x[1] - 1.99).abs() < 1e-9);
    }

    #[test]
    fn bounds_are_respected() {
        let ts: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 1.0 * (-0.5 * t).exp()).collect();
        let fit = levenberg_marquardt(
            exp_model(&ts, &ys),
            &[1.0, 2.0],
            Some(&[(0.0, 10.0), (0.8, 5.0)]),
            &LmOptions::default(),
        )
        .unwrap();
        assert!((fit.x[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn numeric_jacobian_matches_analytic() {
        let ts = [0.0, 0.5, 1.0];
        let ys = [1.0, 0.5, 0.2];
        let mut m = exp_model(&ts, &ys);
        let (r0, j) = m(&[1.2, 0.9]).unwrap();
        let nj = numeric_jacobian(|p| m(p).map(|e| e.0), &[1.2, 0.9], &r0).unwrap();
        assert!((nj - j).amax() < 1e-6);
    }

    #[test]
    fn underdetermined_rejected() {
        let eval = |_: &[f64]| -> Result<Evaluation, ()> { Ok((DVector::zeros(1), DMatrix::zeros(1, 2))) };
        assert!(matches!(
            levenberg_marquardt(eval, &[0.0, 0.0], None, &LmOptions::default()),
            Err(FitError::Underdetermined { .. })
        ));
    }
}
