//! Damped (Levenberg–Marquardt) nonlinear least squares.
//!
//! Problems supply weighted residuals `data − model` and the weighted Jacobian
//! of the model. Problems with model-dependent weights refresh them once per
//! outer iteration through [`Problem::refresh_weights`]; step acceptance always
//! compares costs under the same weights, and the fixed point of the refreshed
//! iteration is the corresponding score equation.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

pub trait Problem {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Fills `residuals` with weighted `data − model`; when `jacobian` is
    /// given, fills it with ∂(weighted model)/∂params.
    fn evaluate(&self, params: &[f64], residuals: &mut DVector<f64>, jacobian: Option<&mut DMatrix<f64>>);

    fn refresh_weights(&mut self, _params: &[f64]) {}

    /// Rejects steps that leave the model's domain (e.g. negative widths).
    fn admissible(&self, _params: &[f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Converged when every |Δp_i| ≤ tol·(|p_i| + tol).
    pub rel_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-8,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Σ r² at the solution, with the final weights.
    pub cost: f64,
    /// Σ r² at the starting point, with the starting weights.
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// JᵀJ at the solution.
    pub normal_matrix: DMatrix<f64>,
    pub n_residuals: usize,
}

impl LmOutcome {
    pub fn dof(&self) -> usize {
        self.n_residuals.saturating_sub(self.params.len())
    }

    pub fn reduced_chi2(&self) -> f64 {
        match self.dof() {
            0 => 0.0,
            d => self.cost / d as f64,
        }
    }

    /// (JᵀJ)⁻¹, unscaled.
    pub fn inverse_normal(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.normal_matrix)
    }

    /// (JᵀJ)⁻¹ scaled by the residual variance.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        Ok(self.inverse_normal()? * self.reduced_chi2())
    }
}

pub(crate) fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // Jacobi preconditioning keeps badly scaled parameters (counts vs. px)
    // from tripping the Cholesky factorization.
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::DegenerateFit);
    }
    let s: Vec<f64> = d.iter().map(|v| 1.0 / v.sqrt()).collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| m[(i, j)] * s[i] * s[j]);
    let inv = scaled.cholesky().ok_or(Error::DegenerateFit)?.inverse();
    let out = DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * s[i] * s[j]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit);
    }
    Ok(out)
}

pub fn minimize<P: Problem>(problem: &mut P, start: &[f64], opts: &LmOptions) -> Result<LmOutcome> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    if start.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} parameters, got {}",
            start.len()
        )));
    }
    if m < n {
        return Err(Error::FitFailure(format!(
            "{m} residuals cannot constrain {n} parameters"
        )));
    }
    if !problem.admissible(start) {
        return Err(Error::FitFailure("starting point outside the model domain".into()));
    }

    let mut p = start.to_vec();
    let mut r = DVector::zeros(m);
    let mut j = DMatrix::zeros(m, n);
    problem.refresh_weights(&p);
    problem.evaluate(&p, &mut r, Some(&mut j));
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::FitFailure("non-finite residuals at start".into()));
    }
    let initial_cost = cost;

    let mut lambda = opts.initial_lambda;
    let mut r_trial = DVector::zeros(m);
    let mut trial = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let a = j.tr_mul(&j);
        let g = j.tr_mul(&r);
        let mut accepted_step: Option<Vec<f64>> = None;

        while lambda <= 1e16 {
            let mut damped = a.clone();
            for i in 0..n {
                damped[(i, i)] += lambda * a[(i, i)].max(1e-300);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&g);
            for i in 0..n {
                trial[i] = p[i] + delta[i];
            }
            if delta.iter().any(|d| !d.is_finite()) || !problem.admissible(&trial) {
                lambda *= 10.0;
                continue;
            }
            problem.evaluate(&trial, &mut r_trial, None);
            let trial_cost = r_trial.norm_squared();
            if trial_cost.is_finite() && trial_cost <= cost {
                accepted_step = Some(delta.iter().copied().collect());
                p.copy_from_slice(&trial);
                lambda = (lambda / 10.0).max(1e-12);
                break;
            }
            lambda *= 10.0;
        }

        let Some(step) = accepted_step else {
            // No descent direction left at working precision.
            converged = true;
            break;
        };

        let small = step
            .iter()
            .zip(&p)
            .all(|(d, v)| d.abs() <= opts.rel_tolerance * (v.abs() + opts.rel_tolerance));
        problem.refresh_weights(&p);
        problem.evaluate(&p, &mut r, Some(&mut j));
        cost = r.norm_squared();
        if small {
            converged = true;
            break;
        }
    }

    Ok(LmOutcome {
        params: p,
        cost,
        initial_cost,
        iterations,
        converged,
        normal_matrix: j.tr_mul(&j),
        n_residuals: m,
    })
}

/// Central-difference Jacobian of the weighted model, for gradient checks.
pub fn numeric_jacobian<P: Problem>(problem: &P, params: &[f64]) -> DMatrix<f64> {
    let n = problem.n_params();
    let m = problem.n_residuals();
    let mut jac = DMatrix::zeros(m, n);
    let mut rp = DVector::zeros(m);
    let mut rm = DVector::zeros(m);
    let mut p = params.to_vec();
    for i in 0..n {
        let h = 1e-6 * params[i].abs().max(1e-3);
        p[i] = params[i] + h;
        problem.evaluate(&p, &mut rp, None);
        p[i] = params[i] - h;
        problem.evaluate(&p, &mut rm, None);
        p[i] = params[i];
        // residual = data − model, so ∂model = −∂residual
        for k in 0..m {
            jac[(k, i)] = -(rp[k] - rm[k]) / (2.0 * h);
        }
    }
    jac
}
