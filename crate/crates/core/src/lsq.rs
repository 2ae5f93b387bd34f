//! Levenberg–Marquardt for small dense least-squares problems.
//!
//! The caller supplies weighted residuals and their Jacobian; the returned
//! covariance is `(JᵀJ)⁻¹` at the solution, which is the parameter
//! covariance when residuals are already divided by their standard errors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsqOptions {
    /// Stop once every parameter moves by less than this, relative.
    pub step_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self { step_tolerance: 1e-10, max_iterations: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Euclidean norm of the weighted residuals at the solution.
    pub residual_norm: f64,
    pub initial_residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LsqSolution {
    pub fn stderr(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

/// Minimizes `|r(p)|²` from `start`.
///
/// `model` returns the residual vector and Jacobian at `p`, or `None` when
/// `p` is outside the admissible region; such trial steps are rejected like
/// uphill ones.
pub fn levenberg_marquardt<F>(start: &[f64], opts: &LsqOptions, model: F) -> Result<LsqSolution>
where
    F: Fn(&[f64]) -> Option<(DVector<f64>, DMatrix<f64>)>,
{
    let n = start.len();
    let mut p = DVector::from_column_slice(start);
    let (mut r, mut jac) = model(p.as_slice()).ok_or_else(|| Error::FitDiverged("inadmissible start".into()))?;
    if r.len() < n {
        return Err(Error::InsufficientSamples { needed: n, available: r.len() });
    }
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::FitDiverged("non-finite residuals at start".into()));
    }
    let initial = cost.sqrt();
    let mut mu = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }
        let mut stepped = false;
        while mu < 1e20 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * jtj[(i, i)].max(1e-300);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                mu *= 4.0;
                continue;
            };
            let trial = &p + &delta;
            if let Some((tr, tj)) = model(trial.as_slice()) {
                let tc = tr.norm_squared();
                if tc.is_finite() && tc <= cost {
                    let small = delta.iter().zip(trial.iter()).all(|(d, v)| d.abs() <= opts.step_tolerance * v.abs().max(1e-300));
                    p = trial;
                    r = tr;
                    jac = tj;
                    cost = tc;
                    mu = (mu / 3.0).max(1e-12);
                    stepped = true;
                    converged = small;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !stepped {
            // no descent direction left at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitDiverged("parameters became non-finite".into()));
    }
    let jtj = jac.transpose() * &jac;
    let covariance = jtj
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::FitDiverged("singular normal matrix at the solution".into()))?;
    Ok(LsqSolution {
        params: p.as_slice().to_vec(),
        covariance,
        residual_norm: cost.sqrt(),
        initial_residual_norm: initial,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_linear_problem_exactly() {
        // y = 2x + 1 at five points
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let sol = levenberg_marquardt(&[0.0, 0.0], &LsqOptions::default(), |p| {
            let r = DVector::from_iterator(5, xs.iter().map(|x| p[0] * x + p[1] - (2.0 * x + 1.0)));
            let j = DMatrix::from_fn(5, 2, |i, c| if c == 0 { xs[i] } else { 1.0 });
            Some((r, j))
        })
        .unwrap();
        assert!((sol.params[0] - 2.0).abs() < 1e-10 && (sol.params[1] - 1.0).abs() < 1e-10);
        assert!(sol.converged);
        assert!(sol.residual_norm <= sol.initial_residual_norm);
    }

    #[test]
    fn rosenbrock_converges() {
        let sol = levenberg_marquardt(&[-1.2, 1.0], &LsqOptions { max_iterations: 500, ..Default::default() }, |p| {
            let r = DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]);
            let j = DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0]);
            Some((r, j))
        })
        .unwrap();
        assert!((sol.params[0] - 1.0).abs() < 1e-8 && (sol.params[1] - 1.0).abs() < 1e-8, "{:?}", sol.params);
    }

    #[test]
    fn inadmissible_start_fails() {
        let r = levenberg_marquardt(&[1.0], &LsqOptions::default(), |_| None);
        assert!(matches!(r, Err(Error::FitDiverged(_))));
    }
}
