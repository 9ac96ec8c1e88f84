//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.
//!
//! Steps are only accepted when the objective does not increase, so the
//! recorded cost history is non-increasing by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{numeric, Result};

const MAX_DAMPING_ATTEMPTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub x: DVector<f64>,
    /// Sum of squared residuals at the start and after every accepted step.
    pub cost_history: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Minimises `‖residual(x)‖²` starting from `x0`.
pub fn minimize<R, J>(x0: DVector<f64>, mut residual: R, mut jacobian: J, opts: &LmOptions) -> Result<LmReport>
where
    R: FnMut(&DVector<f64>) -> DVector<f64>,
    J: FnMut(&DVector<f64>) -> DMatrix<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut r = residual(&x);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(numeric("non-finite objective at the initial point"));
    }
    let mut history = vec![cost];
    if n == 0 {
        return Ok(LmReport {
            x,
            cost_history: history,
            converged: true,
            iterations: 0,
        });
    }

    let mut mu = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    'outer: while iterations < opts.max_iterations {
        let jac = jacobian(&x);
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &r;
        if grad.amax() == 0.0 {
            converged = true;
            break;
        }
        let scale = jtj.diagonal().map(|d| d.max(1e-12));
        let mut accepted = None;
        for _ in 0..MAX_DAMPING_ATTEMPTS {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += mu * scale[i];
            }
            let Some(chol) = a.cholesky() else {
                mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
                continue;
            };
            let step = -chol.solve(&grad);
            let step_norm = step.norm();
            if step_norm < opts.step_tolerance {
                converged = true;
                break 'outer;
            }
            let x_new = &x + &step;
            let r_new = residual(&x_new);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new <= cost {
                accepted = Some((x_new, r_new, cost_new, step_norm));
                mu = if mu < 1e-10 { 0.0 } else { mu * 0.1 };
                break;
            }
            mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
        }
        match accepted {
            // No damping level yields descent: the iterate is stationary to
            // working precision.
            None => {
                converged = true;
                break;
            }
            Some((x_new, r_new, cost_new, step_norm)) => {
                iterations += 1;
                x = x_new;
                r = r_new;
                cost = cost_new;
                history.push(cost);
                if step_norm < opts.step_tolerance {
                    converged = true;
                    break;
                }
            }
        }
    }
    Ok(LmReport {
        x,
        cost_history: history,
        converged,
        iterations,
    })
}
