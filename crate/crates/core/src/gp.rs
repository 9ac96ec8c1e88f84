//! Squared-exponential GP regression over scalar time.
//!
//! The posterior mean and its first two time derivatives share one cached
//! solve `alpha = (K + σ_y² I)⁻¹ y`, so derivative queries cost the same as
//! mean queries.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};

/// Diagonal jitter added to every Gram matrix before factorisation.
pub const JITTER: f64 = 1e-9;
/// Maximum accepted relative residual of a Gram solve.
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
/// Conditioning times closer than this replace an existing support point.
pub const DUPLICATE_TIME_TOLERANCE: f64 = 1e-9;

const MAX_REFINEMENTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelParams {
    /// Lengthscale λ in seconds.
    pub lengthscale: f64,
    /// Observation noise σ_y².
    pub noise_variance: f64,
    /// Signal variance σ_f².
    pub signal_variance: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lengthscale: 0.66,
            noise_variance: 0.005,
            signal_variance: 1.0,
        }
    }
}

impl KernelParams {
    pub fn new(lengthscale: f64, noise_variance: f64, signal_variance: f64) -> Result<Self> {
        let p = Self {
            lengthscale,
            noise_variance,
            signal_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale.is_finite() && self.lengthscale > 0.0) {
            return Err(invalid(format!("lengthscale must be > 0, got {}", self.lengthscale)));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(invalid(format!(
                "noise variance must be >= 0, got {}",
                self.noise_variance
            )));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(invalid(format!(
                "signal variance must be > 0, got {}",
                self.signal_variance
            )));
        }
        Ok(())
    }
}

/// Kernel value and its first two derivatives with respect to the first argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelEval {
    pub k: f64,
    pub dk_dt: f64,
    pub d2k_dt2: f64,
}

#[inline]
pub(crate) fn kernel_terms(dt: f64, p: &KernelParams) -> KernelEval {
    let inv_l2 = 1.0 / (p.lengthscale * p.lengthscale);
    let k = p.signal_variance * (-0.5 * dt * dt * inv_l2).exp();
    KernelEval {
        k,
        dk_dt: -dt * inv_l2 * k,
        d2k_dt2: (dt * dt * inv_l2 * inv_l2 - inv_l2) * k,
    }
}

/// Evaluates the SE kernel k(t, t') and its derivatives in `t`.
pub fn kernel_eval(t: f64, t_prime: f64, params: &KernelParams) -> Result<KernelEval> {
    if !t.is_finite() || !t_prime.is_finite() {
        return Err(invalid("kernel arguments must be finite"));
    }
    params.validate()?;
    Ok(kernel_terms(t - t_prime, params))
}

/// Posterior mean and its time derivatives at one query time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub mean: f64,
    pub first_deriv: f64,
    pub second_deriv: f64,
}

fn validate_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(invalid(format!("need at least 2 support times, got {}", times.len())));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(invalid("support times must be finite"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("support times must be strictly increasing"));
    }
    Ok(())
}

pub(crate) fn gram_matrix(times: &[f64], params: &KernelParams) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |i, j| {
        let k = kernel_terms(times[i] - times[j], params).k;
        if i == j {
            k + params.noise_variance + JITTER
        } else {
            k
        }
    })
}

/// Cholesky solver for a symmetric positive definite matrix with residual checks.
#[derive(Debug, Clone)]
pub(crate) struct SpdSolver {
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    norm_inf: f64,
}

impl SpdSolver {
    pub(crate) fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let chol = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| numeric("Gram matrix is not positive definite after jitter"))?;
        let norm_inf = row_sum_norm(&matrix);
        Ok(Self {
            matrix,
            chol,
            norm_inf,
        })
    }

    pub(crate) fn solve(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut x = self.chol.solve(rhs);
        let rhs_norm = rhs.amax();
        for _ in 0..=MAX_REFINEMENTS {
            let residual = rhs - &self.matrix * &x;
            let denom = self.norm_inf * x.amax() + rhs_norm;
            let rel = if denom > 0.0 { residual.amax() / denom } else { 0.0 };
            if !rel.is_finite() {
                return Err(numeric("non-finite residual in Gram solve"));
            }
            if rel <= RESIDUAL_TOLERANCE {
                return Ok(x);
            }
            x += self.chol.solve(&residual);
        }
        Err(numeric("Gram solve residual above tolerance after refinement"))
    }

    pub(crate) fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let b = DMatrix::from_column_slice(rhs.len(), 1, rhs);
        Ok(self.solve(&b)?.as_slice().to_vec())
    }
}

fn row_sum_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Zero-mean GP regressor over scalar time.
#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    support_times: Vec<f64>,
    support_values: Vec<f64>,
    params: KernelParams,
    alpha: Vec<f64>,
}

impl GpModel {
    /// Fits a GP to `(times, values)`.
    pub fn fit(times: &[f64], values: &[f64], params: KernelParams) -> Result<Self> {
        let mut models = Self::fit_shared(times, &[values], params)?;
        Ok(models.remove(0))
    }

    /// Fits several value columns on one time grid with a single factorisation.
    pub fn fit_shared(times: &[f64], columns: &[&[f64]], params: KernelParams) -> Result<Vec<Self>> {
        params.validate()?;
        validate_times(times)?;
        for c in columns {
            if c.len() != times.len() {
                return Err(invalid(format!(
                    "{} values for {} support times",
                    c.len(),
                    times.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(invalid("support values must be finite"));
            }
        }
        let solver = SpdSolver::new(gram_matrix(times, &params))?;
        columns
            .iter()
            .map(|c| {
                Ok(Self {
                    support_times: times.to_vec(),
                    support_values: c.to_vec(),
                    params,
                    alpha: solver.solve_vec(c)?,
                })
            })
            .collect()
    }

    pub fn support_times(&self) -> &[f64] {
        &self.support_times
    }

    pub fn support_values(&self) -> &[f64] {
        &self.support_values
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Posterior mean and derivatives at `t`.
    pub fn query(&self, t: f64) -> Result<QueryResult> {
        if !t.is_finite() {
            return Err(invalid("query time must be finite"));
        }
        Ok(self.evaluate(t))
    }

    pub(crate) fn evaluate(&self, t: f64) -> QueryResult {
        let mut out = QueryResult {
            mean: 0.0,
            first_deriv: 0.0,
            second_deriv: 0.0,
        };
        for (ti, a) in self.support_times.iter().zip(&self.alpha) {
            let ke = kernel_terms(t - ti, &self.params);
            out.mean += ke.k * a;
            out.first_deriv += ke.dk_dt * a;
            out.second_deriv += ke.d2k_dt2 * a;
        }
        out
    }

    /// Returns a model whose support additionally contains `(t_o, y_o)`.
    ///
    /// A support time within 1e-9 s of `t_o` has its value replaced instead.
    pub fn condition(&self, t_o: f64, y_o: f64) -> Result<Self> {
        if !t_o.is_finite() || !y_o.is_finite() {
            return Err(invalid("conditioning point must be finite"));
        }
        let first = self.support_times[0];
        let last = *self.support_times.last().unwrap_or(&first);
        let lambda = self.params.lengthscale;
        if t_o < first - lambda || t_o > last + lambda {
            log::warn!("conditioning time {t_o} lies more than one lengthscale outside the support");
        }
        let mut times = self.support_times.clone();
        let mut values = self.support_values.clone();
        match times
            .iter()
            .position(|t| (t - t_o).abs() <= DUPLICATE_TIME_TOLERANCE)
        {
            Some(i) => values[i] = y_o,
            None => {
                let i = times.partition_point(|t| *t < t_o);
                times.insert(i, t_o);
                values.insert(i, y_o);
            }
        }
        Self::fit(&times, &values, self.params)
    }
}

/// Fits a GP; see [`GpModel::fit`].
pub fn fit_gp(times: &[f64], values: &[f64], params: KernelParams) -> Result<GpModel> {
    GpModel::fit(times, values, params)
}

/// Queries a GP; see [`GpModel::query`].
pub fn query(model: &GpModel, t: f64) -> Result<QueryResult> {
    model.query(t)
}

/// Conditions a GP; see [`GpModel::condition`].
pub fn condition(model: &GpModel, t_o: f64, y_o: f64) -> Result<GpModel> {
    model.condition(t_o, y_o)
}

/// Linear maps from support values to the posterior mean and its derivatives.
///
/// For fixed support times the posterior is linear in the values:
/// `mean(t) = w(t)·y`. Least-squares adaptation works directly on these rows.
#[derive(Debug, Clone)]
pub struct GpBasis {
    times: Vec<f64>,
    params: KernelParams,
    solver: SpdSolver,
}

/// Row-stacked weights for a batch of query times (one row per time).
#[derive(Debug, Clone)]
pub struct BasisRows {
    pub value: DMatrix<f64>,
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
}

impl GpBasis {
    pub fn new(times: &[f64], params: KernelParams) -> Result<Self> {
        params.validate()?;
        validate_times(times)?;
        Ok(Self {
            times: times.to_vec(),
            params,
            solver: SpdSolver::new(gram_matrix(times, &params))?,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self, query_times: &[f64]) -> Result<BasisRows> {
        let n = self.times.len();
        let q = query_times.len();
        let mut k0 = DMatrix::zeros(n, q);
        let mut k1 = DMatrix::zeros(n, q);
        let mut k2 = DMatrix::zeros(n, q);
        for (c, &t) in query_times.iter().enumerate() {
            if !t.is_finite() {
                return Err(invalid("query time must be finite"));
            }
            for (r, ti) in self.times.iter().enumerate() {
                let ke = kernel_terms(t - ti, &self.params);
                k0[(r, c)] = ke.k;
                k1[(r, c)] = ke.dk_dt;
                k2[(r, c)] = ke.d2k_dt2;
            }
        }
        Ok(BasisRows {
            value: self.solver.solve(&k0)?.transpose(),
            first: self.solver.solve(&k1)?.transpose(),
            second: self.solver.solve(&k2)?.transpose(),
        })
    }
}
