//! Cyclic coordinate descent ("shooting") for the loading-weighted Lasso
//!
//! ```text
//! minimize  E_n[(y_i - x_i'b)^2] + (lambda/n) * sum_j psi_j |b_j|
//! ```
//!
//! where `E_n` is the sample mean. No intercept is fitted here; callers
//! center the data first.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdmError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltySpec {
    lambda: f64,
    loadings: Vec<f64>,
}

impl PenaltySpec {
    pub fn new(lambda: f64, loadings: Vec<f64>) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(HdmError::Domain(format!("penalty level must be >= 0, got {lambda}")));
        }
        if let Some(bad) = loadings.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(HdmError::Domain(format!(
                "penalty loadings must be positive and finite, got {bad}"
            )));
        }
        Ok(PenaltySpec { lambda, loadings })
    }

    /// Equal unit loadings.
    pub fn uniform(lambda: f64, p: usize) -> Result<Self> {
        PenaltySpec::new(lambda, vec![1.0; p])
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn loadings(&self) -> &[f64] {
        &self.loadings
    }
}

#[derive(Debug, Clone)]
pub struct SolverControl {
    /// Maximum number of full coordinate sweeps.
    pub max_iter: usize,
    /// Stop once the largest coefficient change in a sweep is below this.
    pub tol: f64,
    /// Warm start; zero when absent.
    pub start: Option<DVector<f64>>,
}

impl Default for SolverControl {
    fn default() -> Self {
        SolverControl {
            max_iter: 1000,
            tol: 1e-8,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub beta: DVector<f64>,
    pub sweeps_used: usize,
    pub converged: bool,
    pub objective: f64,
}

/// `sign(v) * max(|v| - t, 0)`.
#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Lasso objective at `beta`, recomputed from scratch.
pub fn lasso_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    beta: &DVector<f64>,
    penalty: &PenaltySpec,
) -> f64 {
    let n = y.len() as f64;
    let r = y - x * beta;
    r.dot(&r) / n + penalty_term(beta.as_slice(), penalty, n)
}

fn penalty_term(beta: &[f64], penalty: &PenaltySpec, n: f64) -> f64 {
    let l1: f64 = beta
        .iter()
        .zip(&penalty.loadings)
        .map(|(b, w)| w * b.abs())
        .sum();
    penalty.lambda / n * l1
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the weighted Lasso by cyclic coordinate descent.
pub fn shooting_fit(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &PenaltySpec,
    control: &SolverControl,
) -> Result<SolverResult> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(HdmError::Schema(format!("y has {} rows, X has {n}", y.len())));
    }
    if penalty.loadings.len() != p {
        return Err(HdmError::Schema(format!(
            "{} loadings for {p} columns",
            penalty.loadings.len()
        )));
    }
    if !(control.tol > 0.0) || control.max_iter == 0 {
        return Err(HdmError::Domain("solver needs tol > 0 and max_iter >= 1".into()));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(HdmError::Domain("non-finite value in solver input".into()));
    }
    let nf = n as f64;
    let col_sq: Vec<f64> = (0..p)
        .map(|j| {
            let c = x.column(j);
            dot(c.as_slice(), c.as_slice()) / nf
        })
        .collect();
    if penalty.lambda == 0.0 {
        if let Some(j) = col_sq.iter().position(|&s| s == 0.0) {
            return Err(HdmError::Singularity(format!(
                "column {j} is identically zero and the penalty is zero"
            )));
        }
    }
    let thresholds: Vec<f64> = penalty
        .loadings
        .iter()
        .map(|w| penalty.lambda * w / (2.0 * nf))
        .collect();

    let mut beta = match &control.start {
        Some(s) if s.len() == p => s.clone(),
        Some(s) => {
            return Err(HdmError::Schema(format!("warm start has length {}, need {p}", s.len())))
        }
        None => DVector::zeros(p),
    };
    let mut resid = y - x * &beta;
    let mut sweeps = 0;
    let mut converged = false;
    let mut prev_obj = f64::INFINITY;

    while sweeps < control.max_iter {
        sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let xj = x.column(j);
            let xj = xj.as_slice();
            let old = beta[j];
            let rho = dot(xj, resid.as_slice()) / nf + col_sq[j] * old;
            let new = soft_threshold(rho, thresholds[j]) / col_sq[j];
            let delta = new - old;
            if delta != 0.0 {
                beta[j] = new;
                for (r, v) in resid.as_mut_slice().iter_mut().zip(xj) {
                    *r -= v * delta;
                }
                max_change = max_change.max(delta.abs());
            }
        }
        if cfg!(debug_assertions) {
            let obj = resid.dot(&resid) / nf + penalty_term(beta.as_slice(), penalty, nf);
            debug_assert!(
                obj <= prev_obj + 1e-10 * (1.0 + prev_obj.abs()),
                "objective increased from {prev_obj} to {obj}"
            );
            prev_obj = obj;
        }
        if max_change < control.tol {
            converged = true;
            break;
        }
    }
    let objective = lasso_objective(x, y, &beta, penalty);
    Ok(SolverResult {
        beta,
        sweeps_used: sweeps,
        converged,
        objective,
    })
}
