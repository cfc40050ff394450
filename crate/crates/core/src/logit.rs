//! Penalized logistic regression with a fixed theory-driven penalty.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdmError, Result};
use crate::linalg::{center_columns, hstack, least_squares, mean, ones_column};
use crate::prob::normal_quantile;
use crate::rlasso::{
    goodness_of_fit, FitKind, Homoscedastic, LambdaStart, PenaltyMethod, PenaltyResult,
    RlassoConfig, RlassoFit,
};
use crate::solver::{soft_threshold, PenaltySpec, SolverControl};

const MIN_WEIGHT: f64 = 1e-5;

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn mean_nll(y: &[f64], eta: &[f64]) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(yi, e)| softplus(*e) - yi * e)
        .sum::<f64>()
        / y.len() as f64
}

#[derive(Debug, Clone)]
pub struct LogisticSolution {
    pub intercept: f64,
    pub beta: DVector<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
}

fn linear_index(x: &DMatrix<f64>, b0: f64, beta: &DVector<f64>) -> DVector<f64> {
    (x * beta).add_scalar(b0)
}

fn penalized_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    b0: f64,
    beta: &DVector<f64>,
    spec: &PenaltySpec,
) -> f64 {
    let eta = linear_index(x, b0, beta);
    let l1: f64 = beta
        .iter()
        .zip(spec.loadings())
        .map(|(b, w)| w * b.abs())
        .sum();
    mean_nll(y.as_slice(), eta.as_slice()) + spec.lambda() / y.len() as f64 * l1
}

/// Minimizes `mean logistic NLL + (lambda/n) sum_j psi_j |b_j|` by iteratively
/// reweighted coordinate descent with backtracking. The intercept, if any,
/// is unpenalized.
pub fn penalized_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: bool,
    spec: &PenaltySpec,
    control: &SolverControl,
) -> Result<LogisticSolution> {
    let (n, p) = x.shape();
    if spec.loadings().len() != p || y.len() != n {
        return Err(HdmError::Schema("logistic fit: dimension mismatch".into()));
    }
    let nf = n as f64;
    let ybar = mean(y.as_slice()).clamp(1e-6, 1.0 - 1e-6);
    let mut b0 = if intercept { (ybar / (1.0 - ybar)).ln() } else { 0.0 };
    let mut beta = control.start.clone().unwrap_or_else(|| DVector::zeros(p));
    let thresholds: Vec<f64> = spec.loadings().iter().map(|w| spec.lambda() * w / nf).collect();
    let mut obj = penalized_objective(x, y, b0, &beta, spec);
    let max_outer = 100;
    let mut converged = false;
    let mut outer = 0;

    while outer < max_outer {
        outer += 1;
        let eta = linear_index(x, b0, &beta);
        let prob = eta.map(sigmoid);
        let w = prob.map(|q| (q * (1.0 - q)).max(MIN_WEIGHT));
        // working residual z - eta
        let mut r = DVector::from_fn(n, |i, _| (y[i] - prob[i]) / w[i]);
        let sum_w = w.sum();
        let col_w: Vec<f64> = (0..p)
            .map(|j| x.column(j).iter().zip(w.iter()).map(|(a, wi)| wi * a * a).sum::<f64>() / nf)
            .collect();
        let (mut nb0, mut nbeta) = (b0, beta.clone());
        for _ in 0..control.max_iter {
            let mut change = 0.0f64;
            if intercept {
                let d0 = r.iter().zip(w.iter()).map(|(ri, wi)| ri * wi).sum::<f64>() / sum_w;
                nb0 += d0;
                r.add_scalar_mut(-d0);
                change = change.max(d0.abs());
            }
            for j in 0..p {
                if col_w[j] == 0.0 {
                    continue;
                }
                let xj = x.column(j);
                let old = nbeta[j];
                let rho = xj
                    .iter()
                    .zip(r.iter())
                    .zip(w.iter())
                    .map(|((a, ri), wi)| wi * a * ri)
                    .sum::<f64>()
                    / nf
                    + col_w[j] * old;
                let new = soft_threshold(rho, thresholds[j]) / col_w[j];
                let delta = new - old;
                if delta != 0.0 {
                    nbeta[j] = new;
                    r.axpy(-delta, &xj, 1.0);
                    change = change.max(delta.abs());
                }
            }
            if change < control.tol {
                break;
            }
        }
        // backtrack along the proximal Newton direction
        let (db0, dbeta) = (nb0 - b0, &nbeta - &beta);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cb0 = b0 + step * db0;
            let cbeta = &beta + &dbeta * step;
            let cobj = penalized_objective(x, y, cb0, &cbeta, spec);
            if cobj <= obj + 1e-12 * (1.0 + obj.abs()) {
                b0 = cb0;
                beta = cbeta;
                obj = cobj;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        let moved = step * db0.abs().max(dbeta.amax());
        if !accepted || moved < control.tol {
            converged = true;
            break;
        }
    }
    Ok(LogisticSolution {
        intercept: b0,
        beta,
        outer_iterations: outer,
        converged,
    })
}

#[derive(Debug, Clone)]
pub struct LogisticRefit {
    /// Intercept first (when requested), then slopes.
    pub coef: DVector<f64>,
    pub separation: bool,
    pub converged: bool,
}

/// Unpenalized logistic regression by Newton–Raphson.
pub fn logistic_newton(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool, max_iter: usize) -> LogisticRefit {
    let design = if intercept {
        hstack(&[&ones_column(x.nrows()), x])
    } else {
        x.clone()
    };
    let k = design.ncols();
    let mut coef = DVector::zeros(k);
    if intercept {
        let ybar = mean(y.as_slice()).clamp(1e-6, 1.0 - 1e-6);
        coef[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut converged = false;
    let mut separation = false;
    for _ in 0..max_iter {
        let eta = &design * &coef;
        let prob = eta.map(sigmoid);
        let grad = design.tr_mul(&(y - &prob));
        if grad.amax() < 1e-10 * y.len() as f64 {
            converged = true;
            break;
        }
        let sw = prob.map(|q| (q * (1.0 - q)).max(1e-12).sqrt());
        let mut wx = design.clone();
        for i in 0..wx.nrows() {
            wx.row_mut(i).scale_mut(sw[i]);
        }
        // Newton step solves (X'WX) d = X'(y - p) through the weighted LS form
        let rhs = DVector::from_fn(y.len(), |i, _| (y[i] - prob[i]) / sw[i]);
        let step = least_squares(&wx, &rhs).coef;
        coef += step;
        if coef.amax() > 30.0 {
            separation = true;
        }
    }
    let prob = (&design * &coef).map(sigmoid);
    if prob.iter().any(|&q| !(1e-10..=1.0 - 1e-10).contains(&q)) {
        separation = true;
    }
    LogisticRefit {
        coef,
        separation,
        converged,
    }
}

fn check_binary(y: &DVector<f64>) -> Result<()> {
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(HdmError::Domain("logistic response must be 0/1".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(HdmError::Domain("logistic response needs both classes".into()));
    }
    Ok(())
}

/// Logistic Lasso / Post-Lasso with `lambda = (c/2) sqrt(n) Φ⁻¹(1 − γ/(2p))`
/// and loadings `sqrt(E_n x_j²) / 2`.
pub fn rlassologit(x: &DMatrix<f64>, y: &DVector<f64>, config: &RlassoConfig) -> Result<RlassoFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(HdmError::Schema(format!("y has {} rows, X has {n}", y.len())));
    }
    if p == 0 {
        return Err(HdmError::Domain("rlassologit needs at least one regressor".into()));
    }
    check_binary(y)?;
    let opts = &config.penalty;
    if opts.homoscedastic != Homoscedastic::None {
        // lambda_start is optional here
        let mut o = opts.clone();
        o.homoscedastic = Homoscedastic::False;
        o.validate(p)?;
    } else {
        opts.validate(p)?;
    }
    let (xc, x_means) = if config.intercept {
        center_columns(x)
    } else {
        (x.clone(), vec![0.0; p])
    };
    let nf = n as f64;
    let loadings: Vec<f64> = (0..p)
        .map(|j| (xc.column(j).iter().map(|a| a * a).sum::<f64>() / nf).sqrt() / 2.0)
        .map(|l| if l > 0.0 { l } else { f64::MIN_POSITIVE.sqrt() })
        .collect();
    let c = opts.c_for(config.post);
    let (lambda, per) = match &opts.lambda_start {
        Some(LambdaStart::Scalar(l)) => (*l, None),
        Some(LambdaStart::PerCoefficient(v)) => (v.iter().cloned().fold(0.0, f64::max), Some(v.clone())),
        None => (
            c / 2.0 * nf.sqrt() * normal_quantile(1.0 - opts.gamma / (2.0 * p as f64))?,
            None,
        ),
    };
    let penalty = PenaltyResult {
        lambda,
        lambda_per_coefficient: per,
        loadings,
        sigma_hat: None,
        method: PenaltyMethod::Logistic,
    };
    let sol = penalized_logistic(&xc, y, config.intercept, &penalty.solver_spec()?, &config.control)?;
    let mut selected: Vec<usize> = (0..p).filter(|&j| sol.beta[j] != 0.0).collect();
    let mut coefficients = sol.beta.clone();
    let mut b0 = sol.intercept;
    let mut separation = false;
    if config.post {
        coefficients = DVector::zeros(p);
        let sub = xc.select_columns(&selected);
        let refit = logistic_newton(&sub, y, config.intercept, 100);
        separation = refit.separation;
        let off = usize::from(config.intercept);
        b0 = if config.intercept { refit.coef[0] } else { 0.0 };
        for (k, &j) in selected.iter().enumerate() {
            coefficients[j] = refit.coef[k + off];
        }
        selected.retain(|&j| coefficients[j] != 0.0);
    }
    let intercept = config.intercept.then(|| {
        b0 - x_means
            .iter()
            .zip(coefficients.iter())
            .map(|(m, b)| m * b)
            .sum::<f64>()
    });
    let eta = (x * &coefficients).add_scalar(intercept.unwrap_or(0.0));
    let residuals = y - eta.map(sigmoid);
    let (r_squared, adj_r_squared) = goodness_of_fit(y, &residuals, config.intercept, selected.len());
    Ok(RlassoFit {
        kind: FitKind::Logistic,
        coefficients,
        intercept,
        selected,
        residuals,
        penalty,
        post: config.post,
        iterations_run: sol.outer_iterations,
        penalty_converged: sol.converged,
        r_squared,
        adj_r_squared,
        sup_score: None,
        rank_deficient: false,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::RngStream;
    use crate::sim::logistic_sparse;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn balanced(n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
        let mut r = RngStream::new(seed, 0).rng();
        let x = DMatrix::from_fn(n, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| {
            let q = sigmoid(0.3 + 0.8 * x[(i, 0)] - 0.5 * x[(i, 1)]);
            if r.random::<f64>() < q { 1.0 } else { 0.0 }
        });
        (x, y)
    }

    /// Newton iterations with an explicit Hessian, stopped at gradient norm < 1e-10.
    fn newton_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
        let n = x.nrows();
        let mut design = DMatrix::from_element(n, x.ncols() + 1, 1.0);
        for j in 0..x.ncols() {
            design.set_column(j + 1, &x.column(j));
        }
        let mut b = DVector::zeros(design.ncols());
        for _ in 0..100 {
            let prob = (&design * &b).map(|t| 1.0 / (1.0 + (-t).exp()));
            let grad = design.transpose() * (y - &prob);
            if grad.norm() < 1e-10 {
                break;
            }
            let mut h = DMatrix::zeros(b.len(), b.len());
            for i in 0..n {
                let row = design.row(i).transpose();
                h += &row * row.transpose() * (prob[i] * (1.0 - prob[i]));
            }
            b += h.cholesky().unwrap().solve(&grad);
        }
        b
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) == 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        assert!((softplus(-50.0) - (-50.0f64).exp()).abs() < 1e-30);
        assert!((softplus(50.0) - 50.0).abs() < 1e-15);
    }

    #[test]
    fn unpenalized_fit_matches_newton_oracle() {
        let (x, y) = balanced(200, 1);
        let oracle = newton_oracle(&x, &y);
        let spec = PenaltySpec::uniform(0.0, 2).unwrap();
        let sol = penalized_logistic(&x, &y, true, &spec, &SolverControl::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.intercept - oracle[0]).abs() < 1e-6);
        for j in 0..2 {
            assert!((sol.beta[j] - oracle[j + 1]).abs() < 1e-6);
        }
        let refit = logistic_newton(&x, &y, true, 100);
        assert!(refit.converged && !refit.separation);
        assert!((refit.coef - oracle).amax() < 1e-6);
    }

    #[test]
    fn huge_penalty_leaves_intercept_only() {
        let (x, y) = balanced(150, 2);
        let cfg = RlassoConfig {
            post: false,
            penalty: crate::rlasso::PenaltyOptions {
                lambda_start: Some(LambdaStart::Scalar(1e6)),
                ..Default::default()
            },
            ..RlassoConfig::auxiliary()
        };
        let fit = rlassologit(&x, &y, &cfg).unwrap();
        assert!(fit.selected.is_empty());
        let ybar = y.mean();
        assert!((fit.intercept.unwrap() - (ybar / (1.0 - ybar)).ln()).abs() < 1e-8);
    }

    #[test]
    fn default_penalty_level_and_loadings() {
        let (x, y) = balanced(200, 3);
        let fit = rlassologit(&x, &y, &RlassoConfig::auxiliary()).unwrap();
        // c = 1.1, gamma = 0.1, p = 2: quantile at 0.975
        let expected = 1.1 / 2.0 * 200f64.sqrt() * 1.959_963_984_540_054;
        assert!((fit.penalty.lambda - expected).abs() < 1e-9);
        let (xc, _) = center_columns(&x);
        for j in 0..2 {
            let rms = (xc.column(j).iter().map(|a| a * a).sum::<f64>() / 200.0).sqrt();
            assert!((fit.penalty.loadings[j] - rms / 2.0).abs() < 1e-14);
        }
        assert_eq!(fit.kind, FitKind::Logistic);
        let prob = fit.predict_response(&x).unwrap();
        assert!((&y - prob - &fit.residuals).amax() < 1e-12);
    }

    #[test]
    fn post_refit_on_selected_matches_oracle() {
        let s = logistic_sparse(300, 50, RngStream::new(4, 0));
        let fit = rlassologit(&s.x, &s.y, &RlassoConfig::auxiliary()).unwrap();
        assert!(fit.selected.contains(&0) && fit.selected.contains(&1));
        let sub = s.x.select_columns(&fit.selected);
        let oracle = newton_oracle(&sub, &s.y);
        assert!((fit.intercept.unwrap() - oracle[0]).abs() < 1e-6);
        for (k, &j) in fit.selected.iter().enumerate() {
            assert!((fit.coefficients[j] - oracle[k + 1]).abs() < 1e-6);
        }
    }

    #[test]
    fn recovers_two_signals() {
        let hits = (0..10)
            .filter(|&seed| {
                let s = logistic_sparse(300, 50, RngStream::new(seed, 0));
                let fit = rlassologit(&s.x, &s.y, &RlassoConfig::auxiliary()).unwrap();
                fit.selected.contains(&0) && fit.selected.contains(&1)
            })
            .count();
        assert!(hits >= 9);
    }

    #[test]
    fn separation_is_flagged() {
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 - 19.5);
        let y = DVector::from_fn(40, |i, _| if i >= 20 { 1.0 } else { 0.0 });
        let refit = logistic_newton(&x, &y, true, 100);
        assert!(refit.separation);
    }

    #[test]
    fn rejects_non_binary_or_single_class() {
        let (x, _) = balanced(20, 5);
        let cfg = RlassoConfig::auxiliary();
        let y = DVector::from_fn(20, |i, _| i as f64 % 3.0);
        assert!(matches!(rlassologit(&x, &y, &cfg), Err(HdmError::Domain(_))));
        let ones = DVector::from_element(20, 1.0);
        assert!(matches!(rlassologit(&x, &ones, &cfg), Err(HdmError::Domain(_))));
    }
}
