//! Lasso and Post-Lasso with data-driven penalty level and loadings.
//!
//! Four penalty regimes are supported (homoscedastic or heteroscedastic
//! errors, design-independent Gaussian quantile or simulated design-dependent
//! quantile), plus a user-fixed level. Residuals start from a small OLS on
//! the regressors most correlated with the response, and the penalty is then
//! refined by alternating fit and penalty updates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::linalg::{self, center, center_columns, least_squares};
use crate::par;
use crate::prob::{empirical_quantile_in_place, fill_multipliers, normal_quantile, MultiplierKind, RngStream};
use crate::solver::{shooting_fit, PenaltySpec, SolverControl};

/// Error-variance assumption behind the penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Homoscedastic {
    True,
    False,
    /// Use `lambda_start` verbatim with heteroscedastic loadings.
    None,
}

impl std::str::FromStr for Homoscedastic {
    type Err = HdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "true" => Ok(Homoscedastic::True),
            "false" => Ok(Homoscedastic::False),
            "none" => Ok(Homoscedastic::None),
            other => Err(HdmError::Schema(format!(
                "homoscedastic must be true, false or none, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaStart {
    Scalar(f64),
    PerCoefficient(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyOptions {
    pub homoscedastic: Homoscedastic,
    pub x_dependent: bool,
    /// Slack constant; `None` means 1.1 for Post-Lasso and 0.5 for Lasso.
    pub c: Option<f64>,
    pub gamma: f64,
    pub lambda_start: Option<LambdaStart>,
    /// Draws used for simulated (design-dependent) quantiles.
    pub num_sim: usize,
    /// Maximum number of fit/penalty refinement passes.
    pub num_iter: usize,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        PenaltyOptions {
            homoscedastic: Homoscedastic::False,
            x_dependent: false,
            c: None,
            gamma: 0.1,
            lambda_start: None,
            num_sim: 5000,
            num_iter: 15,
        }
    }
}

impl PenaltyOptions {
    pub fn c_for(&self, post: bool) -> f64 {
        self.c.unwrap_or(if post { 1.1 } else { 0.5 })
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(HdmError::Domain(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(HdmError::Domain(format!("c must be positive, got {c}")));
            }
        }
        if self.num_sim == 0 || self.num_iter == 0 {
            return Err(HdmError::Domain("num_sim and num_iter must be >= 1".into()));
        }
        match (&self.lambda_start, self.homoscedastic) {
            (None, Homoscedastic::None) => {
                return Err(HdmError::Domain(
                    "homoscedastic = none requires lambda_start".into(),
                ))
            }
            (Some(LambdaStart::Scalar(l)), _) if !(*l > 0.0 && l.is_finite()) => {
                return Err(HdmError::Domain(format!("lambda_start must be positive, got {l}")))
            }
            (Some(LambdaStart::PerCoefficient(v)), _) => {
                if v.len() != p {
                    return Err(HdmError::Schema(format!(
                        "lambda_start has {} entries for {p} regressors",
                        v.len()
                    )));
                }
                if v.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                    return Err(HdmError::Domain("lambda_start entries must be positive".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMethod {
    HomoscedasticXIndependent,
    HomoscedasticXDependent,
    HeteroscedasticXIndependent,
    HeteroscedasticXDependent,
    /// User-supplied level with heteroscedastic loadings.
    Fixed,
    /// Penalized logistic regression.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyResult {
    pub lambda: f64,
    /// Per-coefficient levels, set only when a vector `lambda_start` is used.
    pub lambda_per_coefficient: Option<Vec<f64>>,
    pub loadings: Vec<f64>,
    pub sigma_hat: Option<f64>,
    pub method: PenaltyMethod,
}

impl PenaltyResult {
    /// Penalty handed to the coordinate-descent solver.
    pub fn solver_spec(&self) -> Result<PenaltySpec> {
        match &self.lambda_per_coefficient {
            Some(levels) => PenaltySpec::new(
                1.0,
                levels.iter().zip(&self.loadings).map(|(l, w)| l * w).collect(),
            ),
            None => PenaltySpec::new(self.lambda, self.loadings.clone()),
        }
    }

    fn relative_change(&self, other: &PenaltyResult) -> f64 {
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
        let mut m = rel(self.lambda, other.lambda);
        for (a, b) in self.loadings.iter().zip(&other.loadings) {
            m = m.max(rel(*a, *b));
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct InitialResiduals {
    pub residuals: DVector<f64>,
    /// Columns used, in decreasing order of absolute correlation.
    pub columns: Vec<usize>,
    /// The sub-design was singular and a pseudo-inverse was used.
    pub pseudo_inverse: bool,
}

fn abs_correlation(x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<f64> {
    let (yc, _) = center(y);
    let syy = yc.dot(&yc);
    (0..x.ncols())
        .map(|j| {
            let col = x.column(j);
            let m = linalg::mean(col.as_slice());
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for (a, b) in col.iter().zip(yc.iter()) {
                sxy += (a - m) * b;
                sxx += (a - m) * (a - m);
            }
            if sxx <= 0.0 || syy <= 0.0 {
                0.0
            } else {
                (sxy / (sxx * syy).sqrt()).abs()
            }
        })
        .collect()
}

/// Residuals from OLS of `y` on the (at most) five columns of `x` most
/// correlated with it.
pub fn initial_residuals(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> InitialResiduals {
    let corr = abs_correlation(x, y);
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    order.sort_by(|&a, &b| corr[b].total_cmp(&corr[a]).then(a.cmp(&b)));
    order.truncate(5.min(x.ncols()));
    let sub = x.select_columns(&order);
    let (residuals, pseudo_inverse) = linalg::ols_residuals(&sub, y, intercept);
    InitialResiduals {
        residuals,
        columns: order,
        pseudo_inverse,
    }
}

fn empirical_rms(v: impl Iterator<Item = f64>, n: f64) -> f64 {
    (v.map(|a| a * a).sum::<f64>() / n).sqrt()
}

fn homoscedastic_loadings(x: &DMatrix<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| empirical_rms(x.column(j).iter().copied(), n))
        .collect()
}

fn heteroscedastic_loadings(x: &DMatrix<f64>, resid: &DVector<f64>) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols())
        .map(|j| empirical_rms(x.column(j).iter().zip(resid.iter()).map(|(a, e)| a * e), n))
        .collect()
}

/// `(1-gamma)` quantile over `num_sim` Gaussian draws of
/// `max_j |sum_i x_ij w_i e_i| / loading_j`.
fn simulated_max_score(
    x: &DMatrix<f64>,
    weights: Option<&DVector<f64>>,
    loadings: &[f64],
    gamma: f64,
    num_sim: usize,
    rng: RngStream,
) -> Result<f64> {
    let (n, p) = x.shape();
    let mut scaled = x.clone();
    for j in 0..p {
        let mut col = scaled.column_mut(j);
        col /= loadings[j];
        if let Some(w) = weights {
            col.component_mul_assign(w);
        }
    }
    let mut draws = par::map_range(num_sim, |b| {
        let mut r = rng.substream(b as u64).rng();
        let e = DVector::from_vec(fill_multipliers(MultiplierKind::Normal, &mut r, n));
        scaled.tr_mul(&e).amax()
    });
    empirical_quantile_in_place(&mut draws, 1.0 - gamma)
}

/// Penalty level and loadings for the regime selected by `options`.
///
/// `x` should already be centered when an intercept is fitted; `residuals`
/// are the current error estimates.
pub fn compute_penalty(
    x: &DMatrix<f64>,
    residuals: &DVector<f64>,
    options: &PenaltyOptions,
    post: bool,
    rng: RngStream,
) -> Result<PenaltyResult> {
    let (n, p) = x.shape();
    options.validate(p)?;
    if residuals.len() != n {
        return Err(HdmError::Schema("residual length does not match X".into()));
    }
    let nf = n as f64;
    let c = options.c_for(post);
    let heteroscedastic = options.homoscedastic != Homoscedastic::True;
    if heteroscedastic && residuals.iter().all(|&e| e == 0.0) {
        return Err(HdmError::Degenerate(
            "residuals are identically zero; heteroscedastic loadings vanish".into(),
        ));
    }
    let loadings = if heteroscedastic {
        heteroscedastic_loadings(x, residuals)
    } else {
        homoscedastic_loadings(x)
    };
    if let Some(j) = loadings.iter().position(|&l| !(l > 0.0)) {
        return Err(HdmError::Degenerate(format!("penalty loading for column {j} is zero")));
    }
    let sigma_hat = empirical_rms(residuals.iter().copied(), nf);
    let tail = || normal_quantile(1.0 - options.gamma / (2.0 * p as f64));

    let result = match (options.homoscedastic, options.x_dependent) {
        (Homoscedastic::None, _) => {
            let (lambda, per) = match options.lambda_start.as_ref() {
                Some(LambdaStart::Scalar(l)) => (*l, None),
                Some(LambdaStart::PerCoefficient(v)) => {
                    (v.iter().cloned().fold(0.0, f64::max), Some(v.clone()))
                }
                None => unreachable!("validated above"),
            };
            PenaltyResult {
                lambda,
                lambda_per_coefficient: per,
                loadings,
                sigma_hat: None,
                method: PenaltyMethod::Fixed,
            }
        }
        (Homoscedastic::True, false) => PenaltyResult {
            lambda: 2.0 * c * nf.sqrt() * sigma_hat * tail()?,
            lambda_per_coefficient: None,
            loadings,
            sigma_hat: Some(sigma_hat),
            method: PenaltyMethod::HomoscedasticXIndependent,
        },
        (Homoscedastic::True, true) => {
            let q = simulated_max_score(x, None, &loadings, options.gamma, options.num_sim, rng)?;
            PenaltyResult {
                lambda: 2.0 * c * sigma_hat * q,
                lambda_per_coefficient: None,
                loadings,
                sigma_hat: Some(sigma_hat),
                method: PenaltyMethod::HomoscedasticXDependent,
            }
        }
        (Homoscedastic::False, false) => PenaltyResult {
            lambda: 2.0 * c * nf.sqrt() * tail()?,
            lambda_per_coefficient: None,
            loadings,
            sigma_hat: None,
            method: PenaltyMethod::HeteroscedasticXIndependent,
        },
        (Homoscedastic::False, true) => {
            let q = simulated_max_score(
                x,
                Some(residuals),
                &loadings,
                options.gamma,
                options.num_sim,
                rng,
            )?;
            PenaltyResult {
                lambda: c * 2.0 * q,
                lambda_per_coefficient: None,
                loadings,
                sigma_hat: None,
                method: PenaltyMethod::HeteroscedasticXDependent,
            }
        }
    };
    if !(result.lambda > 0.0) {
        return Err(HdmError::Degenerate("computed penalty level is not positive".into()));
    }
    Ok(result)
}

/// Outcome of the sup-score test of `H0: all slopes are zero`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupScore {
    pub statistic: f64,
    pub p_value: f64,
    /// No bootstrap draw reached the statistic; `p_value` is then the
    /// resolution bound `1/num_sim` and the true value is below it.
    pub p_value_is_bound: bool,
}

/// Self-normalized maximal score statistic with a Gaussian multiplier
/// bootstrap p-value.
pub fn sup_score_test(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    intercept: bool,
    num_sim: usize,
    rng: RngStream,
) -> Result<SupScore> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(HdmError::Domain("sup-score test needs n >= 2".into()));
    }
    if y.len() != n || num_sim == 0 {
        return Err(HdmError::Domain("sup-score test: bad dimensions or num_sim".into()));
    }
    let (xs, yt) = if intercept {
        (center_columns(x).0, center(y).0)
    } else {
        (x.clone(), y.clone())
    };
    let scale = y.amax().max(1.0);
    let null = SupScore {
        statistic: 0.0,
        p_value: 1.0,
        p_value_is_bound: false,
    };
    if yt.amax() <= 1e-12 * scale {
        return Ok(null);
    }
    let nf = n as f64;
    let mut m = DMatrix::zeros(n, p);
    let mut any = false;
    for j in 0..p {
        let denom = empirical_rms(xs.column(j).iter().zip(yt.iter()).map(|(a, b)| a * b), nf);
        if denom > 0.0 {
            any = true;
            for i in 0..n {
                m[(i, j)] = xs[(i, j)] * yt[i] / denom;
            }
        }
    }
    if !any {
        return Ok(null);
    }
    let ones = DVector::from_element(n, 1.0);
    let statistic = m.tr_mul(&ones).amax();
    let draws = par::map_range(num_sim, |b| {
        let mut r = rng.substream(b as u64).rng();
        let e = DVector::from_vec(fill_multipliers(MultiplierKind::Normal, &mut r, n));
        m.tr_mul(&e).amax()
    });
    let exceed = draws.iter().filter(|&&w| w >= statistic).count();
    Ok(if exceed == 0 {
        SupScore {
            statistic,
            p_value: 1.0 / num_sim as f64,
            p_value_is_bound: true,
        }
    } else {
        SupScore {
            statistic,
            p_value: exceed as f64 / num_sim as f64,
            p_value_is_bound: false,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitKind {
    Linear,
    Logistic,
}

#[derive(Debug, Clone)]
pub struct RlassoFit {
    pub kind: FitKind,
    pub coefficients: DVector<f64>,
    pub intercept: Option<f64>,
    /// Indices with a nonzero coefficient.
    pub selected: Vec<usize>,
    pub residuals: DVector<f64>,
    pub penalty: PenaltyResult,
    pub post: bool,
    pub iterations_run: usize,
    /// Penalty refinement stopped on the relative-change criterion.
    pub penalty_converged: bool,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    pub sup_score: Option<SupScore>,
    /// The post refit (or initial residual fit) needed a pseudo-inverse.
    pub rank_deficient: bool,
    /// Logistic refit hit (quasi-)separation.
    pub separation: bool,
}

impl RlassoFit {
    pub fn n(&self) -> usize {
        self.residuals.len()
    }

    /// Linear index `intercept + X_new * coefficients`.
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x_new.ncols() != self.coefficients.len() {
            return Err(HdmError::Schema(format!(
                "new design has {} columns, fit has {}",
                x_new.ncols(),
                self.coefficients.len()
            )));
        }
        Ok((x_new * &self.coefficients).add_scalar(self.intercept.unwrap_or(0.0)))
    }

    /// Fitted probabilities for a logistic fit; the linear index otherwise.
    pub fn predict_response(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        let eta = self.predict(x_new)?;
        Ok(match self.kind {
            FitKind::Linear => eta,
            FitKind::Logistic => eta.map(crate::logit::sigmoid),
        })
    }

    /// Residual standard error `sqrt(RSS / (n - s - intercept))`.
    pub fn residual_se(&self) -> f64 {
        let dof = self.n() as f64
            - self.selected.len() as f64
            - if self.intercept.is_some() { 1.0 } else { 0.0 };
        (self.residuals.dot(&self.residuals) / dof.max(1.0)).sqrt()
    }
}

/// Everything `rlasso` needs besides the data.
#[derive(Debug, Clone)]
pub struct RlassoConfig {
    pub post: bool,
    pub intercept: bool,
    pub penalty: PenaltyOptions,
    pub control: SolverControl,
    /// Run the sup-score joint significance test on the fitted data.
    pub sup_score: bool,
}

impl Default for RlassoConfig {
    fn default() -> Self {
        RlassoConfig {
            post: true,
            intercept: true,
            penalty: PenaltyOptions::default(),
            control: SolverControl::default(),
            sup_score: true,
        }
    }
}

impl RlassoConfig {
    /// Settings for nuisance regressions inside other estimators.
    pub fn auxiliary() -> Self {
        RlassoConfig {
            sup_score: false,
            ..Default::default()
        }
    }
}

pub(crate) fn goodness_of_fit(
    y: &DVector<f64>,
    residuals: &DVector<f64>,
    intercept: bool,
    n_selected: usize,
) -> (f64, f64) {
    let n = y.len() as f64;
    let rss = residuals.dot(residuals);
    let tss = if intercept {
        let (yc, _) = center(y);
        yc.dot(&yc)
    } else {
        y.dot(y)
    };
    let r2 = if n_selected == 0 || tss <= 0.0 {
        0.0
    } else {
        1.0 - rss / tss
    };
    let k = n_selected as f64 + if intercept { 1.0 } else { 0.0 };
    let base = if intercept { n - 1.0 } else { n };
    let adj = if n - k > 0.0 {
        1.0 - (1.0 - r2) * base / (n - k)
    } else {
        f64::NAN
    };
    (r2, adj)
}

/// Lasso / Post-Lasso with iterated data-driven penalty.
pub fn rlasso(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<RlassoFit> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(HdmError::Schema(format!("y has {} rows, X has {n}", y.len())));
    }
    if n < 2 || p == 0 {
        return Err(HdmError::Domain("rlasso needs n >= 2 and at least one regressor".into()));
    }
    let opts = &config.penalty;
    opts.validate(p)?;

    let (xc, x_means, yc, y_mean) = if config.intercept {
        let (xc, m) = center_columns(x);
        let (yc, ym) = center(y);
        (xc, m, yc, ym)
    } else {
        (x.clone(), vec![0.0; p], y.clone(), 0.0)
    };

    let init = initial_residuals(x, y, config.intercept);
    let penalty_rng = rng.fork("penalty");
    let mut penalty = compute_penalty(&xc, &init.residuals, opts, config.post, penalty_rng.fork_index("iter", 0))?;
    if opts.homoscedastic != Homoscedastic::None {
        match &opts.lambda_start {
            Some(LambdaStart::Scalar(l)) => penalty.lambda = *l,
            Some(LambdaStart::PerCoefficient(v)) => {
                penalty.lambda = v.iter().cloned().fold(0.0, f64::max);
                penalty.lambda_per_coefficient = Some(v.clone());
            }
            None => {}
        }
    }

    let mut control = config.control.clone();
    let mut beta = DVector::zeros(p);
    let mut post_coef: Option<DVector<f64>> = None;
    let mut selected = Vec::new();
    let mut rank_deficient = init.pseudo_inverse;
    let mut iterations_run = 0;
    let mut penalty_converged = false;

    for iter in 1..=opts.num_iter {
        let spec = penalty.solver_spec()?;
        let fit = shooting_fit(&xc, &yc, &spec, &control)?;
        beta = fit.beta;
        control.start = Some(beta.clone());
        iterations_run = iter;
        selected = (0..p).filter(|&j| beta[j] != 0.0).collect();
        let resid = if config.post {
            let sub = xc.select_columns(&selected);
            let ls = least_squares(&sub, &yc);
            let r = &yc - &sub * &ls.coef;
            post_coef = Some(ls.coef);
            rank_deficient |= ls.rank_deficient;
            r
        } else {
            &yc - &xc * &beta
        };
        if iter == opts.num_iter {
            break;
        }
        // a fixed per-coefficient start only applies to the first pass
        let mut next_opts = opts.clone();
        if opts.homoscedastic != Homoscedastic::None {
            next_opts.lambda_start = None;
        }
        let next = match compute_penalty(
            &xc,
            &resid,
            &next_opts,
            config.post,
            penalty_rng.fork_index("iter", iter as u64),
        ) {
            Ok(next) => next,
            // perfect in-sample fit: nothing left to refine
            Err(HdmError::Degenerate(_)) => {
                penalty_converged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let change = next.relative_change(&penalty);
        let start_override = iter == 1 && opts.lambda_start.is_some();
        penalty = next;
        if change < 1e-6 && !start_override {
            penalty_converged = true;
            break;
        }
    }

    let mut coefficients = DVector::zeros(p);
    if config.post {
        if let Some(pc) = &post_coef {
            for (k, &j) in selected.iter().enumerate() {
                coefficients[j] = pc[k];
            }
        }
        // an exactly-zero OLS coefficient leaves the support
        selected.retain(|&j| coefficients[j] != 0.0);
    } else {
        coefficients = beta;
    }
    let intercept = config.intercept.then(|| {
        y_mean
            - x_means
                .iter()
                .zip(coefficients.iter())
                .map(|(m, b)| m * b)
                .sum::<f64>()
    });
    let residuals = (y - x * &coefficients).add_scalar(-intercept.unwrap_or(0.0));
    let (r_squared, adj_r_squared) = goodness_of_fit(y, &residuals, config.intercept, selected.len());
    let sup_score = if config.sup_score {
        Some(sup_score_test(x, y, config.intercept, opts.num_sim, rng.fork("sup-score"))?)
    } else {
        None
    };
    Ok(RlassoFit {
        kind: FitKind::Linear,
        coefficients,
        intercept,
        selected,
        residuals,
        penalty,
        post: config.post,
        iterations_run,
        penalty_converged,
        r_squared,
        adj_r_squared,
        sup_score,
        rank_deficient,
        separation: false,
    })
}
