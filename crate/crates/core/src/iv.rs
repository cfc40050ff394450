//! Two-stage least squares and IV estimation with Lasso selection of
//! instruments, controls, or both.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::linalg::{hstack, least_squares, ones_column, spd_inverse, RANK_TOL};
use crate::prob::{two_sided_p, RngStream};
use crate::rlasso::{rlasso, RlassoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IvMethod {
    Tsls,
    SelectZ,
    SelectX,
    SelectXZ,
}

/// What a coefficient in an [`IvFit`] refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoefRole {
    Endogenous(usize),
    Exogenous(usize),
    Intercept,
}

#[derive(Debug, Clone)]
pub struct IvFit {
    pub roles: Vec<CoefRole>,
    pub coefficients: DVector<f64>,
    pub se: DVector<f64>,
    pub vcov: DMatrix<f64>,
    pub method: IvMethod,
    /// Selected instrument columns, one list per endogenous variable.
    pub selected_instruments: Vec<Vec<usize>>,
    /// Union of selected control columns across the partialling regressions.
    pub selected_controls: Vec<usize>,
    pub n: usize,
}

impl IvFit {
    pub fn t_values(&self) -> DVector<f64> {
        self.coefficients.component_div(&self.se)
    }

    pub fn p_values(&self) -> DVector<f64> {
        self.t_values().map(two_sided_p)
    }

    /// Position of endogenous variable `k` in the coefficient vector.
    pub fn endogenous_position(&self, k: usize) -> Option<usize> {
        self.roles.iter().position(|r| *r == CoefRole::Endogenous(k))
    }
}

fn empty(n: usize) -> DMatrix<f64> {
    DMatrix::zeros(n, 0)
}

/// Classical 2SLS of `y` on `[d, x]` with instruments `[z, x]`.
pub fn tsls(
    x: Option<&DMatrix<f64>>,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    intercept: bool,
    robust: bool,
) -> Result<IvFit> {
    let n = y.len();
    let ex = x.cloned().unwrap_or_else(|| empty(n));
    if d.nrows() != n || z.nrows() != n || ex.nrows() != n {
        return Err(HdmError::Schema("IV blocks have different row counts".into()));
    }
    if d.ncols() == 0 {
        return Err(HdmError::Schema("no endogenous variables".into()));
    }
    if z.ncols() < d.ncols() {
        return Err(HdmError::Identification(format!(
            "{} instruments for {} endogenous variables",
            z.ncols(),
            d.ncols()
        )));
    }
    let constant = if intercept { ones_column(n) } else { empty(n) };
    let w = hstack(&[d, &ex, &constant]);
    let instruments = hstack(&[z, &ex, &constant]);
    let k = w.ncols();
    if n <= k {
        return Err(HdmError::Identification(format!("{n} observations for {k} regressors")));
    }
    let mut w_hat = DMatrix::zeros(n, k);
    for c in 0..k {
        let col = w.column(c).into_owned();
        let coef = least_squares(&instruments, &col).coef;
        w_hat.set_column(c, &(&instruments * coef));
    }
    let sv = w_hat.clone().svd(false, false).singular_values;
    if sv.min() <= RANK_TOL * sv.max() {
        return Err(HdmError::Singularity("projected design is rank deficient".into()));
    }
    let beta = least_squares(&w_hat, y).coef;
    let resid = y - &w * &beta;
    let bread = spd_inverse(&(w_hat.transpose() * &w_hat), "projected Gram matrix")?;
    let vcov = if robust {
        let mut scaled = w_hat.clone();
        for i in 0..n {
            scaled.row_mut(i).scale_mut(resid[i]);
        }
        let meat = scaled.transpose() * &scaled;
        &bread * meat * &bread
    } else {
        let sigma2 = resid.dot(&resid) / (n - k) as f64;
        &bread * sigma2
    };
    let vcov = (&vcov + vcov.transpose()) * 0.5;
    let se = DVector::from_fn(k, |i, _| vcov[(i, i)].max(0.0).sqrt());
    let mut roles: Vec<CoefRole> = (0..d.ncols()).map(CoefRole::Endogenous).collect();
    roles.extend((0..ex.ncols()).map(CoefRole::Exogenous));
    if intercept {
        roles.push(CoefRole::Intercept);
    }
    Ok(IvFit {
        roles,
        coefficients: beta,
        se,
        vcov,
        method: IvMethod::Tsls,
        selected_instruments: vec![(0..z.ncols()).collect(); d.ncols()],
        selected_controls: (0..ex.ncols()).collect(),
        n,
    })
}

fn union_into(acc: &mut Vec<usize>, more: &[usize]) {
    acc.extend_from_slice(more);
    acc.sort_unstable();
    acc.dedup();
}

/// IV estimation with optional Lasso selection over controls `x` and/or
/// instruments `z`. Standard errors are heteroscedasticity robust.
#[allow(clippy::too_many_arguments)]
pub fn rlasso_iv(
    x: Option<&DMatrix<f64>>,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    select_x: bool,
    select_z: bool,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<IvFit> {
    let n = y.len();
    let intercept = config.intercept;
    let x_present = x.map(|m| m.ncols() > 0).unwrap_or(false);
    match (select_x && x_present, select_z) {
        (false, false) => tsls(x, d, y, z, intercept, true),
        (false, true) => select_instruments(x, d, y, z, config, rng),
        (true, false) => {
            let xm = x.expect("checked");
            let mut controls = Vec::new();
            let mut partial = |v: &DVector<f64>, label: &str, k: usize| -> Result<DVector<f64>> {
                let fit = rlasso(xm, v, config, rng.fork_index(label, k as u64))?;
                union_into(&mut controls, &fit.selected);
                Ok(fit.residuals)
            };
            let ry = partial(y, "y", 0)?;
            let mut rd = DMatrix::zeros(n, d.ncols());
            for l in 0..d.ncols() {
                rd.set_column(l, &partial(&d.column(l).into_owned(), "d", l)?);
            }
            let mut rz = DMatrix::zeros(n, z.ncols());
            for l in 0..z.ncols() {
                rz.set_column(l, &partial(&z.column(l).into_owned(), "z", l)?);
            }
            let mut fit = tsls(None, &rd, &ry, &rz, false, true)?;
            fit.method = IvMethod::SelectX;
            fit.selected_controls = controls;
            Ok(fit)
        }
        (true, true) => select_both(x.expect("checked"), d, y, z, config, rng),
    }
}

fn select_instruments(
    x: Option<&DMatrix<f64>>,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<IvFit> {
    let n = y.len();
    let ex = x.cloned().unwrap_or_else(|| empty(n));
    let constant = if config.intercept { ones_column(n) } else { empty(n) };
    let exog = hstack(&[&ex, &constant]);
    if exog.ncols() >= n {
        return Err(HdmError::Singularity(
            "too many unpenalized controls to partial out; select on x as well".into(),
        ));
    }
    // x enters unpenalized: residualize z and d on [x, 1], then select on z
    let partial_exog = |v: &DVector<f64>| -> DVector<f64> {
        if exog.ncols() == 0 {
            v.clone()
        } else {
            v - &exog * least_squares(&exog, v).coef
        }
    };
    let mut z_tilde = DMatrix::zeros(n, z.ncols());
    for l in 0..z.ncols() {
        z_tilde.set_column(l, &partial_exog(&z.column(l).into_owned()));
    }
    let lasso_cfg = RlassoConfig {
        post: true,
        intercept: false,
        ..config.clone()
    };
    let mut d_hat = DMatrix::zeros(n, d.ncols());
    let mut selected_instruments = Vec::with_capacity(d.ncols());
    for l in 0..d.ncols() {
        let dl = d.column(l).into_owned();
        let fit = rlasso(&z_tilde, &partial_exog(&dl), &lasso_cfg, rng.fork_index("first-stage", l as u64))?;
        if fit.selected.is_empty() {
            return Err(HdmError::WeakIdentification(format!("endogenous variable {}", l + 1)));
        }
        let first = hstack(&[&exog, &z.select_columns(&fit.selected)]);
        let coef = least_squares(&first, &dl).coef;
        d_hat.set_column(l, &(&first * coef));
        selected_instruments.push(fit.selected);
    }
    let mut fit = tsls(x, d, y, &d_hat, config.intercept, true)?;
    fit.method = IvMethod::SelectZ;
    fit.selected_instruments = selected_instruments;
    Ok(fit)
}

fn select_both(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    y: &DVector<f64>,
    z: &DMatrix<f64>,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<IvFit> {
    let n = y.len();
    let px = x.ncols();
    let xz = hstack(&[x, z]);
    let mut controls = Vec::new();
    let y_fit = rlasso(x, y, config, rng.fork("y-on-x"))?;
    union_into(&mut controls, &y_fit.selected);
    let mut rd = DMatrix::zeros(n, d.ncols());
    let mut rd_hat = DMatrix::zeros(n, d.ncols());
    let mut selected_instruments = Vec::with_capacity(d.ncols());
    for l in 0..d.ncols() {
        let dl = d.column(l).into_owned();
        let first = rlasso(&xz, &dl, config, rng.fork_index("d-on-xz", l as u64))?;
        let chosen_z: Vec<usize> = first
            .selected
            .iter()
            .filter(|&&j| j >= px)
            .map(|&j| j - px)
            .collect();
        if chosen_z.is_empty() {
            return Err(HdmError::WeakIdentification(format!("endogenous variable {}", l + 1)));
        }
        let d_hat = &dl - &first.residuals;
        let hat_fit = rlasso(x, &d_hat, config, rng.fork_index("dhat-on-x", l as u64))?;
        let d_fit = rlasso(x, &dl, config, rng.fork_index("d-on-x", l as u64))?;
        union_into(&mut controls, &hat_fit.selected);
        union_into(&mut controls, &d_fit.selected);
        rd_hat.set_column(l, &hat_fit.residuals);
        rd.set_column(l, &d_fit.residuals);
        selected_instruments.push(chosen_z);
    }
    let mut fit = tsls(None, &rd, &y_fit.residuals, &rd_hat, false, true)?;
    fit.method = IvMethod::SelectXZ;
    fit.selected_instruments = selected_instruments;
    fit.selected_controls = controls;
    Ok(fit)
}
