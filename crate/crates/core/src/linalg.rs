//! Small dense least-squares helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{HdmError, Result};

/// Relative singular-value cutoff used to decide numerical rank.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub coef: DVector<f64>,
    /// True when the design was numerically rank deficient and the
    /// minimum-norm (pseudo-inverse) solution was returned.
    pub rank_deficient: bool,
}

/// Minimum-norm least squares of `y` on the columns of `x`.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> LeastSquares {
    if x.ncols() == 0 {
        return LeastSquares {
            coef: DVector::zeros(0),
            rank_deficient: false,
        };
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let coef = svd
        .solve(y, cutoff)
        .unwrap_or_else(|_| DVector::zeros(x.ncols()));
    LeastSquares {
        coef,
        rank_deficient: rank < x.ncols().min(x.nrows()) || rank < x.ncols(),
    }
}

/// Least squares that refuses rank-deficient designs.
pub fn least_squares_full_rank(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    what: &str,
) -> Result<DVector<f64>> {
    let fit = least_squares(x, y);
    if fit.rank_deficient {
        return Err(HdmError::Singularity(format!("{what} is rank deficient")));
    }
    Ok(fit.coef)
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(ch) => Ok(ch.inverse()),
        None => Err(HdmError::Singularity(format!("{what} is not invertible"))),
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn column_means(x: &DMatrix<f64>) -> Vec<f64> {
    (0..x.ncols()).map(|j| mean(x.column(j).as_slice())).collect()
}

/// Returns `x` with every column demeaned, together with the means.
pub fn center_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let means = column_means(x);
    let mut out = x.clone();
    for (j, m) in means.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(-m);
    }
    (out, means)
}

pub fn center(y: &DVector<f64>) -> (DVector<f64>, f64) {
    let m = mean(y.as_slice());
    (y.add_scalar(-m), m)
}

/// Unbiased sample variance.
pub fn sample_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

pub fn select_columns(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    x.select_columns(idx)
}

/// Horizontal concatenation; empty blocks are skipped.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks.iter().map(|b| b.nrows()).max().unwrap_or(0);
    let p: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(n, p);
    let mut at = 0;
    for b in blocks {
        if b.ncols() == 0 {
            continue;
        }
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    out
}

pub fn ones_column(n: usize) -> DMatrix<f64> {
    DMatrix::from_element(n, 1, 1.0)
}

/// Residuals of an OLS regression of `y` on `x` (plus a constant when
/// `intercept`), using the minimum-norm solution if `x` is rank deficient.
pub fn ols_residuals(x: &DMatrix<f64>, y: &DVector<f64>, intercept: bool) -> (DVector<f64>, bool) {
    let design = if intercept {
        hstack(&[&ones_column(x.nrows()), x])
    } else {
        x.clone()
    };
    if design.ncols() == 0 {
        return (y.clone(), false);
    }
    let fit = least_squares(&design, y);
    (y - &design * &fit.coef, fit.rank_deficient)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_and_pseudo_inverse_fallback() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0, 4.0, 8.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let fit = least_squares(&x, &y);
        assert!(fit.rank_deficient);
        let resid = &y - &x * &fit.coef;
        assert!(resid.norm() < 1e-10);
        // minimum-norm solution spreads weight as (1,2)/5
        assert!((fit.coef[0] - 0.2).abs() < 1e-10 && (fit.coef[1] - 0.4).abs() < 1e-10);
    }

    #[test]
    fn hstack_skips_empty_blocks() {
        let a = DMatrix::from_element(3, 2, 1.0);
        let e = DMatrix::zeros(3, 0);
        let b = DMatrix::from_element(3, 1, 2.0);
        let h = hstack(&[&a, &e, &b]);
        assert_eq!(h.shape(), (3, 3));
        assert_eq!(h[(0, 2)], 2.0);
    }
}
