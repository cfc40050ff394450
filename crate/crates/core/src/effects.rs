//! Debiased inference on target coefficients by partialling out.
//!
//! For each target column `j`, both the response and `x_j` are residualized
//! on the remaining columns with Post-Lasso; the target coefficient is the
//! residual-on-residual slope with a heteroscedasticity-robust standard
//! error. The per-observation scores feed a Gaussian multiplier bootstrap
//! for simultaneous intervals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::linalg::{center, mean};
use crate::par;
use crate::prob::{empirical_quantile_in_place, fill_multipliers, normal_quantile, two_sided_p, MultiplierKind, RngStream};
use crate::rlasso::{rlasso, RlassoConfig};

#[derive(Debug, Clone)]
pub struct EffectEstimate {
    pub name: String,
    /// Column position in the design (0-based).
    pub index: usize,
    pub alpha: f64,
    pub se: f64,
    pub t_value: f64,
    pub p_value: f64,
    /// Target residualized on the controls.
    pub resid_target: DVector<f64>,
    /// Response residualized on the controls.
    pub resid_outcome: DVector<f64>,
    /// Per-observation influence values; mean zero by construction.
    pub influence: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct EffectsResult {
    pub estimates: Vec<EffectEstimate>,
    /// `n x K` matrix whose column `k` is the influence vector of target `k`.
    pub score_matrix: DMatrix<f64>,
}

impl EffectsResult {
    pub fn targets(&self) -> Vec<usize> {
        self.estimates.iter().map(|e| e.index).collect()
    }

    pub fn names(&self) -> Vec<&str> {
        self.estimates.iter().map(|e| e.name.as_str()).collect()
    }
}

/// Ways of naming target columns.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// 0-based column positions.
    Positions(Vec<usize>),
    Names(Vec<String>),
    Mask(Vec<bool>),
}

impl TargetSpec {
    pub fn resolve(&self, names: &[String]) -> Result<Vec<usize>> {
        let p = names.len();
        let idx = match self {
            TargetSpec::Positions(v) => {
                if let Some(bad) = v.iter().find(|&&j| j >= p) {
                    return Err(HdmError::Schema(format!(
                        "target position {bad} out of range for {p} columns"
                    )));
                }
                v.clone()
            }
            TargetSpec::Names(v) => v
                .iter()
                .map(|name| {
                    names.iter().position(|n| n == name).ok_or_else(|| {
                        HdmError::Schema(format!("unknown target column {name:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            TargetSpec::Mask(m) => {
                if m.len() != p {
                    return Err(HdmError::Schema(format!(
                        "target mask has {} entries for {p} columns",
                        m.len()
                    )));
                }
                (0..p).filter(|&j| m[j]).collect()
            }
        };
        if idx.is_empty() {
            return Err(HdmError::Schema("no targets given".into()));
        }
        Ok(idx)
    }
}

fn drop_column(x: &DMatrix<f64>, j: usize) -> DMatrix<f64> {
    x.clone().remove_column(j)
}

fn residualize(
    controls: &DMatrix<f64>,
    v: &DVector<f64>,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<DVector<f64>> {
    if controls.ncols() == 0 {
        return Ok(if config.intercept { center(v).0 } else { v.clone() });
    }
    if v.iter().all(|&a| a == v[0]) && config.intercept {
        return Ok(DVector::zeros(v.len()));
    }
    Ok(rlasso(controls, v, config, rng)?.residuals)
}

/// Partialling-out estimate for the coefficient on column `j`.
pub fn partial_out_effect(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    j: usize,
    name: &str,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<EffectEstimate> {
    let (n, p) = x.shape();
    if j >= p {
        return Err(HdmError::Schema(format!("target position {j} out of range")));
    }
    if y.len() != n {
        return Err(HdmError::Schema("y and X row counts differ".into()));
    }
    let controls = drop_column(x, j);
    let target = x.column(j).into_owned();
    let resid_outcome = residualize(&controls, y, config, rng.fork("outcome"))?;
    let resid_target = residualize(&controls, &target, config, rng.fork("target"))?;
    let nf = n as f64;
    let sdd = resid_target.dot(&resid_target) / nf;
    let scale = center(&target).0.dot(&center(&target).0) / nf;
    if !(sdd > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(HdmError::CollinearTarget(name.to_string()));
    }
    let alpha = resid_target.dot(&resid_outcome) / nf / sdd;
    let eps = &resid_outcome - &resid_target * alpha;
    let influence = resid_target.component_mul(&eps) / sdd;
    let se = (influence.dot(&influence) / nf).sqrt() / nf.sqrt();
    let t_value = alpha / se;
    Ok(EffectEstimate {
        name: name.to_string(),
        index: j,
        alpha,
        se,
        t_value,
        p_value: two_sided_p(t_value),
        resid_target,
        resid_outcome,
        influence,
    })
}

/// Runs [`partial_out_effect`] for every target. Each target's controls are
/// all other columns, including the remaining targets.
pub fn rlasso_effects(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    names: &[String],
    targets: &TargetSpec,
    config: &RlassoConfig,
    rng: RngStream,
) -> Result<EffectsResult> {
    if names.len() != x.ncols() {
        return Err(HdmError::Schema("one name per column required".into()));
    }
    let idx = targets.resolve(names)?;
    let estimates = par::map_range(idx.len(), |k| {
        let j = idx[k];
        partial_out_effect(x, y, j, &names[j], config, rng.fork_index("target", j as u64))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut score_matrix = DMatrix::zeros(x.nrows(), estimates.len());
    for (k, e) in estimates.iter().enumerate() {
        score_matrix.set_column(k, &e.influence);
    }
    Ok(EffectsResult {
        estimates,
        score_matrix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct Intervals {
    pub level: f64,
    pub joint: bool,
    /// Multiplier applied to each standard error.
    pub critical_value: f64,
    pub intervals: Vec<Interval>,
}

/// Pointwise or simultaneous confidence intervals.
///
/// Joint intervals use the `level` quantile of the bootstrapped maximum of
/// studentized score means across targets.
pub fn confint_effects(
    result: &EffectsResult,
    level: f64,
    joint: bool,
    num_boot: usize,
    rng: RngStream,
) -> Result<Intervals> {
    if !(level > 0.0 && level < 1.0) {
        return Err(HdmError::Domain(format!("level must lie in (0,1), got {level}")));
    }
    if let Some(e) = result.estimates.iter().find(|e| !(e.se > 0.0)) {
        return Err(HdmError::Degenerate(format!("standard error of {} is zero", e.name)));
    }
    let critical_value = if joint {
        if num_boot == 0 {
            return Err(HdmError::Domain("joint intervals need num_boot >= 1".into()));
        }
        let n = result.score_matrix.nrows();
        let nf = n as f64;
        let mut studentized = result.score_matrix.clone();
        for (k, e) in result.estimates.iter().enumerate() {
            studentized.column_mut(k).scale_mut(1.0 / (nf * e.se));
        }
        let mut draws = par::map_range(num_boot, |b| {
            let mut r = rng.substream(b as u64).rng();
            let e = DVector::from_vec(fill_multipliers(MultiplierKind::Normal, &mut r, n));
            studentized.tr_mul(&e).amax()
        });
        empirical_quantile_in_place(&mut draws, level)?
    } else {
        normal_quantile(1.0 - (1.0 - level) / 2.0)?
    };
    let intervals = result
        .estimates
        .iter()
        .map(|e| Interval {
            name: e.name.clone(),
            estimate: e.alpha,
            lower: e.alpha - critical_value * e.se,
            upper: e.alpha + critical_value * e.se,
        })
        .collect();
    Ok(Intervals {
        level,
        joint,
        critical_value,
        intervals,
    })
}

/// Column means of the score matrix (all zero up to rounding).
pub fn score_means(result: &EffectsResult) -> Vec<f64> {
    (0..result.score_matrix.ncols())
        .map(|k| mean(result.score_matrix.column(k).as_slice()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rlasso::{Homoscedastic, LambdaStart, PenaltyOptions};
    use crate::sim::{effects_design, sparse_linear, Noise};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn names(p: usize) -> Vec<String> {
        (1..=p).map(|j| format!("V{j}")).collect()
    }

    fn cfg() -> RlassoConfig {
        RlassoConfig::auxiliary()
    }

    #[test]
    fn empty_auxiliary_fits_reduce_to_ols_sandwich() {
        let n = 2000;
        let mut r = RngStream::new(1, 0).rng();
        let raw = DMatrix::from_fn(n, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        // orthonormal centered columns scaled to unit mean square
        let centered = crate::linalg::center_columns(&raw).0;
        let q = centered.qr().q() * (n as f64).sqrt();
        let y = DVector::from_fn(n, |i, _| {
            1.0 + 2.0 * q[(i, 0)] + (1.0 + q[(i, 0)].abs()) * r.sample::<f64, _>(StandardNormal)
        });
        let none = RlassoConfig {
            penalty: PenaltyOptions {
                homoscedastic: Homoscedastic::None,
                lambda_start: Some(LambdaStart::Scalar(1e9)),
                ..Default::default()
            },
            ..cfg()
        };
        let est = partial_out_effect(&q, &y, 0, "V1", &none, RngStream::new(0, 0)).unwrap();
        // OLS of y on [1, x1] with HC0 sandwich
        let mut design = DMatrix::from_element(n, 2, 1.0);
        design.set_column(1, &q.column(0));
        let bread = (design.transpose() * &design).try_inverse().unwrap();
        let coef = &bread * design.transpose() * &y;
        let e = &y - &design * &coef;
        let mut meat = DMatrix::zeros(2, 2);
        for i in 0..n {
            let row = design.row(i).transpose();
            meat += &row * row.transpose() * (e[i] * e[i]);
        }
        let v = &bread * meat * &bread;
        assert!((est.alpha - coef[1]).abs() < 1e-6);
        assert!((est.se - v[(1, 1)].sqrt()).abs() < 1e-6);
    }

    #[test]
    fn estimate_invariants() {
        let s = effects_design(100, 50, RngStream::new(2, 0));
        let res = rlasso_effects(&s.x, &s.y, &names(50), &TargetSpec::Positions(vec![0, 1, 2]), &cfg(), RngStream::new(2, 1)).unwrap();
        let nf = 100f64;
        for (k, e) in res.estimates.iter().enumerate() {
            assert!((e.t_value - e.alpha / e.se).abs() < 1e-12);
            assert!((e.p_value - 2.0 * crate::prob::normal_sf(e.t_value.abs())).abs() < 1e-10);
            let col = res.score_matrix.column(k);
            assert!(((col.dot(&col) / nf).sqrt() / nf.sqrt() - e.se).abs() < 1e-10);
        }
        assert!(score_means(&res).iter().all(|m| m.abs() < 1e-8));
    }

    #[test]
    fn strong_design_targets() {
        let mut within = 0;
        let mut null_quiet = 0;
        for seed in 0..20 {
            let g = sparse_linear(100, 100, 3, 5.0, Noise::Gaussian, RngStream::new(seed, 0));
            let res = rlasso_effects(
                &g.x,
                &g.y,
                &names(100),
                &TargetSpec::Positions(vec![0, 1, 2, 49]),
                &cfg(),
                RngStream::new(seed, 1),
            )
            .unwrap();
            for e in &res.estimates[..3] {
                assert!(e.p_value < 1e-6);
                if (e.alpha - 5.0).abs() <= 3.0 * e.se {
                    within += 1;
                }
            }
            if res.estimates[3].t_value.abs() < 1.96 {
                null_quiet += 1;
            }
            let point = confint_effects(&res, 0.95, false, 0, RngStream::new(0, 0)).unwrap();
            let joint = confint_effects(&res, 0.95, true, 2000, RngStream::new(seed, 2)).unwrap();
            for (a, b) in point.intervals.iter().zip(&joint.intervals) {
                assert!(b.lower <= a.lower && a.upper <= b.upper);
                let ratio = (b.upper - b.lower) / (a.upper - a.lower);
                assert!((1.0..=1.5).contains(&ratio));
            }
        }
        assert!(within >= 50, "{within}/60 strong estimates within 3 SE");
        assert!(null_quiet >= 17, "{null_quiet}/20 null targets insignificant");
    }

    #[test]
    fn mask_names_and_positions_agree() {
        let s = effects_design(80, 12, RngStream::new(4, 0));
        let nm = names(12);
        let run = |t: TargetSpec| rlasso_effects(&s.x, &s.y, &nm, &t, &cfg(), RngStream::new(4, 1)).unwrap();
        let a = run(TargetSpec::Positions(vec![0, 2]));
        let mut mask = vec![false; 12];
        mask[0] = true;
        mask[2] = true;
        let b = run(TargetSpec::Mask(mask));
        let c = run(TargetSpec::Names(vec!["V1".into(), "V3".into()]));
        for other in [&b, &c] {
            assert_eq!(a.targets(), other.targets());
            assert_eq!(a.score_matrix, other.score_matrix);
            for (x, y) in a.estimates.iter().zip(&other.estimates) {
                assert_eq!((x.alpha, x.se), (y.alpha, y.se));
            }
        }
    }

    #[test]
    fn single_target_is_the_wrapper_identity() {
        let s = effects_design(80, 12, RngStream::new(5, 0));
        let rng = RngStream::new(5, 1);
        let res = rlasso_effects(&s.x, &s.y, &names(12), &TargetSpec::Positions(vec![2]), &cfg(), rng).unwrap();
        let one = partial_out_effect(&s.x, &s.y, 2, "V3", &cfg(), rng.fork_index("target", 2)).unwrap();
        assert_eq!(res.estimates[0].alpha, one.alpha);
        assert_eq!(res.estimates[0].se, one.se);
        assert_eq!(res.score_matrix.column(0), one.influence.column(0));
        let point = confint_effects(&res, 0.95, false, 0, rng).unwrap();
        let joint = confint_effects(&res, 0.95, true, 5000, RngStream::new(5, 2)).unwrap();
        assert!((joint.critical_value / point.critical_value - 1.0).abs() <= 0.05);
    }

    #[test]
    fn target_errors() {
        let s = effects_design(60, 8, RngStream::new(6, 0));
        let nm = names(8);
        for t in [
            TargetSpec::Positions(vec![8]),
            TargetSpec::Names(vec!["nope".into()]),
            TargetSpec::Mask(vec![true; 3]),
            TargetSpec::Positions(vec![]),
        ] {
            assert!(matches!(
                rlasso_effects(&s.x, &s.y, &nm, &t, &cfg(), RngStream::new(0, 0)),
                Err(HdmError::Schema(_))
            ));
        }
    }

    #[test]
    fn duplicated_target_is_collinear() {
        let s = effects_design(60, 8, RngStream::new(7, 0));
        let mut x = s.x.clone();
        x.set_column(7, &(s.x.column(0) * 3.0));
        let err = partial_out_effect(&x, &s.y, 7, "V8", &cfg(), RngStream::new(0, 0)).unwrap_err();
        assert!(matches!(err, HdmError::CollinearTarget(_)));
    }

    #[test]
    fn confint_errors() {
        let s = effects_design(60, 8, RngStream::new(8, 0));
        let res = rlasso_effects(&s.x, &s.y, &names(8), &TargetSpec::Positions(vec![0]), &cfg(), RngStream::new(0, 0)).unwrap();
        for level in [0.0, 1.0, 1.2] {
            assert!(confint_effects(&res, level, false, 0, RngStream::new(0, 0)).is_err());
        }
        assert!(confint_effects(&res, 0.9, true, 0, RngStream::new(0, 0)).is_err());
        let mut zero = res.clone();
        zero.estimates[0].se = 0.0;
        assert!(matches!(
            confint_effects(&zero, 0.9, false, 0, RngStream::new(0, 0)),
            Err(HdmError::Degenerate(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn permuting_controls_leaves_estimates_unchanged(seed in 0u64..500, shuffle_seed in 0u64..500) {
            let s = effects_design(80, 15, RngStream::new(seed, 0));
            let targets = vec![0usize, 2];
            let mut rest: Vec<usize> = (0..15).filter(|j| !targets.contains(j)).collect();
            let mut r = RngStream::new(shuffle_seed, 9).rng();
            for i in (1..rest.len()).rev() {
                rest.swap(i, r.random_range(0..=i));
            }
            let mut order = vec![0usize; 15];
            let mut it = rest.into_iter();
            for (slot, o) in order.iter_mut().enumerate() {
                *o = if targets.contains(&slot) { slot } else { it.next().unwrap() };
            }
            let xp = s.x.select_columns(&order);
            let nm = names(15);
            let a = rlasso_effects(&s.x, &s.y, &nm, &TargetSpec::Positions(targets.clone()), &cfg(), RngStream::new(1, 1)).unwrap();
            let b = rlasso_effects(&xp, &s.y, &nm, &TargetSpec::Positions(targets), &cfg(), RngStream::new(1, 1)).unwrap();
            for (ea, eb) in a.estimates.iter().zip(&b.estimates) {
                prop_assert!((ea.alpha - eb.alpha).abs() < 1e-10);
                prop_assert!((ea.se - eb.se).abs() < 1e-10);
            }
        }
    }
}

