//! Orthogonal-moment estimators of ATE, ATET, LATE and LATET with plug-in
//! and multiplier-bootstrap standard errors.
//!
//! Outcome regressions use Post-Lasso within each arm, propensities use
//! post-penalized logistic regression, and propensities are clipped to
//! `[trim, 1 - trim]` before they appear in any denominator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HdmError, Result};
use crate::linalg::mean;
use crate::logit::rlassologit;
use crate::par;
use crate::prob::{fill_multipliers, two_sided_p, MultiplierKind, RngStream};
use crate::rlasso::{rlasso, RlassoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EffectType {
    Ate,
    Atet,
    Late,
    Latet,
}

impl EffectType {
    pub fn needs_instrument(self) -> bool {
        matches!(self, EffectType::Late | EffectType::Latet)
    }

    pub fn label(self) -> &'static str {
        match self {
            EffectType::Ate => "ATE",
            EffectType::Atet => "ATET",
            EffectType::Late => "LATE",
            EffectType::Latet => "LATET",
        }
    }
}

impl std::str::FromStr for EffectType {
    type Err = HdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(EffectType::Ate),
            "atet" => Ok(EffectType::Atet),
            "late" => Ok(EffectType::Late),
            "latet" => Ok(EffectType::Latet),
            other => Err(HdmError::Schema(format!("unknown effect type {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreatmentConfig {
    /// Outcome regressions.
    pub outcome: RlassoConfig,
    /// Propensity and compliance models.
    pub propensity: RlassoConfig,
    pub trim: f64,
}

impl Default for TreatmentConfig {
    fn default() -> Self {
        TreatmentConfig {
            outcome: RlassoConfig::auxiliary(),
            propensity: RlassoConfig::auxiliary(),
            trim: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TreatmentFit {
    pub effect_type: EffectType,
    pub te: f64,
    pub se: f64,
    /// Influence values `psi_i`; their mean is zero at `te`.
    pub influence: DVector<f64>,
    pub boot_method: Option<MultiplierKind>,
    pub boot_draws: Option<Vec<f64>>,
    pub boot_se: Option<f64>,
    /// Share of propensity scores moved by clipping.
    pub clip_fraction: f64,
}

impl TreatmentFit {
    pub fn n(&self) -> usize {
        self.influence.len()
    }

    /// Standard error used for inference: bootstrap when available.
    pub fn reported_se(&self) -> f64 {
        self.boot_se.unwrap_or(self.se)
    }

    pub fn t_value(&self) -> f64 {
        self.te / self.reported_se()
    }

    pub fn p_value(&self) -> f64 {
        two_sided_p(self.t_value())
    }
}

fn check_binary(v: &DVector<f64>, what: &str) -> Result<(usize, usize)> {
    if v.iter().any(|&a| a != 0.0 && a != 1.0) {
        return Err(HdmError::Domain(format!("{what} must be 0/1")));
    }
    let ones = v.iter().filter(|&&a| a == 1.0).count();
    let zeros = v.len() - ones;
    if ones == 0 || zeros == 0 {
        return Err(HdmError::Arm(format!("{what} has an empty arm")));
    }
    Ok((zeros, ones))
}

fn rows_where(v: &DVector<f64>, value: f64) -> Vec<usize> {
    (0..v.len()).filter(|&i| v[i] == value).collect()
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows)
}

/// Linear outcome regression fitted on `rows` and predicted for everyone.
fn arm_regression(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rows: &[usize],
    config: &RlassoConfig,
    rng: RngStream,
    arm: &str,
) -> Result<DVector<f64>> {
    if rows.len() < 2 {
        return Err(HdmError::Arm(format!("arm {arm} has {} observations", rows.len())));
    }
    let ys = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    if ys.iter().all(|&v| v == ys[0]) {
        return Ok(DVector::from_element(x.nrows(), ys[0]));
    }
    let fit = rlasso(&select_rows(x, rows), &ys, config, rng)?;
    fit.predict(x)
}

/// Probability model fitted on `rows`; a constant when the outcome does not
/// vary there.
fn arm_probability(
    x: &DMatrix<f64>,
    v: &DVector<f64>,
    rows: &[usize],
    config: &RlassoConfig,
) -> Result<DVector<f64>> {
    let vs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| v[i]));
    if vs.iter().all(|&a| a == vs[0]) {
        return Ok(DVector::from_element(x.nrows(), vs[0]));
    }
    let fit = rlassologit(&select_rows(x, rows), &vs, config)?;
    fit.predict_response(x)
}

struct Nuisance {
    g1: DVector<f64>,
    g0: DVector<f64>,
    m: DVector<f64>,
    clip_fraction: f64,
}

fn fit_nuisance(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    assignment: &DVector<f64>,
    config: &TreatmentConfig,
    rng: RngStream,
) -> Result<Nuisance> {
    let treated = rows_where(assignment, 1.0);
    let control = rows_where(assignment, 0.0);
    let g1 = arm_regression(x, y, &treated, &config.outcome, rng.fork("outcome-1"), "1")?;
    let g0 = arm_regression(x, y, &control, &config.outcome, rng.fork("outcome-0"), "0")?;
    let all: Vec<usize> = (0..y.len()).collect();
    let raw = arm_probability(x, assignment, &all, &config.propensity)?;
    let lo = config.trim;
    let hi = 1.0 - config.trim;
    let clipped = raw.iter().filter(|&&q| q < lo || q > hi).count();
    Ok(Nuisance {
        g1,
        g0,
        m: raw.map(|q| q.clamp(lo, hi)),
        clip_fraction: clipped as f64 / y.len() as f64,
    })
}

/// Doubly robust score of the mean contrast `E[v(1)] - E[v(0)]` given
/// arm regressions `h1`, `h0` and assignment `a`.
fn aipw_terms(v: &DVector<f64>, a: &DVector<f64>, h1: &DVector<f64>, h0: &DVector<f64>, m: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        h1[i] - h0[i] + a[i] * (v[i] - h1[i]) / m[i] - (1.0 - a[i]) * (v[i] - h0[i]) / (1.0 - m[i])
    })
}

/// Treated-weighted contrast against the control regression `h0`.
fn treated_terms(v: &DVector<f64>, a: &DVector<f64>, h0: &DVector<f64>, m: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        let u = v[i] - h0[i];
        a[i] * u - m[i] * (1.0 - a[i]) * u / (1.0 - m[i])
    })
}

/// Ratio estimator `E_n[num] / E_n[den]` with its delta-method influence.
fn ratio(num: &DVector<f64>, den: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let dbar = mean(den.as_slice());
    if !(dbar > 0.0) {
        return Err(HdmError::WeakFirstStage(format!(
            "estimated first stage {dbar:.4e} is not positive"
        )));
    }
    let theta = mean(num.as_slice()) / dbar;
    let psi = (num - den * theta) / dbar;
    Ok((theta, psi))
}

/// Estimates the requested treatment effect with plug-in standard errors.
pub fn estimate_treatment(
    effect_type: EffectType,
    x: &DMatrix<f64>,
    d: &DVector<f64>,
    y: &DVector<f64>,
    z: Option<&DVector<f64>>,
    config: &TreatmentConfig,
    rng: RngStream,
) -> Result<TreatmentFit> {
    let n = y.len();
    if x.nrows() != n || d.len() != n || z.map(|v| v.len() != n).unwrap_or(false) {
        return Err(HdmError::Schema("treatment inputs have different row counts".into()));
    }
    if !(config.trim >= 0.0 && config.trim < 0.5) {
        return Err(HdmError::Domain(format!("trim must lie in [0, 0.5), got {}", config.trim)));
    }
    check_binary(d, "treatment")?;
    let z = if effect_type.needs_instrument() {
        let z = z.ok_or_else(|| {
            HdmError::Schema(format!("{} requires a binary instrument", effect_type.label()))
        })?;
        check_binary(z, "instrument")?;
        Some(z)
    } else {
        None
    };

    let (te, influence, clip_fraction) = match effect_type {
        EffectType::Ate | EffectType::Atet => {
            let nu = fit_nuisance(x, y, d, config, rng)?;
            let (theta, psi) = if effect_type == EffectType::Ate {
                let h = aipw_terms(y, d, &nu.g1, &nu.g0, &nu.m);
                ratio(&h, &DVector::from_element(n, 1.0))?
            } else {
                let h = treated_terms(y, d, &nu.g0, &nu.m);
                ratio(&h, d)?
            };
            (theta, psi, nu.clip_fraction)
        }
        EffectType::Late | EffectType::Latet => {
            let z = z.expect("checked above");
            let nu = fit_nuisance(x, y, z, config, rng)?;
            let z1 = rows_where(z, 1.0);
            let z0 = rows_where(z, 0.0);
            let mu1 = arm_probability(x, d, &z1, &config.propensity)?;
            let mu0 = arm_probability(x, d, &z0, &config.propensity)?;
            let (num, den) = if effect_type == EffectType::Late {
                (
                    aipw_terms(y, z, &nu.g1, &nu.g0, &nu.m),
                    aipw_terms(d, z, &mu1, &mu0, &nu.m),
                )
            } else {
                (
                    treated_terms(y, z, &nu.g0, &nu.m),
                    treated_terms(d, z, &mu0, &nu.m),
                )
            };
            let (theta, psi) = ratio(&num, &den)?;
            (theta, psi, nu.clip_fraction)
        }
    };
    let nf = n as f64;
    let se = (influence.dot(&influence) / nf / nf).sqrt();
    Ok(TreatmentFit {
        effect_type,
        te,
        se,
        influence,
        boot_method: None,
        boot_draws: None,
        boot_se: None,
        clip_fraction,
    })
}

/// Multiplier bootstrap around the influence-function linearization:
/// replication `b` is `te + E_n[e_i psi_i]`.
pub fn bootstrap_se(
    fit: &TreatmentFit,
    method: MultiplierKind,
    num_boot: usize,
    rng: RngStream,
) -> Result<TreatmentFit> {
    if num_boot < 2 {
        return Err(HdmError::Domain("bootstrap needs num_boot >= 2".into()));
    }
    let n = fit.n();
    let nf = n as f64;
    let psi = &fit.influence;
    let shifts = par::map_range(num_boot, |b| {
        let mut r = rng.substream(b as u64).rng();
        let e = fill_multipliers(method, &mut r, n);
        e.iter().zip(psi.iter()).map(|(a, s)| a * s).sum::<f64>() / nf
    });
    let m = mean(&shifts);
    let var = shifts.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (num_boot - 1) as f64;
    let mut out = fit.clone();
    out.boot_method = Some(method);
    out.boot_se = Some(var.sqrt());
    out.boot_draws = Some(shifts.into_iter().map(|v| fit.te + v).collect());
    Ok(out)
}
