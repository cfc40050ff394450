//! Synthetic designs with known truth and the Monte Carlo experiments run
//! against them. Replication `r` of an experiment seeded with `seed` draws
//! its data from `RngStream::new(seed, r)`, so results do not depend on how
//! replications are scheduled across workers.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::Dataset;
use crate::effects::{confint_effects, rlasso_effects, TargetSpec};
use crate::error::{HdmError, Result};
use crate::iv::rlasso_iv;
use crate::linalg::mean;
use crate::par;
use crate::prob::{MultiplierKind, RngStream};
use crate::rlasso::{rlasso, sup_score_test, RlassoConfig};
use crate::treatment::{bootstrap_se, estimate_treatment, EffectType, TreatmentConfig};

/// `n x p` Gaussian design with `corr(x_j, x_k) = rho^|j-k|`.
pub fn toeplitz_design<R: Rng>(rng: &mut R, n: usize, p: usize, rho: f64) -> DMatrix<f64> {
    let scale = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for j in 0..p {
            let u: f64 = rng.sample(StandardNormal);
            let v = if j == 0 { u } else { rho * prev + scale * u };
            x[(i, j)] = v;
            prev = v;
        }
    }
    x
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn names(prefix: &str, k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("{prefix}{j}")).collect()
}

/// Linear model with a sparse coefficient vector.
#[derive(Debug, Clone)]
pub struct LinearSample {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta: DVector<f64>,
}

impl LinearSample {
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut cols = vec![("y".to_string(), self.y.as_slice().to_vec())];
        for (j, name) in names("x", self.x.ncols()).into_iter().enumerate() {
            cols.push((name, self.x.column(j).as_slice().to_vec()));
        }
        Dataset::from_columns(cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    Gaussian,
    /// `eps_i = x_i1 * u_i` with standard normal `u`.
    Heteroscedastic,
}

/// `y = X beta + eps`, `X` iid standard normal, first `s` coefficients equal
/// to `signal`.
pub fn sparse_linear(n: usize, p: usize, s: usize, signal: f64, noise: Noise, stream: RngStream) -> LinearSample {
    let mut rng = stream.rng();
    let x = toeplitz_design(&mut rng, n, p, 0.0);
    let beta = DVector::from_fn(p, |j, _| if j < s { signal } else { 0.0 });
    let u = normals(&mut rng, n);
    let eps = match noise {
        Noise::Gaussian => u,
        Noise::Heteroscedastic => DVector::from_fn(n, |i, _| x[(i, 0)] * u[i]),
    };
    let y = &x * &beta + eps;
    LinearSample { x, y, beta }
}

/// Slopes of the two active regressors in [`logistic_sparse`].
pub const LOGISTIC_BETA: [f64; 2] = [1.5, -1.5];

/// Binary response with `P(y = 1 | x) = sigmoid(x'beta)`, `X` iid standard
/// normal and two active regressors.
pub fn logistic_sparse(n: usize, p: usize, stream: RngStream) -> LinearSample {
    let mut rng = stream.rng();
    let x = toeplitz_design(&mut rng, n, p, 0.0);
    let beta = DVector::from_fn(p, |j, _| LOGISTIC_BETA.get(j).copied().unwrap_or(0.0));
    let eta = &x * &beta;
    let y = eta.map(|e| {
        let u: f64 = rng.random();
        if u < crate::logit::sigmoid(e) { 1.0 } else { 0.0 }
    });
    LinearSample { x, y, beta }
}

/// Coefficient of the first column in [`effects_design`]; all others are zero.
pub const EFFECTS_SIGNAL: f64 = 5.0;

/// `n x p` iid Gaussian design with `y = 5 x_1 + eps`. Targets are columns
/// 0 (coefficient 5), 1 and 2 (both null).
pub fn effects_design(n: usize, p: usize, stream: RngStream) -> LinearSample {
    let mut rng = stream.rng();
    let x = toeplitz_design(&mut rng, n, p, 0.0);
    let beta = DVector::from_fn(p, |j, _| if j == 0 { EFFECTS_SIGNAL } else { 0.0 });
    let y = &x * &beta + normals(&mut rng, n);
    LinearSample { x, y, beta }
}

#[derive(Debug, Clone)]
pub struct IvSample {
    pub x: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
    pub alpha: f64,
}

impl IvSample {
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut cols = vec![
            ("y".to_string(), self.y.as_slice().to_vec()),
            ("d".to_string(), self.d.column(0).as_slice().to_vec()),
        ];
        for (j, name) in names("x", self.x.ncols()).into_iter().enumerate() {
            cols.push((name, self.x.column(j).as_slice().to_vec()));
        }
        for (j, name) in names("z", self.z.ncols()).into_iter().enumerate() {
            cols.push((name, self.z.column(j).as_slice().to_vec()));
        }
        Dataset::from_columns(cols)
    }
}

/// Endogenous design: `d = z'pi + x'gamma + v`, `y = alpha d + x'beta + eps`
/// with `corr(eps, v) = 0.5`. The first `strong` instruments carry weight
/// `strength`; controls 0..3 enter both equations.
pub fn iv_design(n: usize, px: usize, pz: usize, strong: usize, strength: f64, alpha: f64, stream: RngStream) -> IvSample {
    let mut rng = stream.rng();
    let x = toeplitz_design(&mut rng, n, px, 0.5);
    let z = toeplitz_design(&mut rng, n, pz, 0.0);
    let v = normals(&mut rng, n);
    let w = normals(&mut rng, n);
    let eps = DVector::from_fn(n, |i, _| 0.5 * v[i] + (0.75f64).sqrt() * w[i]);
    let pi = DVector::from_fn(pz, |j, _| if j < strong { strength } else { 0.0 });
    let gamma = DVector::from_fn(px, |j, _| if j < 3 { 1.0 } else { 0.0 });
    let beta = DVector::from_fn(px, |j, _| if j < 3 { 1.0 } else { 0.0 });
    let dcol = &z * pi + &x * gamma + v;
    let y = &dcol * alpha + &x * beta + eps;
    IvSample {
        x,
        d: DMatrix::from_column_slice(n, 1, dcol.as_slice()),
        y,
        z,
        alpha,
    }
}

#[derive(Debug, Clone)]
pub struct TreatmentSample {
    pub x: DMatrix<f64>,
    pub d: DVector<f64>,
    pub y: DVector<f64>,
    pub z: DVector<f64>,
    pub tau: f64,
}

impl TreatmentSample {
    pub fn to_dataset(&self) -> Result<Dataset> {
        let mut cols = vec![
            ("y".to_string(), self.y.as_slice().to_vec()),
            ("d".to_string(), self.d.as_slice().to_vec()),
            ("z".to_string(), self.z.as_slice().to_vec()),
        ];
        for (j, name) in names("x", self.x.ncols()).into_iter().enumerate() {
            cols.push((name, self.x.column(j).as_slice().to_vec()));
        }
        Dataset::from_columns(cols)
    }
}

/// Coefficients of the covariates in the randomized design.
pub const TREATMENT_BETA: [f64; 3] = [0.5, 0.25, 0.25];

/// Randomized experiment: `d ~ Bernoulli(0.5)` independent of `x`,
/// `y = tau d + x'beta + eps`. The instrument column equals `d`.
pub fn randomized_treatment(n: usize, p: usize, tau: f64, stream: RngStream) -> TreatmentSample {
    let mut rng = stream.rng();
    let x = toeplitz_design(&mut rng, n, p, 0.0);
    let d = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let beta = DVector::from_fn(p, |j, _| TREATMENT_BETA.get(j).copied().unwrap_or(0.0));
    let y = &d * tau + &x * beta + normals(&mut rng, n);
    TreatmentSample {
        z: d.clone(),
        x,
        d,
        y,
        tau,
    }
}

fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|&&f| f).count() as f64 / flags.len().max(1) as f64
}

fn count(flags: impl Iterator<Item = bool>) -> usize {
    flags.filter(|&f| f).count()
}

#[derive(Debug, Clone, Serialize)]
pub struct SupportRecovery {
    pub reps: usize,
    /// Post-Lasso selected exactly the true support.
    pub post_exact: usize,
    /// Lasso support contains the true support.
    pub lasso_superset: usize,
    /// Lasso under heteroscedastic noise contains the true support.
    pub hetero_superset: usize,
    pub mean_lasso_size: f64,
    pub mean_hetero_size: f64,
    /// Penalty refinement stopped on its relative-change rule (Post-Lasso).
    pub post_penalty_converged: usize,
}

/// n = 100, p = 100, s = 3, signal 5.
pub fn support_recovery(reps: usize, seed: u64) -> Result<SupportRecovery> {
    let truth = [0usize, 1, 2];
    let rows = par::map_range(reps, |r| -> Result<(bool, bool, bool, usize, usize, bool)> {
        let stream = RngStream::new(seed, r as u64);
        let fit_cfg = |post| RlassoConfig {
            post,
            sup_score: false,
            ..Default::default()
        };
        let g = sparse_linear(100, 100, 3, 5.0, Noise::Gaussian, stream);
        let post = rlasso(&g.x, &g.y, &fit_cfg(true), stream.fork("post"))?;
        let lasso = rlasso(&g.x, &g.y, &fit_cfg(false), stream.fork("lasso"))?;
        let h = sparse_linear(100, 100, 3, 5.0, Noise::Heteroscedastic, stream.fork("hetero"));
        let hfit = rlasso(&h.x, &h.y, &fit_cfg(false), stream.fork("hetero-fit"))?;
        let contains = |sel: &[usize]| truth.iter().all(|t| sel.contains(t));
        Ok((
            post.selected == truth,
            contains(&lasso.selected),
            contains(&hfit.selected),
            lasso.selected.len(),
            hfit.selected.len(),
            post.penalty_converged,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SupportRecovery {
        reps,
        post_exact: count(rows.iter().map(|r| r.0)),
        lasso_superset: count(rows.iter().map(|r| r.1)),
        hetero_superset: count(rows.iter().map(|r| r.2)),
        mean_lasso_size: mean(&rows.iter().map(|r| r.3 as f64).collect::<Vec<_>>()),
        mean_hetero_size: mean(&rows.iter().map(|r| r.4 as f64).collect::<Vec<_>>()),
        post_penalty_converged: count(rows.iter().map(|r| r.5)),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EffectsCoverage {
    pub reps: usize,
    /// Pointwise 95% coverage for targets 0, 1, 2.
    pub pointwise_coverage: [f64; 3],
    /// Rejection rate of `|t| > 1.96` for the first null target.
    pub null_rejection: f64,
    /// Mean and standard deviation of the studentized error for target 0.
    pub signal_z_mean: f64,
    pub signal_z_sd: f64,
    /// All three targets covered by the joint 95% intervals.
    pub joint_coverage: f64,
    /// Joint intervals contained every pointwise interval.
    pub joint_contains_pointwise: f64,
    /// Largest absolute score-column mean seen.
    pub max_score_mean: f64,
}

/// n = 100, p = 50 with targets {0, 1, 2} of [`effects_design`].
pub fn effects_coverage(reps: usize, seed: u64, num_boot: usize) -> Result<EffectsCoverage> {
    let rows = par::map_range(reps, |r| -> Result<([bool; 3], bool, bool, bool, f64, f64)> {
        let stream = RngStream::new(seed, r as u64);
        let s = effects_design(100, 50, stream);
        let nm = names("x", 50);
        let res = rlasso_effects(
            &s.x,
            &s.y,
            &nm,
            &TargetSpec::Positions(vec![0, 1, 2]),
            &RlassoConfig::auxiliary(),
            stream.fork("effects"),
        )?;
        let point = confint_effects(&res, 0.95, false, 0, stream.fork("ci"))?;
        let joint = confint_effects(&res, 0.95, true, num_boot, stream.fork("joint"))?;
        let mut cover = [false; 3];
        for k in 0..3 {
            let iv = &point.intervals[k];
            cover[k] = iv.lower <= s.beta[k] && s.beta[k] <= iv.upper;
        }
        let joint_cover = (0..3).all(|k| {
            let iv = &joint.intervals[k];
            iv.lower <= s.beta[k] && s.beta[k] <= iv.upper
        });
        let contains = (0..3).all(|k| {
            joint.intervals[k].lower <= point.intervals[k].lower
                && joint.intervals[k].upper >= point.intervals[k].upper
        });
        let reject_null = res.estimates[1].t_value.abs() > 1.959_963_984_540_054;
        let max_mean = crate::effects::score_means(&res)
            .into_iter()
            .fold(0.0, |a: f64, m| a.max(m.abs()));
        let z = (res.estimates[0].alpha - s.beta[0]) / res.estimates[0].se;
        Ok((cover, reject_null, joint_cover, contains, max_mean, z))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let cov = |k: usize| fraction(&rows.iter().map(|r| r.0[k]).collect::<Vec<_>>());
    let z: Vec<f64> = rows.iter().map(|r| r.5).collect();
    Ok(EffectsCoverage {
        reps,
        pointwise_coverage: [cov(0), cov(1), cov(2)],
        null_rejection: fraction(&rows.iter().map(|r| r.1).collect::<Vec<_>>()),
        joint_coverage: fraction(&rows.iter().map(|r| r.2).collect::<Vec<_>>()),
        joint_contains_pointwise: fraction(&rows.iter().map(|r| r.3).collect::<Vec<_>>()),
        max_score_mean: rows.iter().map(|r| r.4).fold(0.0, f64::max),
        signal_z_mean: mean(&z),
        signal_z_sd: crate::linalg::sample_variance(&z).sqrt(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SupScoreRates {
    pub reps: usize,
    /// Rejection rate at 5% under `y` independent of `X`.
    pub size: f64,
    /// Rejection rate at 5% on the s = 3, signal 5 design.
    pub power: f64,
}

/// Size on n = 100, p = 100 null data and power on the sparse design.
pub fn sup_score_rates(size_reps: usize, power_reps: usize, seed: u64, num_sim: usize) -> Result<SupScoreRates> {
    let reject = |signal: f64, r: usize, label: &str| -> Result<bool> {
        let stream = RngStream::new(seed, r as u64).fork(label);
        let g = sparse_linear(100, 100, 3, signal, Noise::Gaussian, stream);
        let t = sup_score_test(&g.x, &g.y, true, num_sim, stream.fork("test"))?;
        Ok(t.p_value < 0.05)
    };
    let size = par::map_range(size_reps, |r| reject(0.0, r, "null"))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let power = par::map_range(power_reps, |r| reject(5.0, r, "signal"))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(SupScoreRates {
        reps: size_reps,
        size: fraction(&size),
        power: fraction(&power),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IvRecovery {
    pub reps: usize,
    /// selectXZ estimate within 3 reported SEs of the truth.
    pub within_3se: usize,
    /// Estimation errors other than weak identification on the strong design.
    pub failures: usize,
    /// Noise-instrument runs that raised weak identification.
    pub weak_detected: usize,
    pub mean_estimate: f64,
}

/// n = 250, 80 controls, 60 instruments (3 strong), alpha = 1.
pub fn iv_recovery(reps: usize, seed: u64) -> Result<IvRecovery> {
    let cfg = RlassoConfig::auxiliary();
    let rows = par::map_range(reps, |r| -> Result<(Option<(f64, f64)>, bool)> {
        let stream = RngStream::new(seed, r as u64);
        let s = iv_design(250, 80, 60, 3, 1.0, 1.0, stream);
        let strong = match rlasso_iv(Some(&s.x), &s.d, &s.y, &s.z, true, true, &cfg, stream.fork("fit")) {
            Ok(fit) => Some((fit.coefficients[0], fit.se[0])),
            Err(HdmError::WeakIdentification(_)) | Err(HdmError::Singularity(_)) => None,
            Err(e) => return Err(e),
        };
        let noise = iv_design(250, 80, 60, 0, 0.0, 1.0, stream.fork("noise"));
        let weak = matches!(
            rlasso_iv(Some(&noise.x), &noise.d, &noise.y, &noise.z, true, true, &cfg, stream.fork("noise-fit")),
            Err(HdmError::WeakIdentification(_))
        );
        Ok((strong, weak))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let estimates: Vec<f64> = rows.iter().filter_map(|r| r.0.map(|e| e.0)).collect();
    Ok(IvRecovery {
        reps,
        within_3se: count(rows.iter().map(|r| matches!(r.0, Some((a, se)) if (a - 1.0).abs() <= 3.0 * se))),
        failures: count(rows.iter().map(|r| r.0.is_none())),
        weak_detected: count(rows.iter().map(|r| r.1)),
        mean_estimate: if estimates.is_empty() { f64::NAN } else { mean(&estimates) },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TreatmentRandomized {
    pub reps: usize,
    /// ATE within 3 SEs of the true effect.
    pub within_3se_truth: usize,
    /// ATE within 2 SEs of the difference in means.
    pub within_2se_dim: usize,
    /// Plug-in and bootstrap SEs within 10% of each other.
    pub se_agreement: usize,
    pub mean_ate: f64,
    pub mean_se: f64,
    pub max_clip_fraction: f64,
}

/// n = 500, p = 50, tau = 1, normal-multiplier bootstrap with `num_boot`.
pub fn treatment_randomized(reps: usize, seed: u64, num_boot: usize) -> Result<TreatmentRandomized> {
    let cfg = TreatmentConfig::default();
    let rows = par::map_range(reps, |r| -> Result<(bool, bool, bool, f64, f64, f64)> {
        let stream = RngStream::new(seed, r as u64);
        let s = randomized_treatment(500, 50, 1.0, stream);
        let fit = estimate_treatment(EffectType::Ate, &s.x, &s.d, &s.y, None, &cfg, stream.fork("fit"))?;
        let boot = bootstrap_se(&fit, MultiplierKind::Normal, num_boot, stream.fork("boot"))?;
        let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..s.y.len() {
            if s.d[i] == 1.0 {
                s1 += s.y[i];
                n1 += 1.0;
            } else {
                s0 += s.y[i];
                n0 += 1.0;
            }
        }
        let dim = s1 / n1 - s0 / n0;
        let bse = boot.boot_se.unwrap_or(f64::NAN);
        Ok((
            (fit.te - s.tau).abs() <= 3.0 * fit.se,
            (fit.te - dim).abs() <= 2.0 * fit.se,
            (bse - fit.se).abs() <= 0.1 * fit.se,
            fit.te,
            fit.se,
            fit.clip_fraction,
        ))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(TreatmentRandomized {
        reps,
        within_3se_truth: count(rows.iter().map(|r| r.0)),
        within_2se_dim: count(rows.iter().map(|r| r.1)),
        se_agreement: count(rows.iter().map(|r| r.2)),
        mean_ate: mean(&rows.iter().map(|r| r.3).collect::<Vec<_>>()),
        mean_se: mean(&rows.iter().map(|r| r.4).collect::<Vec<_>>()),
        max_clip_fraction: rows.iter().map(|r| r.5).fold(0.0, f64::max),
    })
}
