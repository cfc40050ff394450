//! Rendering of estimation results as JSON, aligned text tables or CSV.
//!
//! JSON keeps full precision (shortest round-trip floats); tables show four
//! significant digits, right-aligned.

use indexmap::IndexMap;
use serde::Serialize;
use serde_json::{json, Value};

use crate::effects::{EffectsResult, Intervals};
use crate::iv::{CoefRole, IvFit, IvMethod};
use crate::rlasso::RlassoFit;
use crate::treatment::TreatmentFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Table,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Format::Json),
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

/// `x` rounded to four significant digits; scientific notation outside
/// `[1e-4, 1e6)`.
pub fn sig4(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x > 0.0 { "Inf".into() } else { "-Inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let mut exp = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(3 - exp);
    let rounded = (x * scale).round() / scale;
    if rounded != 0.0 {
        exp = rounded.abs().log10().floor() as i32;
    }
    if (-4..6).contains(&exp) {
        format!("{:.*}", (3 - exp).max(0) as usize, rounded)
    } else {
        format!("{x:.3e}")
    }
}

/// Right-aligned text table.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn csv_line(cells: &[String]) -> String {
    let quoted: Vec<String> = cells
        .iter()
        .map(|c| {
            if c.contains([',', '"', '\n']) {
                format!("\"{}\"", c.replace('"', "\"\""))
            } else {
                c.clone()
            }
        })
        .collect();
    format!("{}\n", quoted.join(","))
}

fn csv_block(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = csv_line(&header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
    for row in rows {
        out.push_str(&csv_line(row));
    }
    out
}

fn num(x: f64) -> String {
    // shortest representation that round-trips
    format!("{x}")
}

fn json_string(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

fn p_text(p: f64, bound: bool) -> String {
    if bound {
        format!("< {}", sig4(p))
    } else {
        sig4(p)
    }
}

pub fn fit_json(fit: &RlassoFit, names: &[String]) -> Value {
    let coefficients: IndexMap<&str, f64> = fit
        .selected
        .iter()
        .map(|&j| (names[j].as_str(), fit.coefficients[j]))
        .collect();
    let loadings: IndexMap<&str, f64> = names
        .iter()
        .zip(&fit.penalty.loadings)
        .map(|(n, l)| (n.as_str(), *l))
        .collect();
    let selected: Vec<&str> = fit.selected.iter().map(|&j| names[j].as_str()).collect();
    let sup = fit.sup_score.map(|s| {
        json!({
            "stat": s.statistic,
            "p": s.p_value,
            "p_is_upper_bound": s.p_value_is_bound,
        })
    });
    json!({
        "coefficients": coefficients,
        "intercept": fit.intercept,
        "lambda": fit.penalty.lambda,
        "loadings": loadings,
        "sigma_hat": fit.penalty.sigma_hat,
        "selected": selected,
        "post": fit.post,
        "iterations_run": fit.iterations_run,
        "r_squared": fit.r_squared,
        "adj_r_squared": fit.adj_r_squared,
        "sup_score": sup,
    })
}

pub fn render_fit(fit: &RlassoFit, names: &[String], format: Format) -> String {
    let mut rows = Vec::new();
    if let Some(b0) = fit.intercept {
        rows.push(("(Intercept)".to_string(), b0));
    }
    for &j in &fit.selected {
        rows.push((names[j].clone(), fit.coefficients[j]));
    }
    match format {
        Format::Json => json_string(&fit_json(fit, names)),
        Format::Csv => csv_block(
            &["name", "estimate"],
            &rows.iter().map(|(n, v)| vec![n.clone(), num(*v)]).collect::<Vec<_>>(),
        ),
        Format::Table => {
            let mut out = String::new();
            out.push_str(&format!("Post-Lasso Estimation: {}\n", fit.post.to_string().to_uppercase()));
            out.push_str(&format!("Number of selected variables: {}\n", fit.selected.len()));
            out.push_str(&format!("Penalty level lambda: {}\n", sig4(fit.penalty.lambda)));
            out.push_str(&format!("Iterations: {}\n", fit.iterations_run));
            out.push_str(&format!(
                "R-squared: {}  Adjusted R-squared: {}\n",
                sig4(fit.r_squared),
                sig4(fit.adj_r_squared)
            ));
            if let Some(s) = fit.sup_score {
                out.push_str(&format!(
                    "Sup-score statistic: {}  p-value: {}\n",
                    sig4(s.statistic),
                    p_text(s.p_value, s.p_value_is_bound)
                ));
            }
            out.push('\n');
            out.push_str(&table(
                &["", "Estimate"],
                &rows.iter().map(|(n, v)| vec![n.clone(), sig4(*v)]).collect::<Vec<_>>(),
            ));
            out
        }
    }
}

#[derive(Debug, Serialize)]
struct EffectRow<'a> {
    name: &'a str,
    estimate: f64,
    se: f64,
    t: f64,
    p: f64,
    ci_low: f64,
    ci_high: f64,
    ci_low_joint: Option<f64>,
    ci_high_joint: Option<f64>,
}

pub fn render_effects(
    result: &EffectsResult,
    pointwise: &Intervals,
    joint: Option<&Intervals>,
    format: Format,
) -> String {
    let rows: Vec<EffectRow> = result
        .estimates
        .iter()
        .enumerate()
        .map(|(k, e)| EffectRow {
            name: &e.name,
            estimate: e.alpha,
            se: e.se,
            t: e.t_value,
            p: e.p_value,
            ci_low: pointwise.intervals[k].lower,
            ci_high: pointwise.intervals[k].upper,
            ci_low_joint: joint.map(|j| j.intervals[k].lower),
            ci_high_joint: joint.map(|j| j.intervals[k].upper),
        })
        .collect();
    match format {
        Format::Json => json_string(&rows),
        Format::Csv => {
            // plot data: the joint band when available, else pointwise
            let band = joint.unwrap_or(pointwise);
            csv_block(
                &["name", "estimate", "lower", "upper"],
                &band
                    .intervals
                    .iter()
                    .map(|iv| vec![iv.name.clone(), num(iv.estimate), num(iv.lower), num(iv.upper)])
                    .collect::<Vec<_>>(),
            )
        }
        Format::Table => {
            let level = format!("{}%", sig4(pointwise.level * 100.0));
            let mut header = vec!["", "Estimate", "Std. Error", "t value", "Pr(>|t|)", "lower", "upper"];
            if joint.is_some() {
                header.extend(["joint lower", "joint upper"]);
            }
            let body: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    let mut cells = vec![
                        r.name.to_string(),
                        sig4(r.estimate),
                        sig4(r.se),
                        sig4(r.t),
                        sig4(r.p),
                        sig4(r.ci_low),
                        sig4(r.ci_high),
                    ];
                    if let (Some(a), Some(b)) = (r.ci_low_joint, r.ci_high_joint) {
                        cells.push(sig4(a));
                        cells.push(sig4(b));
                    }
                    cells
                })
                .collect();
            let mut out = format!("Estimates and {level} confidence intervals\n");
            if let Some(j) = joint {
                out.push_str(&format!("Joint critical value: {}\n", sig4(j.critical_value)));
            }
            out.push('\n');
            out.push_str(&table(&header, &body));
            out
        }
    }
}

pub fn method_tag(method: IvMethod) -> &'static str {
    match method {
        IvMethod::Tsls => "tsls",
        IvMethod::SelectZ => "selectZ",
        IvMethod::SelectX => "selectX",
        IvMethod::SelectXZ => "selectXZ",
    }
}

/// Display names for the coefficients of an IV fit.
pub fn iv_coef_names(fit: &IvFit, d_names: &[String], x_names: &[String]) -> Vec<String> {
    fit.roles
        .iter()
        .map(|r| match r {
            CoefRole::Endogenous(k) => d_names[*k].clone(),
            CoefRole::Exogenous(k) => x_names[*k].clone(),
            CoefRole::Intercept => "(Intercept)".to_string(),
        })
        .collect()
}

pub fn render_iv(
    fit: &IvFit,
    d_names: &[String],
    x_names: &[String],
    z_names: &[String],
    format: Format,
) -> String {
    let names = iv_coef_names(fit, d_names, x_names);
    let t = fit.t_values();
    let p = fit.p_values();
    let by_name = |v: &nalgebra::DVector<f64>| -> IndexMap<&str, f64> {
        names.iter().map(String::as_str).zip(v.iter().copied()).collect()
    };
    match format {
        Format::Json => {
            let instruments: IndexMap<&str, Vec<&str>> = d_names
                .iter()
                .zip(&fit.selected_instruments)
                .map(|(d, sel)| (d.as_str(), sel.iter().map(|&j| z_names[j].as_str()).collect()))
                .collect();
            let controls: Vec<&str> = fit.selected_controls.iter().map(|&j| x_names[j].as_str()).collect();
            json_string(&json!({
                "coefficients": by_name(&fit.coefficients),
                "se": by_name(&fit.se),
                "t": by_name(&t),
                "p": by_name(&p),
                "method_tag": method_tag(fit.method),
                "selected_instruments": instruments,
                "selected_controls": controls,
            }))
        }
        Format::Csv => csv_block(
            &["name", "estimate", "se", "t", "p"],
            &(0..names.len())
                .map(|k| vec![names[k].clone(), num(fit.coefficients[k]), num(fit.se[k]), num(t[k]), num(p[k])])
                .collect::<Vec<_>>(),
        ),
        Format::Table => {
            let mut out = format!("Estimation method: {}\n\n", method_tag(fit.method));
            out.push_str(&table(
                &["", "coeff.", "se.", "t-value", "p-value"],
                &(0..names.len())
                    .map(|k| vec![names[k].clone(), sig4(fit.coefficients[k]), sig4(fit.se[k]), sig4(t[k]), sig4(p[k])])
                    .collect::<Vec<_>>(),
            ));
            out
        }
    }
}

pub fn render_treatment(fit: &TreatmentFit, format: Format) -> String {
    let boot = fit.boot_method.map(|m| m.label().to_string()).unwrap_or_else(|| "none".into());
    let num_boot = fit.boot_draws.as_ref().map(Vec::len).unwrap_or(0);
    let se = fit.reported_se();
    match format {
        Format::Json => json_string(&json!({
            "type": fit.effect_type.label(),
            "te": fit.te,
            "se": se,
            "se_plugin": fit.se,
            "t": fit.t_value(),
            "p": fit.p_value(),
            "boot_method": boot,
            "num_boot": num_boot,
            "clip_fraction": fit.clip_fraction,
        })),
        Format::Csv => csv_block(
            &["type", "te", "se", "t", "p", "boot_method", "num_boot", "clip_fraction"],
            &[vec![
                fit.effect_type.label().to_string(),
                num(fit.te),
                num(se),
                num(fit.t_value()),
                num(fit.p_value()),
                boot,
                num_boot.to_string(),
                num(fit.clip_fraction),
            ]],
        ),
        Format::Table => {
            let mut out = format!(
                "Estimation of {} (bootstrap: {boot}, replications: {num_boot})\n\n",
                fit.effect_type.label()
            );
            out.push_str(&table(
                &["", "coeff.", "se.", "t-value", "p-value"],
                &[vec![
                    "TE".to_string(),
                    sig4(fit.te),
                    sig4(se),
                    sig4(fit.t_value()),
                    sig4(fit.p_value()),
                ]],
            ));
            out.push_str(&format!("Clipped propensity share: {}\n", sig4(fit.clip_fraction)));
            out
        }
    }
}

/// Flat metric report for a serializable experiment summary.
pub fn render_metrics(preset: &str, metrics: &impl Serialize, format: Format) -> String {
    let value = serde_json::to_value(metrics).expect("metrics serialize");
    match format {
        Format::Json => json_string(&json!({ "preset": preset, "metrics": value })),
        Format::Csv | Format::Table => {
            let mut rows = Vec::new();
            flatten("", &value, &mut rows);
            if format == Format::Csv {
                csv_block(
                    &["metric", "value"],
                    &rows.into_iter().map(|(k, v)| vec![k, v]).collect::<Vec<_>>(),
                )
            } else {
                let mut out = format!("Preset: {preset}\n\n");
                out.push_str(&table(
                    &["metric", "value"],
                    &rows
                        .into_iter()
                        .map(|(k, v)| {
                            let integral = !v.contains(['.', 'e', 'E']);
                            let shown = match v.parse::<f64>() {
                                Ok(x) if !integral => sig4(x),
                                _ => v,
                            };
                            vec![k, shown]
                        })
                        .collect::<Vec<_>>(),
                ));
                out
            }
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, inner) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, inner, out);
            }
        }
        Value::Array(items) => {
            for (i, inner) in items.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), inner, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), "null".into())),
        Value::Number(n) => out.push((prefix.to_string(), n.to_string())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
