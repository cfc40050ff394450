//! Command-line front end.
//!
//! [`run`] parses arguments, loads the CSV, dispatches to an estimator and
//! writes the report. It never panics on user input; failures map to exit
//! code 2 (usage: bad flags, unknown columns, unreadable input) or 1
//! (estimation: singular designs, weak identification, ...).

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{build_problem, load_csv, ColumnSpec, CsvOptions, Dataset, RegressionProblem};
use crate::effects::{confint_effects, rlasso_effects, TargetSpec};
use crate::error::HdmError;
use crate::iv::rlasso_iv;
use crate::logit::rlassologit;
use crate::prob::{MultiplierKind, RngStream};
use crate::report::{self, Format};
use crate::rlasso::{rlasso, Homoscedastic, LambdaStart, PenaltyOptions, RlassoConfig};
use crate::treatment::{bootstrap_se, estimate_treatment, EffectType, TreatmentConfig};
use crate::{par, sim};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ESTIMATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "HDM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "hdm",
    version,
    about = "Rigorous Lasso, post-selection inference, IV and treatment-effect estimation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lasso / Post-Lasso with the data-driven penalty.
    Fit(FitArgs),
    /// Partialling-out estimates with pointwise and joint intervals.
    Effects(EffectsArgs),
    /// Instrumental-variables regression with optional selection.
    Iv(IvArgs),
    /// ATE, ATET, LATE or LATET from orthogonal moments.
    Treat(TreatArgs),
    /// Monte Carlo experiment presets.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Table,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => Format::Json,
            FormatArg::Table => Format::Table,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HomoscedasticArg {
    True,
    False,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EffectArg {
    Ate,
    Atet,
    Late,
    Latet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BootArg {
    None,
    Normal,
    Wild,
    Bayes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    SupportRecovery,
    Coverage,
    SupScore,
    IvRecovery,
    TreatmentRandomized,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the report here instead of standard output.
    #[arg(long, value_name = "PATH")]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Numeric CSV with a header row.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Response column.
    #[arg(long, value_name = "COLUMN")]
    pub y: String,
    /// Control columns: names and ranges such as `x1:x100,w3`. Defaults to
    /// every column not used in another role.
    #[arg(long, value_name = "COLUMNS")]
    pub x: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Refit OLS on the selected support (default).
    #[arg(long, overrides_with = "no_post")]
    pub post: bool,
    #[arg(long = "no-post", overrides_with = "post")]
    pub no_post: bool,
    /// Fit an unpenalized intercept (default).
    #[arg(long, overrides_with = "no_intercept")]
    pub intercept: bool,
    #[arg(long = "no-intercept", overrides_with = "intercept")]
    pub no_intercept: bool,
    /// Error-variance assumption; `none` uses --lambda-start verbatim.
    #[arg(
        long,
        value_enum,
        num_args = 0..=1,
        default_value = "false",
        default_missing_value = "true"
    )]
    pub homoscedastic: HomoscedasticArg,
    /// Simulate the penalty quantile from the design.
    #[arg(long = "x-dependent")]
    pub x_dependent: bool,
    /// Slack constant (default 1.1 with --post, 0.5 without).
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    /// Penalty level: one value, or one per control separated by commas.
    #[arg(long = "lambda-start", value_name = "LAMBDA")]
    pub lambda_start: Option<String>,
    /// Draws for simulated quantiles and the sup-score test.
    #[arg(long = "num-sim", default_value_t = 5000)]
    pub num_sim: usize,
    /// Maximum penalty refinement passes.
    #[arg(long = "num-iter", default_value_t = 15)]
    pub num_iter: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Binary response: penalized logistic regression.
    #[arg(long)]
    pub logistic: bool,
    /// Skip the sup-score joint significance test.
    #[arg(long = "no-sup-score")]
    pub no_sup_score: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EffectsArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Target columns (names or ranges); must be among the controls.
    #[arg(long, value_name = "COLUMNS")]
    pub targets: String,
    /// Add simultaneous intervals from the multiplier bootstrap.
    #[arg(long)]
    pub joint: bool,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long = "num-boot", default_value_t = 5000)]
    pub num_boot: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct IvArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Endogenous columns.
    #[arg(long, value_name = "COLUMNS")]
    pub d: String,
    /// Instrument columns.
    #[arg(long, value_name = "COLUMNS")]
    pub z: String,
    /// Select controls with the Lasso.
    #[arg(long = "select-x")]
    pub select_x: bool,
    /// Select instruments with the Lasso.
    #[arg(long = "select-z")]
    pub select_z: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TreatArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Binary treatment column.
    #[arg(long, value_name = "COLUMN")]
    pub d: String,
    /// Binary instrument column (LATE and LATET).
    #[arg(long, value_name = "COLUMN")]
    pub z: Option<String>,
    #[arg(long, value_enum, default_value = "ate")]
    pub effect: EffectArg,
    #[arg(long, value_enum, default_value = "none")]
    pub boot: BootArg,
    #[arg(long = "num-boot", default_value_t = 500)]
    pub num_boot: usize,
    /// Propensity clipping bound.
    #[arg(long, default_value_t = 0.01)]
    pub trim: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long = "num-boot", default_value_t = 2000)]
    pub num_boot: usize,
    #[arg(long = "num-sim", default_value_t = 5000)]
    pub num_sim: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Failure of a CLI run.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("UsageError: {0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] HdmError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Library(e) if e.is_usage() => EXIT_USAGE,
            CliError::Library(_) => EXIT_ESTIMATION,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(flag: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("invalid value for {flag}: {msg}"))
}

/// Parses `args` (program name first), runs the command and writes the
/// report to `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t >= 1 => Some(t),
            _ => {
                let _ = writeln!(err, "error: {}", usage(THREADS_ENV, format!("expected a positive integer, got {v:?}")));
                return EXIT_USAGE;
            }
        },
        Err(_) => None,
    };
    let outcome = par::with_threads(threads, || execute(&cli));
    match outcome {
        Ok((text, path)) => match write_report(&text, path.as_ref(), out) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn write_report(text: &str, path: Option<&PathBuf>, out: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Usage(format!("cannot write --output {}: {e}", p.display()))),
        None => out
            .write_all(text.as_bytes())
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Library(HdmError::Io(e))),
    }
}

fn execute(cli: &Cli) -> CliResult<(String, Option<PathBuf>)> {
    match &cli.command {
        Command::Fit(a) => Ok((cmd_fit(a)?, a.output.output.clone())),
        Command::Effects(a) => Ok((cmd_effects(a)?, a.output.output.clone())),
        Command::Iv(a) => Ok((cmd_iv(a)?, a.output.output.clone())),
        Command::Treat(a) => Ok((cmd_treat(a)?, a.output.output.clone())),
        Command::Simulate(a) => Ok((cmd_simulate(a)?, a.output.output.clone())),
    }
}

impl ModelArgs {
    fn post(&self) -> bool {
        !self.no_post
    }

    fn intercept(&self) -> bool {
        !self.no_intercept
    }

    fn lambda_start(&self) -> CliResult<Option<LambdaStart>> {
        let Some(raw) = &self.lambda_start else { return Ok(None) };
        let values = raw
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| usage("--lambda-start", e))?;
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(usage("--lambda-start", "entries must be positive and finite"));
        }
        Ok(Some(match values.as_slice() {
            [one] => LambdaStart::Scalar(*one),
            _ => LambdaStart::PerCoefficient(values),
        }))
    }

    /// Checks every flag before any data is touched.
    fn config(&self) -> CliResult<RlassoConfig> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(usage("--gamma", format!("must lie in (0, 1), got {}", self.gamma)));
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(usage("--c", format!("must be positive, got {c}")));
            }
        }
        if self.num_sim == 0 {
            return Err(usage("--num-sim", "must be at least 1"));
        }
        if self.num_iter == 0 {
            return Err(usage("--num-iter", "must be at least 1"));
        }
        let lambda_start = self.lambda_start()?;
        let homoscedastic = match self.homoscedastic {
            HomoscedasticArg::True => Homoscedastic::True,
            HomoscedasticArg::False => Homoscedastic::False,
            HomoscedasticArg::None => Homoscedastic::None,
        };
        if homoscedastic == Homoscedastic::None && lambda_start.is_none() {
            return Err(usage("--homoscedastic", "`none` requires --lambda-start"));
        }
        Ok(RlassoConfig {
            post: self.post(),
            intercept: self.intercept(),
            penalty: PenaltyOptions {
                homoscedastic,
                x_dependent: self.x_dependent,
                c: self.c,
                gamma: self.gamma,
                lambda_start,
                num_sim: self.num_sim,
                num_iter: self.num_iter,
            },
            ..RlassoConfig::default()
        })
    }
}

fn load(input: &InputArgs) -> CliResult<Dataset> {
    load_csv(&input.input, CsvOptions::default()).map_err(|e| match e {
        HdmError::Io(io) => CliError::Usage(format!("cannot read --input {}: {io}", input.input.display())),
        other => CliError::Library(other),
    })
}

fn expand(data: &Dataset, flag: &str, spec: &str) -> CliResult<Vec<String>> {
    let cols = data.expand_columns(spec).map_err(|e| usage(flag, e))?;
    if cols.is_empty() {
        return Err(usage(flag, "no columns given"));
    }
    Ok(cols)
}

fn column_exists(data: &Dataset, flag: &str, name: &str) -> CliResult<()> {
    data.index_of(name).map(|_| ()).map_err(|e| usage(flag, e))
}

/// Columns named by `--x`, or every column not used elsewhere.
fn controls(data: &Dataset, input: &InputArgs, used: &[&str]) -> CliResult<Vec<String>> {
    match &input.x {
        Some(spec) => expand(data, "--x", spec),
        None => Ok(data
            .names()
            .iter()
            .filter(|n| n.as_str() != input.y && !used.contains(&n.as_str()))
            .cloned()
            .collect()),
    }
}

fn problem(data: &Dataset, spec: ColumnSpec) -> CliResult<RegressionProblem> {
    Ok(build_problem(data, &spec)?)
}

fn cmd_fit(a: &FitArgs) -> CliResult<String> {
    let mut config = a.model.config()?;
    config.sup_score = !a.no_sup_score && !a.logistic;
    let data = load(&a.input)?;
    column_exists(&data, "--y", &a.input.y)?;
    let x = controls(&data, &a.input, &[])?;
    let prob = problem(
        &data,
        ColumnSpec {
            y: a.input.y.clone(),
            x,
            intercept: config.intercept,
            ..Default::default()
        },
    )?;
    let fit = if a.logistic {
        rlassologit(&prob.x, &prob.y, &config)?
    } else {
        rlasso(&prob.x, &prob.y, &config, RngStream::new(a.input.seed, 0))?
    };
    Ok(report::render_fit(&fit, &prob.x_names, a.output.format.into()))
}

fn cmd_effects(a: &EffectsArgs) -> CliResult<String> {
    let mut config = a.model.config()?;
    config.sup_score = false;
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(usage("--level", format!("must lie in (0, 1), got {}", a.level)));
    }
    if a.joint && a.num_boot < 2 {
        return Err(usage("--num-boot", "joint intervals need at least 2 draws"));
    }
    let data = load(&a.input)?;
    column_exists(&data, "--y", &a.input.y)?;
    let targets = expand(&data, "--targets", &a.targets)?;
    let x = controls(&data, &a.input, &[])?;
    if let Some(t) = targets.iter().find(|t| !x.contains(t)) {
        return Err(usage("--targets", format!("{t:?} is not among the --x columns")));
    }
    let prob = problem(
        &data,
        ColumnSpec {
            y: a.input.y.clone(),
            x,
            intercept: config.intercept,
            ..Default::default()
        },
    )?;
    if let Some(t) = targets.iter().find(|t| !prob.x_names.contains(t)) {
        return Err(usage("--targets", format!("{t:?} is constant and was dropped")));
    }
    let root = RngStream::new(a.input.seed, 0);
    let result = rlasso_effects(
        &prob.x,
        &prob.y,
        &prob.x_names,
        &TargetSpec::Names(targets),
        &config,
        root.fork("effects"),
    )?;
    let pointwise = confint_effects(&result, a.level, false, 0, root.fork("pointwise"))?;
    let joint = if a.joint {
        Some(confint_effects(&result, a.level, true, a.num_boot, root.fork("joint"))?)
    } else {
        None
    };
    Ok(report::render_effects(&result, &pointwise, joint.as_ref(), a.output.format.into()))
}

fn cmd_iv(a: &IvArgs) -> CliResult<String> {
    let config = a.model.config()?;
    let data = load(&a.input)?;
    column_exists(&data, "--y", &a.input.y)?;
    let d = expand(&data, "--d", &a.d)?;
    let z = expand(&data, "--z", &a.z)?;
    let used: Vec<&str> = d.iter().chain(&z).map(String::as_str).collect();
    let x = controls(&data, &a.input, &used)?;
    let prob = problem(
        &data,
        ColumnSpec {
            y: a.input.y.clone(),
            x,
            d,
            z,
            intercept: config.intercept,
            drop_constant: None,
        },
    )?;
    let dm = prob.d.as_ref().expect("--d is required");
    let zm = prob.z.as_ref().expect("--z is required");
    let xm = (prob.p() > 0).then_some(&prob.x);
    let fit = rlasso_iv(
        xm,
        dm,
        &prob.y,
        zm,
        a.select_x,
        a.select_z,
        &config,
        RngStream::new(a.input.seed, 0),
    )?;
    Ok(report::render_iv(
        &fit,
        &prob.d_names,
        &prob.x_names,
        &prob.z_names,
        a.output.format.into(),
    ))
}

fn cmd_treat(a: &TreatArgs) -> CliResult<String> {
    let mut outcome = a.model.config()?;
    outcome.sup_score = false;
    if !(a.trim >= 0.0 && a.trim < 0.5) {
        return Err(usage("--trim", format!("must lie in [0, 0.5), got {}", a.trim)));
    }
    let effect = match a.effect {
        EffectArg::Ate => EffectType::Ate,
        EffectArg::Atet => EffectType::Atet,
        EffectArg::Late => EffectType::Late,
        EffectArg::Latet => EffectType::Latet,
    };
    if effect.needs_instrument() && a.z.is_none() {
        return Err(usage("--z", format!("{} requires an instrument column", effect.label())));
    }
    let boot = match a.boot {
        BootArg::None => None,
        BootArg::Normal => Some(MultiplierKind::Normal),
        BootArg::Wild => Some(MultiplierKind::Wild),
        BootArg::Bayes => Some(MultiplierKind::Bayes),
    };
    if boot.is_some() && a.num_boot < 2 {
        return Err(usage("--num-boot", "the bootstrap needs at least 2 draws"));
    }
    let data = load(&a.input)?;
    column_exists(&data, "--y", &a.input.y)?;
    column_exists(&data, "--d", &a.d)?;
    let z_name = if effect.needs_instrument() { a.z.clone() } else { None };
    if let Some(z) = &z_name {
        column_exists(&data, "--z", z)?;
    }
    let mut used = vec![a.d.as_str()];
    if let Some(z) = &a.z {
        used.push(z.as_str());
    }
    let x = controls(&data, &a.input, &used)?;
    let prob = problem(
        &data,
        ColumnSpec {
            y: a.input.y.clone(),
            x,
            intercept: outcome.intercept,
            ..Default::default()
        },
    )?;
    let d = data.column(&a.d)?;
    let z = z_name.as_deref().map(|n| data.column(n)).transpose()?;
    let config = TreatmentConfig {
        propensity: outcome.clone(),
        outcome,
        trim: a.trim,
    };
    let root = RngStream::new(a.input.seed, 0);
    let mut fit = estimate_treatment(effect, &prob.x, &d, &prob.y, z.as_ref(), &config, root.fork("estimate"))?;
    if let Some(kind) = boot {
        fit = bootstrap_se(&fit, kind, a.num_boot, root.fork("bootstrap"))?;
    }
    Ok(report::render_treatment(&fit, a.output.format.into()))
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<String> {
    if a.reps == 0 {
        return Err(usage("--reps", "must be at least 1"));
    }
    let format: Format = a.output.format.into();
    let text = match a.preset {
        Preset::SupportRecovery => {
            report::render_metrics("support-recovery", &sim::support_recovery(a.reps, a.seed)?, format)
        }
        Preset::Coverage => {
            if a.num_boot < 2 {
                return Err(usage("--num-boot", "joint intervals need at least 2 draws"));
            }
            report::render_metrics("coverage", &sim::effects_coverage(a.reps, a.seed, a.num_boot)?, format)
        }
        Preset::SupScore => {
            if a.num_sim == 0 {
                return Err(usage("--num-sim", "must be at least 1"));
            }
            report::render_metrics(
                "sup-score",
                &sim::sup_score_rates(a.reps, a.reps, a.seed, a.num_sim)?,
                format,
            )
        }
        Preset::IvRecovery => report::render_metrics("iv-recovery", &sim::iv_recovery(a.reps, a.seed)?, format),
        Preset::TreatmentRandomized => {
            if a.num_boot < 2 {
                return Err(usage("--num-boot", "the bootstrap needs at least 2 draws"));
            }
            report::render_metrics(
                "treatment-randomized",
                &sim::treatment_randomized(a.reps, a.seed, a.num_boot)?,
                format,
            )
        }
    };
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("hdm").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn seed_is_required_for_simulate() {
        let (code, _, err) = run_capture(&["simulate", "--preset", "coverage"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--seed"), "{err}");
    }

    #[test]
    fn bad_flag_values_name_the_flag() {
        let (code, _, err) = run_capture(&["fit", "--input", "nowhere.csv", "--y", "y", "--gamma", "1.5"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--gamma"), "{err}");
        let (code, _, err) = run_capture(&["fit", "--input", "nowhere.csv", "--y", "y"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--input"), "{err}");
        let (code, _, err) =
            run_capture(&["fit", "--input", "nowhere.csv", "--y", "y", "--homoscedastic", "none"]);
        assert_eq!(code, EXIT_USAGE);
        assert!(err.contains("--lambda-start"), "{err}");
    }

    #[test]
    fn post_and_intercept_toggles() {
        let cli = Cli::try_parse_from(["hdm", "fit", "--input", "a", "--y", "y", "--no-post", "--no-intercept"]).unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        assert!(!a.model.post() && !a.model.intercept());
        let cli = Cli::try_parse_from(["hdm", "fit", "--input", "a", "--y", "y", "--no-post", "--post"]).unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        assert!(a.model.post() && a.model.intercept());
        assert_eq!(a.model.homoscedastic, HomoscedasticArg::False);
        let cli = Cli::try_parse_from(["hdm", "fit", "--input", "a", "--y", "y", "--homoscedastic"]).unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        assert_eq!(a.model.homoscedastic, HomoscedasticArg::True);
    }

    #[test]
    fn lambda_start_lists() {
        let cli = Cli::try_parse_from([
            "hdm", "fit", "--input", "a", "--y", "y", "--homoscedastic", "none", "--lambda-start", "3,4",
        ])
        .unwrap();
        let Command::Fit(a) = cli.command else { panic!() };
        let cfg = a.model.config().unwrap();
        assert_eq!(cfg.penalty.lambda_start, Some(LambdaStart::PerCoefficient(vec![3.0, 4.0])));
        assert_eq!(cfg.penalty.homoscedastic, Homoscedastic::None);
    }

    #[test]
    fn estimation_errors_exit_one() {
        assert_eq!(CliError::Library(HdmError::Singularity("x".into())).exit_code(), EXIT_ESTIMATION);
        assert_eq!(CliError::Library(HdmError::Schema("x".into())).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
    }
}
