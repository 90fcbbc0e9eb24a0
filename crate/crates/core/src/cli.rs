//! The `igeo` command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 domain or
//! structure error, 4 residual above tolerance under `--strict`.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::divergences::{divergence, DivergenceSpec};
use crate::eguchi::{self, snapshot, GeometrySnapshot};
use crate::error::{Error, Result};
use crate::laplace::{laplacian, test_fields};
use crate::models::{builtin, load_family_config, FlatStructure, ModelFamily};
use crate::priors::{
    closed_form_covolume, covolume_exponent, hartigan_log_derivative, log_conformal_prefactor,
    log_derivative_from_connection, outside_renyi, parallelity_residual, reconstruct_log_prior,
    DEFAULT_PATH_STEPS, PRIOR_FD_STEP,
};
use crate::quadrature::{QuadConfig, ORDER_ENV_VAR};
use crate::report::{
    CrossResidual, FamilyDescriptor, LaplacianValue, PointResult, PriorComparison, PriorValues, ReportDocument,
    Settings, Table, TableColumn,
};
use crate::tensors::{analytic_snapshot, ExpectationGeometry, GeometryLabel, METRIC_FD_STEP};
use crate::verify::{self, Suite, Tolerances};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_STRICT: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "igeo", version, about = "Divergence-induced geometry, Laplacians and covolume priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Metric, connection and dual connection at parameter points.
    Geometry(GeometryArgs),
    /// Anchored log-priors and their log-derivative fields.
    Priors(PriorsArgs),
    /// Run invariant suites.
    Verify(VerifyArgs),
    /// Numeric versions of the Bhattacharyya/KL and α/Rényi overview tables.
    Tables(TablesArgs),
}

#[derive(Args, Debug, Clone)]
pub struct FamilyArgs {
    /// Built-in family name.
    #[arg(long, conflicts_with = "family_config")]
    pub family: Option<String>,
    /// JSON family definition (see schemas/family-v1.json).
    #[arg(long)]
    pub family_config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct PointArgs {
    /// Parameter point, comma-separated coordinates. Repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Vec<String>,
    /// One-dimensional grid `start:stop:count`.
    #[arg(long, conflicts_with = "theta", allow_hyphen_values = true)]
    pub grid: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub out: OutputFormat,
    /// Tolerance override `key=value`. Repeatable.
    #[arg(long = "tol")]
    pub tol: Vec<String>,
    /// Exit with code 4 when a residual exceeds its tolerance.
    #[arg(long)]
    pub strict: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Eguchi,
    Analytic,
    Both,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceKind {
    Kl,
    Alpha,
    Renyi,
    Bhattacharyya,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PriorKind {
    Jeffreys,
    Alpha,
    AlphaDual,
    Rho,
    RhoDual,
    Kl,
    KlDual,
    Hartigan,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteArg {
    Quadrature,
    Models,
    Divergences,
    Eguchi,
    Tensors,
    Laplace,
    Priors,
    All,
}

#[derive(Args, Debug)]
pub struct GeometryArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    pub points: PointArgs,
    #[arg(long, value_enum, default_value_t = Source::Analytic)]
    pub source: Source,
    #[arg(long, value_enum, default_value_t = DivergenceKind::Kl)]
    pub divergence: DivergenceKind,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// Test field (`square`, `log`, `sin`) whose Laplacians to report.
    #[arg(long)]
    pub field: Vec<String>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct PriorsArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    #[command(flatten)]
    pub points: PointArgs,
    #[arg(long, value_enum)]
    pub label: PriorKind,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long = "alpha-h", allow_hyphen_values = true)]
    pub alpha_h: Option<f64>,
    /// Reference point θ₀ where the log-prior is zero (default: the family anchor).
    #[arg(long, allow_hyphen_values = true)]
    pub reference: Option<String>,
    /// Require the closed form; fails on families without a flat chart.
    #[arg(long)]
    pub closed_form: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = SuiteArg::All)]
    pub suite: SuiteArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct TablesArgs {
    #[command(flatten)]
    pub family: FamilyArgs,
    /// The sample pair θ, θ′ (two `--theta` values).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Vec<String>,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub out: OutputFormat,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::UnknownFamily(_) | Error::InvalidOrder(_) | Error::Config(_) | Error::Dimension { .. } => EXIT_USAGE,
            _ => EXIT_DOMAIN,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: msg.into(),
    }
}

/// Output of a successful command: the rendered document and its exit code.
pub struct Outcome {
    pub text: String,
    pub code: i32,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> std::result::Result<Outcome, Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&args).map_err(|e| {
        let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        Failure {
            code,
            message: e.to_string(),
        }
    })?;
    let echo: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match cli.command {
        Command::Geometry(a) => cmd_geometry(&a, echo),
        Command::Priors(a) => cmd_priors(&a, echo),
        Command::Verify(a) => cmd_verify(&a, echo),
        Command::Tables(a) => cmd_tables(&a, echo),
    }
}

/// Entry point for the binary: prints the document or the error and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match run(args) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.text.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return EXIT_DOMAIN;
            }
            out.code
        }
        Err(f) => {
            if f.code == EXIT_OK {
                print!("{}", f.message);
            } else {
                eprintln!("igeo: {}", f.message.trim_end());
            }
            f.code
        }
    }
}

fn load_family(args: &FamilyArgs) -> Result<ModelFamily> {
    let family = match (&args.family, &args.family_config) {
        (Some(name), None) => builtin(name)?,
        (None, Some(path)) => load_family_config(path)?,
        _ => return Err(Error::Config("exactly one of --family or --family-config is required".into())),
    };
    Ok(family.with_quadrature(QuadConfig::from_env()))
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Config(format!("bad coordinate `{c}` in `{s}`")))
        })
        .collect()
}

fn parse_grid(s: &str) -> Result<Vec<Vec<f64>>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("grid must be start:stop:count, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let start: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let stop: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 || !start.is_finite() || !stop.is_finite() {
        return Err(bad());
    }
    Ok((0..count)
        .map(|k| {
            if count == 1 {
                vec![start]
            } else {
                vec![start + (stop - start) * k as f64 / (count - 1) as f64]
            }
        })
        .collect())
}

fn points(args: &PointArgs, family: &ModelFamily) -> Result<Vec<Vec<f64>>> {
    let pts = match &args.grid {
        Some(g) => parse_grid(g)?,
        None if args.theta.is_empty() => return Err(Error::Config("give --theta or --grid".into())),
        None => args.theta.iter().map(|t| parse_point(t)).collect::<Result<Vec<_>>>()?,
    };
    for p in &pts {
        if p.len() != family.dim() {
            return Err(Error::Dimension {
                expected: family.dim(),
                got: p.len(),
            });
        }
    }
    Ok(pts)
}

fn tolerances(specs: &[String]) -> Result<Tolerances> {
    let mut t = Tolerances::default();
    for s in specs {
        t.apply(s)?;
    }
    Ok(t)
}

fn settings(tol: &Tolerances, fd_steps: &[(&str, f64)], seed: Option<u64>) -> Settings {
    let quad = QuadConfig::from_env();
    Settings {
        quadrature_order: quad.order,
        quadrature_order_env: std::env::var(ORDER_ENV_VAR).ok(),
        quadrature_rel_tol: quad.target_rel_tol,
        fd_steps: fd_steps.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
        tolerances: tol.values().clone(),
        overrides: tol.overrides().clone(),
        seed,
    }
}

fn divergence_spec(kind: DivergenceKind, alpha: Option<f64>, rho: Option<f64>) -> std::result::Result<DivergenceSpec, Failure> {
    let spec = match kind {
        DivergenceKind::Kl => DivergenceSpec::Kl,
        DivergenceKind::Bhattacharyya => DivergenceSpec::Bhattacharyya,
        DivergenceKind::Alpha => DivergenceSpec::alpha(alpha.ok_or_else(|| usage("--divergence alpha needs --alpha"))?)?,
        DivergenceKind::Renyi => DivergenceSpec::renyi(rho.ok_or_else(|| usage("--divergence renyi needs --rho"))?)?,
    };
    Ok(spec)
}

fn render(doc: &ReportDocument, format: OutputFormat) -> Result<String> {
    match format {
        OutputFormat::Json => doc.to_json(),
        OutputFormat::Csv => doc.to_csv(),
    }
}

fn finish(mut doc: ReportDocument, format: OutputFormat, strict: bool, fail_code: i32) -> std::result::Result<Outcome, Failure> {
    doc.finish();
    let code = if doc.pass || !strict { EXIT_OK } else { fail_code };
    Ok(Outcome {
        text: render(&doc, format)?,
        code,
    })
}

/// Runs `f` over the points in parallel, failing with the first error in
/// point order.
fn sweep<T, F>(pts: &[Vec<f64>], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &[f64]) -> Result<T> + Sync,
{
    pts.par_iter().enumerate().map(|(i, p)| f(i, p)).collect::<Vec<_>>().into_iter().collect()
}

pub fn cmd_geometry(a: &GeometryArgs, echo: Vec<String>) -> std::result::Result<Outcome, Failure> {
    let spec = divergence_spec(a.divergence, a.alpha, a.rho)?;
    let tol = tolerances(&a.output.tol)?;
    let fields: Vec<_> = {
        let all = test_fields();
        a.field
            .iter()
            .map(|f| {
                all.iter()
                    .find(|(n, _)| n == f)
                    .cloned()
                    .ok_or_else(|| usage(format!("unknown field `{f}` (square, log, sin)")))
            })
            .collect::<std::result::Result<_, _>>()?
    };
    let family = load_family(&a.family)?;
    let pts = points(&a.points, &family)?;
    let (label, _) = GeometryLabel::for_divergence(spec);

    let results = sweep(&pts, |index, theta| {
        let analytic = match a.source {
            Source::Analytic | Source::Both => Some(analytic_snapshot(label, &family, theta)?),
            Source::Eguchi => None,
        };
        let induced = match a.source {
            Source::Eguchi | Source::Both => Some(snapshot(spec, &family, theta)?),
            Source::Analytic => None,
        };
        let cross = match (&induced, &analytic) {
            (Some(e), Some(an)) => Some(CrossResidual::between(e, an)),
            _ => None,
        };
        let mut laplacians = Vec::new();
        for (name, field) in &fields {
            for l in [label, GeometryLabel::E, GeometryLabel::M, GeometryLabel::LC] {
                laplacians.push(LaplacianValue {
                    field: name.to_string(),
                    label: l,
                    value: laplacian(l, &family, field, theta)?,
                    fd_field: field.grad_is_fd(),
                });
            }
        }
        let pass = within(&analytic, tol.get("tensors.compatibility"))
            && within(&induced, tol.get("eguchi.compatibility"))
            && cross.is_none_or(|c| {
                c.metric_rel <= tol.get("eguchi.metric")
                    && c.gamma_abs.max(c.gamma_dual_abs) <= tol.get("eguchi.connection")
            });
        Ok(PointResult {
            index,
            theta: theta.to_vec(),
            analytic,
            eguchi: induced,
            cross,
            prior: None,
            laplacians,
            pass,
        })
    })?;

    let mut doc = ReportDocument::new(
        echo,
        settings(
            &tol,
            &[
                ("eguchi.metric", eguchi::H_FD),
                ("eguchi.third", eguchi::H_FD3),
                ("eguchi.compatibility", eguchi::H_COMPAT),
                ("tensors.metric", METRIC_FD_STEP),
                ("laplace.field", crate::laplace::FIELD_FD_STEP),
            ],
            None,
        ),
    );
    doc.family = Some(FamilyDescriptor::of(&family));
    doc.points = results;
    finish(doc, a.output.out, a.output.strict, EXIT_STRICT)
}

fn within(s: &Option<GeometrySnapshot>, tol: f64) -> bool {
    s.as_ref()
        .is_none_or(|s| s.compatibility_residual.is_none_or(|r| r <= tol))
}

fn prior_label(a: &PriorsArgs) -> std::result::Result<Option<GeometryLabel>, Failure> {
    let need_rho = || -> std::result::Result<f64, Failure> {
        let r = a.rho.ok_or_else(|| usage("this prior needs --rho"))?;
        if r == 1.0 {
            return Err(usage("rho = 1 is not a Rényi order; use --label kl or kl-dual"));
        }
        GeometryLabel::Rho(r).validate()?;
        Ok(r)
    };
    let need_alpha = || a.alpha.ok_or_else(|| usage("this prior needs --alpha"));
    Ok(Some(match a.label {
        PriorKind::Jeffreys => GeometryLabel::LC,
        PriorKind::Alpha => GeometryLabel::Alpha(need_alpha()?),
        PriorKind::AlphaDual => GeometryLabel::AlphaDual(need_alpha()?),
        PriorKind::Rho => GeometryLabel::Rho(need_rho()?),
        PriorKind::RhoDual => GeometryLabel::RhoDual(need_rho()?),
        PriorKind::Kl => GeometryLabel::M,
        PriorKind::KlDual => GeometryLabel::E,
        PriorKind::Hartigan => return Ok(None),
    }))
}

pub fn cmd_priors(a: &PriorsArgs, echo: Vec<String>) -> std::result::Result<Outcome, Failure> {
    let label = prior_label(a)?;
    let alpha_h = match (label, a.alpha_h) {
        (None, None) => return Err(usage("--label hartigan needs --alpha-h")),
        (None, Some(h)) => Some(h),
        _ => None,
    };
    let compare_rho = match (alpha_h, a.rho) {
        (Some(_), Some(r)) => {
            GeometryLabel::Rho(r).validate()?;
            Some(r)
        }
        _ => None,
    };
    let tol = tolerances(&a.output.tol)?;
    let family = load_family(&a.family)?;
    let pts = points(&a.points, &family)?;
    let reference = match &a.reference {
        Some(r) => {
            let p = parse_point(r)?;
            family.check_domain(&p)?;
            p
        }
        None => family.anchor().to_vec(),
    };
    if reference.len() != family.dim() {
        return Err(Error::Dimension {
            expected: family.dim(),
            got: reference.len(),
        }
        .into());
    }
    let structure = family.flat_structure();
    if a.closed_form {
        match label {
            Some(l) => {
                covolume_exponent(l, structure)?;
            }
            None => {
                return Err(Error::StructureMismatch("Hartigan priors have no closed form here".into()).into());
            }
        }
    }
    let closed = |t: &[f64]| -> Result<Option<f64>> {
        match label {
            Some(l) if structure != FlatStructure::Generic => Ok(Some(
                closed_form_covolume(l, structure, &family, t)? - closed_form_covolume(l, structure, &family, &reference)?,
            )),
            _ => Ok(None),
        }
    };
    let field = |t: &[f64]| -> Result<Vec<f64>> {
        match (label, alpha_h) {
            (Some(l), _) => log_derivative_from_connection(l, &family, t),
            (None, Some(h)) => hartigan_log_derivative(&family, h, t),
            (None, None) => unreachable!(),
        }
    };
    let name = match (label, alpha_h) {
        (Some(l), _) => l.to_string(),
        (None, Some(h)) => format!("hartigan({h})"),
        (None, None) => unreachable!(),
    };

    let results = sweep(&pts, |index, theta| {
        family.check_domain(theta)?;
        let log_derivative = field(theta)?;
        let rec = reconstruct_log_prior(&field, &family, theta, &reference, DEFAULT_PATH_STEPS)?;
        let closed_form = closed(theta)?;
        let parallelity_residual = match label {
            Some(l) if closed_form.is_some() => Some(parallelity_residual(l, &family, theta)?),
            _ => None,
        };
        let comparison = match compare_rho {
            Some(r) => {
                let rho_d = log_derivative_from_connection(GeometryLabel::Rho(r), &family, theta)?;
                let max_abs_diff = rho_d
                    .iter()
                    .zip(&log_derivative)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                Some(PriorComparison {
                    rho: r,
                    rho_log_derivative: rho_d,
                    max_abs_diff,
                })
            }
            None => None,
        };
        let note = alpha_h
            .filter(|&h| outside_renyi(h))
            .map(|_| "outside Rényi interpretation".to_string());
        let pass = parallelity_residual.is_none_or(|r| r <= tol.get("priors.parallelity"))
            && comparison.as_ref().is_none_or(|c| c.max_abs_diff <= tol.get("priors.hartigan"))
            && closed_form.is_none_or(|c| (c - rec.value).abs() <= tol.get("priors.reconstruction"));
        Ok(PointResult {
            index,
            theta: theta.to_vec(),
            analytic: None,
            eguchi: None,
            cross: None,
            prior: Some(PriorValues {
                prior: name.clone(),
                log_value: closed_form.unwrap_or(rec.value),
                method: if closed_form.is_some() { "closed-form" } else { "path" }.to_string(),
                log_derivative,
                closed_form,
                reconstructed: rec.value,
                refinement_gap: rec.refinement_gap,
                parallelity_residual,
                comparison,
                note,
            }),
            laplacians: Vec::new(),
            pass,
        })
    })?;

    let mut doc = ReportDocument::new(echo, settings(&tol, &[("priors.derivative", PRIOR_FD_STEP)], None));
    doc.family = Some(FamilyDescriptor::of(&family));
    doc.points = results;
    finish(doc, a.output.out, a.output.strict, EXIT_STRICT)
}

pub fn cmd_verify(a: &VerifyArgs, echo: Vec<String>) -> std::result::Result<Outcome, Failure> {
    let tol = tolerances(&a.output.tol)?;
    let suite = match a.suite {
        SuiteArg::Quadrature => Suite::Quadrature,
        SuiteArg::Models => Suite::Models,
        SuiteArg::Divergences => Suite::Divergences,
        SuiteArg::Eguchi => Suite::Eguchi,
        SuiteArg::Tensors => Suite::Tensors,
        SuiteArg::Laplace => Suite::Laplace,
        SuiteArg::Priors => Suite::Priors,
        SuiteArg::All => Suite::All,
    };
    let mut doc = ReportDocument::new(
        echo,
        settings(
            &tol,
            &[
                ("eguchi.metric", eguchi::H_FD),
                ("eguchi.third", eguchi::H_FD3),
                ("eguchi.compatibility", eguchi::H_COMPAT),
                ("tensors.metric", METRIC_FD_STEP),
                ("laplace.field", crate::laplace::FIELD_FD_STEP),
                ("priors.derivative", PRIOR_FD_STEP),
            ],
            Some(a.seed),
        ),
    );
    doc.checks = verify::run(suite, a.seed, &tol);
    finish(doc, a.output.out, true, EXIT_VERIFY)
}

/// The other Bernoulli chart, for covolumes on the chart the family lacks.
fn companion(family: &ModelFamily, theta: &[f64]) -> Option<(ModelFamily, Vec<f64>)> {
    let quad = family.quadrature();
    match family.name() {
        "bernoulli-mean" => {
            let p = theta[0];
            Some((builtin("bernoulli-natural").ok()?.with_quadrature(quad), vec![(p / (1.0 - p)).ln()]))
        }
        "bernoulli-natural" => Some((
            builtin("bernoulli-mean").ok()?.with_quadrature(quad),
            vec![1.0 / (1.0 + (-theta[0]).exp())],
        )),
        _ => None,
    }
}

fn column(
    spec: DivergenceSpec,
    family: &ModelFamily,
    theta: &[f64],
    theta_p: &[f64],
    geo: &ExpectationGeometry,
) -> Result<TableColumn> {
    let (label, dual) = GeometryLabel::for_divergence(spec);
    let ef = FlatStructure::ExponentialFlat;
    let mf = FlatStructure::MixtureFlat;
    let other = companion(family, theta);
    let log_cov = |l: GeometryLabel, s: FlatStructure| -> Result<Option<f64>> {
        if family.flat_structure() == s {
            return closed_form_covolume(l, s, family, theta).map(Some);
        }
        match &other {
            Some((f, t)) if f.flat_structure() == s => closed_form_covolume(l, s, f, t).map(Some),
            _ => Ok(None),
        }
    };
    let g = geo.metric(label);
    Ok(TableColumn {
        divergence: spec.to_string(),
        divergence_value: divergence(spec, family, theta, theta_p)?,
        metric_scale: label.metric_scale(),
        metric: (0..g.nrows()).map(|i| g.row(i).iter().copied().collect()).collect(),
        connection: label,
        dual_connection: dual,
        gamma: geo.connection(label),
        gamma_dual: geo.connection(dual),
        cov_e_exponent: covolume_exponent(label, ef)?,
        cov_e_dual_exponent: covolume_exponent(dual, ef)?,
        cov_m_exponent: covolume_exponent(label, mf)?,
        cov_m_dual_exponent: covolume_exponent(dual, mf)?,
        log_conformal_prefactor: log_conformal_prefactor(label, family.dim()),
        cov_e_log: log_cov(label, ef)?,
        cov_e_dual_log: log_cov(dual, ef)?,
        cov_m_log: log_cov(label, mf)?,
        cov_m_dual_log: log_cov(dual, mf)?,
    })
}

pub fn cmd_tables(a: &TablesArgs, echo: Vec<String>) -> std::result::Result<Outcome, Failure> {
    if a.theta.len() != 2 {
        return Err(usage("tables needs exactly two --theta values (the sample pair)"));
    }
    if a.rho == 1.0 {
        return Err(usage("rho = 1 is not a Rényi order"));
    }
    let renyi = DivergenceSpec::renyi(a.rho)?;
    let alpha = DivergenceSpec::alpha(a.alpha)?;
    let family = load_family(&a.family)?;
    let theta = parse_point(&a.theta[0])?;
    let theta_p = parse_point(&a.theta[1])?;
    for t in [&theta, &theta_p] {
        if t.len() != family.dim() {
            return Err(Error::Dimension {
                expected: family.dim(),
                got: t.len(),
            }
            .into());
        }
        family.check_domain(t)?;
    }
    let geo = ExpectationGeometry::compute(&family, &theta)?;
    let make = |title: &str, specs: [DivergenceSpec; 2]| -> Result<Table> {
        Ok(Table {
            title: title.to_string(),
            theta: theta.clone(),
            theta_prime: theta_p.clone(),
            columns: specs
                .iter()
                .map(|&s| column(s, &family, &theta, &theta_p, &geo))
                .collect::<Result<_>>()?,
        })
    };
    let tables = vec![
        make("bhattacharyya-kl", [DivergenceSpec::Bhattacharyya, DivergenceSpec::Kl])?,
        make("alpha-renyi", [alpha, renyi])?,
    ];
    let mut doc = ReportDocument::new(echo, settings(&Tolerances::default(), &[], None));
    doc.family = Some(FamilyDescriptor::of(&family));
    doc.tables = tables;
    finish(doc, a.out, false, EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(args: &[&str]) -> i32 {
        match run(std::iter::once("igeo").chain(args.iter().copied())) {
            Ok(o) => o.code,
            Err(f) => f.code,
        }
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("0.2:0.4:3").unwrap(), vec![vec![0.2], vec![0.30000000000000004], vec![0.4]]);
        assert!(parse_grid("0:1").is_err());
        assert_eq!(parse_point("0.1, -2").unwrap(), vec![0.1, -2.0]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(code(&["geometry", "--family", "bernoulli-mean", "--theta", "0.3", "--divergence", "renyi"]), 2);
        assert_eq!(code(&["priors", "--family", "bernoulli-natural", "--label", "rho", "--rho", "1", "--theta", "0.2"]), 2);
        assert_eq!(code(&["geometry", "--family", "bernoulli-mean", "--theta", "1.3"]), 3);
        assert_eq!(code(&["geometry", "--family", "no-such", "--theta", "0.3"]), 2);
        assert_eq!(
            code(&["priors", "--family", "gaussian-loc-scale", "--label", "jeffreys", "--theta", "0,1.5", "--closed-form"]),
            3
        );
        assert_eq!(code(&["geometry", "--family", "bernoulli-mean", "--theta", "0.3"]), 0);
        assert_eq!(code(&["verify", "--suite", "laplace", "--tol", "bogus=1"]), 2);
    }

    #[test]
    fn strict_flags_residuals() {
        let args = ["geometry", "--family", "bernoulli-mean", "--theta", "0.3", "--strict", "--tol", "tensors.compatibility=0"];
        assert_eq!(code(&args), 4);
    }
}
