//! Invariant suites run by `igeo verify`.
//!
//! Each suite evaluates identities at fixed and seeded random parameter
//! points and records one [`Check`] per invariant. Families are processed in
//! parallel; checks are assembled in a fixed order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::divergences::{divergence, renyi_kl_limit_check, DivergenceSpec};
use crate::eguchi::{self, snapshot};
use crate::error::{Error, Result};
use crate::laplace::{
    div_connection, div_lc_metric_form_for, laplacian_direct, laplacian_lc_conformal,
    non_reparameterizability_certificate, test_fields, VectorField,
};
use crate::models::{builtin, FlatStructure, ModelFamily};
use crate::priors::{
    closed_form_covolume, covolume_exponent, duality_and_reparam_report, hartigan_log_derivative,
    log_derivative_from_connection, parallelity_residual, CovolumeField, PriorLabel, DEFAULT_PATH_STEPS,
};
use crate::quadrature::{expect, expect_vec, SampleSpace};
use crate::report::{Check, CheckDetail};
use crate::tensors::{
    analytic_snapshot, christoffel_from_metric, compatibility_residual, sqrt_rho_chart_check,
    ExpectationGeometry, GeometryLabel,
};

/// Families every suite runs over.
pub const SUITE_FAMILIES: &[&str] = &[
    "bernoulli-mean",
    "bernoulli-natural",
    "categorical-3",
    "gaussian-loc",
    "gaussian-loc-scale",
    "poisson-natural",
];

const DEFAULT_TOLERANCES: &[(&str, f64)] = &[
    ("divergences.gaussian-kl", 1e-10),
    ("divergences.half-order", 1e-10),
    ("divergences.self", 1e-10),
    ("eguchi.compatibility", 5e-3),
    ("eguchi.connection", 5e-3),
    ("eguchi.metric", 1e-5),
    ("laplace.conformal", 1e-8),
    ("laplace.divergence", 1e-6),
    ("laplace.mixture", 1e-6),
    ("models.hessian", 1e-5),
    ("models.score", 1e-6),
    ("priors.hartigan", 1e-8),
    ("priors.parallelity", 1e-5),
    ("priors.reconstruction", 1e-6),
    ("quadrature.moment", 1e-10),
    ("quadrature.score-mean", 1e-9),
    ("tensors.compatibility", 1e-5),
    ("tensors.levi-civita", 1e-6),
    ("tensors.limit-ratio", 2.0),
    ("tensors.self-dual", 1e-8),
    ("tensors.sqrt-rho-metric", 1e-6),
];

/// Named tolerances with their defaults and any overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct Tolerances {
    values: BTreeMap<String, f64>,
    overrides: BTreeMap<String, f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            values: DEFAULT_TOLERANCES.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            overrides: BTreeMap::new(),
        }
    }
}

impl Tolerances {
    pub fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<()> {
        if !(value.is_finite() && value >= 0.0) {
            return Err(Error::Config(format!("tolerance `{key}` must be non-negative, got {value}")));
        }
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value;
                self.overrides.insert(key.to_string(), value);
                Ok(())
            }
            None => Err(Error::Config(format!("unknown tolerance `{key}`"))),
        }
    }

    /// Applies `key=value`.
    pub fn apply(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{spec}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad tolerance value in `{spec}`")))?;
        self.set(k.trim(), v)
    }

    pub fn values(&self) -> &BTreeMap<String, f64> {
        &self.values
    }

    pub fn overrides(&self) -> &BTreeMap<String, f64> {
        &self.overrides
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Quadrature,
    Models,
    Divergences,
    Eguchi,
    Tensors,
    Laplace,
    Priors,
    All,
}

impl Suite {
    pub const EACH: [Suite; 7] = [
        Suite::Quadrature,
        Suite::Models,
        Suite::Divergences,
        Suite::Eguchi,
        Suite::Tensors,
        Suite::Laplace,
        Suite::Priors,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Quadrature => "quadrature",
            Suite::Models => "models",
            Suite::Divergences => "divergences",
            Suite::Eguchi => "eguchi",
            Suite::Tensors => "tensors",
            Suite::Laplace => "laplace",
            Suite::Priors => "priors",
            Suite::All => "all",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite `{s}`")))
    }
}

/// Runs `suite` with random points drawn from `seed`.
pub fn run(suite: Suite, seed: u64, tol: &Tolerances) -> Vec<Check> {
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::EACH.to_vec(),
        s => vec![s],
    };
    suites
        .into_iter()
        .flat_map(|s| {
            let mut ctx = Ctx::new(s.name(), tol);
            match s {
                Suite::Quadrature => quadrature_suite(&mut ctx, seed),
                Suite::Models => models_suite(&mut ctx, seed),
                Suite::Divergences => divergences_suite(&mut ctx, seed),
                Suite::Eguchi => eguchi_suite(&mut ctx, seed),
                Suite::Tensors => tensors_suite(&mut ctx, seed),
                Suite::Laplace => laplace_suite(&mut ctx, seed),
                Suite::Priors => priors_suite(&mut ctx, seed),
                Suite::All => unreachable!(),
            }
            ctx.checks
        })
        .collect()
}

/// Deterministic random interior points of a suite family. With `positive`,
/// the first coordinate is kept positive for the `log` test field.
pub fn sample_points(name: &str, count: usize, seed: u64, positive: bool) -> Vec<Vec<f64>> {
    let salt = name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    let lo: f64 = if positive { 0.3 } else { -1.5 };
    (0..count)
        .map(|_| match name {
            "bernoulli-mean" => vec![rng.random_range(0.2..0.8)],
            "categorical-3" => vec![rng.random_range(0.15..0.4), rng.random_range(0.15..0.4)],
            "gaussian-loc-scale" => vec![rng.random_range(lo.max(-1.0)..1.5), rng.random_range(0.6..1.8)],
            "poisson-natural" => vec![rng.random_range(lo.max(-1.0)..2.0)],
            _ => vec![rng.random_range(lo..2.0)],
        })
        .collect()
}

fn families() -> Vec<ModelFamily> {
    SUITE_FAMILIES
        .iter()
        .map(|n| builtin(n).expect("suite families are built in"))
        .collect()
}

fn fmt_point(t: &[f64]) -> String {
    let parts: Vec<String> = t.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", parts.join(","))
}

struct Ctx<'a> {
    suite: &'static str,
    tol: &'a Tolerances,
    checks: Vec<Check>,
}

/// Pending check produced inside a parallel section.
struct Pending {
    name: String,
    key: &'static str,
    value: Result<f64>,
    detail: Option<CheckDetail>,
}

fn pending(name: String, key: &'static str, value: Result<f64>) -> Pending {
    Pending {
        name,
        key,
        value,
        detail: None,
    }
}

/// A pass/fail condition recorded as residual `0` or `1` against tolerance `0`.
fn flag(name: String, ok: Result<bool>) -> Pending {
    pending(name, "", ok.map(|b| if b { 0.0 } else { 1.0 }))
}

impl<'a> Ctx<'a> {
    fn new(suite: &'static str, tol: &'a Tolerances) -> Self {
        Self {
            suite,
            tol,
            checks: Vec::new(),
        }
    }

    fn push(&mut self, p: Pending) {
        let tolerance = if p.key.is_empty() { 0.0 } else { self.tol.get(p.key) };
        let (value, pass, detail) = match p.value {
            Ok(v) => (Some(v), v <= tolerance, p.detail),
            Err(e) => (
                None,
                false,
                Some(CheckDetail::Message { text: e.to_string() }),
            ),
        };
        self.checks.push(Check {
            suite: self.suite.to_string(),
            name: p.name,
            value,
            tolerance,
            pass,
            detail,
        });
    }

    /// Runs `f` per family in parallel and records the results in order.
    fn per_family<F>(&mut self, f: F)
    where
        F: Fn(usize, &ModelFamily) -> Vec<Pending> + Sync,
    {
        let fams = families();
        let results: Vec<Vec<Pending>> = fams.par_iter().enumerate().map(|(i, fam)| f(i, fam)).collect();
        for p in results.into_iter().flatten() {
            self.push(p);
        }
    }
}

fn quadrature_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        for t in sample_points(fam.name(), 3, seed, false) {
            let n = fam.dim();
            let mean = expect_vec(fam, &t, n, |y, pt, o| o.copy_from_slice(&pt.score(y)))
                .map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
            out.push(pending(
                format!("{} E[score] = 0 at {}", fam.name(), fmt_point(&t)),
                "quadrature.score-mean",
                mean,
            ));
            let oracle = match fam.name() {
                "gaussian-loc" => Some((expect(fam, &t, |y| y * y), t[0] * t[0] + 1.0)),
                "poisson-natural" => Some((expect(fam, &t, |y| y), t[0].exp())),
                "bernoulli-mean" => Some((expect(fam, &t, |y| y), t[0])),
                "gaussian-loc-scale" => Some((expect(fam, &t, |y| (y - t[0]).powi(2)), t[1] * t[1])),
                _ => None,
            };
            if let Some((got, want)) = oracle {
                out.push(pending(
                    format!("{} moment oracle at {}", fam.name(), fmt_point(&t)),
                    "quadrature.moment",
                    got.map(|g| (g - want).abs() / want.abs().max(1.0)),
                ));
            }
        }
        out
    });
}

/// Representative sample points: every atom of a finite space, the first
/// counts of a countable one, and location ± up to three scales otherwise.
fn support_sample(fam: &ModelFamily, pt: &crate::models::PointEval<'_>) -> Vec<f64> {
    match fam.space() {
        SampleSpace::Finite { atoms } => atoms.clone(),
        SampleSpace::Countable { .. } => (0..25).map(f64::from).collect(),
        SampleSpace::Interval { lower, upper } => (1..10).map(|k| lower + (upper - lower) * k as f64 / 10.0).collect(),
        SampleSpace::RealLine { center, scale } => {
            let (c, s) = pt.location_scale().map_or((*center, *scale), |ls| (ls.location, ls.scale));
            (-6..=6).map(|k| c + 0.5 * k as f64 * s).collect()
        }
    }
}

fn models_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        for t in sample_points(fam.name(), 3, seed, false) {
            let n = fam.dim();
            let diffs = fam.point(&t).map(|pt| {
                let mut worst = (0.0f64, 0.0f64);
                for y in support_sample(fam, &pt) {
                    let (s, fs) = (pt.score(y), pt.fd_score(y));
                    let (h, fh) = (pt.log_hessian(y), pt.fd_hessian(y));
                    let scale = |a: &[f64]| a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                    let ds = s.iter().zip(&fs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    let dh = h.iter().zip(&fh).take(n * n).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                    worst.0 = worst.0.max(ds / scale(&s));
                    worst.1 = worst.1.max(dh / scale(&h));
                }
                worst
            });
            let (score, hess) = match diffs {
                Ok(v) => (Ok(v.0), Ok(v.1)),
                Err(e) => (Err(e.clone()), Err(e)),
            };
            out.push(pending(
                format!("{} analytic vs FD score (max rel) at {}", fam.name(), fmt_point(&t)),
                "models.score",
                score,
            ));
            out.push(pending(
                format!("{} analytic vs FD Hessian (max rel) at {}", fam.name(), fmt_point(&t)),
                "models.hessian",
                hess,
            ));
        }
        out
    });
}

const DIVERGENCE_KINDS: [DivergenceSpec; 5] = [
    DivergenceSpec::Kl,
    DivergenceSpec::Alpha(0.3),
    DivergenceSpec::Renyi(0.7),
    DivergenceSpec::Renyi(2.0),
    DivergenceSpec::Bhattacharyya,
];

/// `θ + (θ₂ − θ)/10`. Order-2 Rényi integrands `(p/q)` grow like a Gaussian
/// under the rule centred at `θ` on the loc-scale family (and are infinite
/// once `σ′ ≤ σ/√2`); short pairs keep them resolvable at the default order.
fn blend(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + 0.1 * (y - x)).collect()
}

fn divergences_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        let pts = sample_points(fam.name(), 4, seed, false);
        for spec in DIVERGENCE_KINDS {
            let t = &pts[0];
            out.push(pending(
                format!("{} {spec} D[θ:θ] = 0 at {}", fam.name(), fmt_point(t)),
                "divergences.self",
                divergence(spec, fam, t, t).map(f64::abs),
            ));
            out.push(flag(
                format!("{} {spec} D ≥ 0 on random pairs", fam.name()),
                pts.windows(2)
                    .map(|w| divergence(spec, fam, &w[0], &blend(&w[0], &w[1])))
                    .collect::<Result<Vec<_>>>()
                    .map(|v| v.iter().all(|d| *d >= -1e-12)),
            ));
        }
        let near = blend(&pts[1], &pts[2]);
        let half = divergence(DivergenceSpec::Renyi(0.5), fam, &pts[1], &near)
            .and_then(|r| Ok((r - divergence(DivergenceSpec::Bhattacharyya, fam, &pts[1], &near)?).abs()));
        out.push(pending(
            format!("{} Rényi(1/2) = Bhattacharyya", fam.name()),
            "divergences.half-order",
            half,
        ));
        if fam.name() == "gaussian-loc" {
            let (a, b) = (pts[1][0], pts[2][0]);
            out.push(pending(
                "gaussian-loc KL = (μ−μ′)²/2".into(),
                "divergences.gaussian-kl",
                divergence(DivergenceSpec::Kl, fam, &[a], &[b]).map(|d| (d - 0.5 * (a - b) * (a - b)).abs()),
            ));
        }
        if fam.name() == "bernoulli-mean" {
            for (p, q) in [(0.3, 0.6), (0.2, 0.5), (0.7, 0.4)] {
                out.push(flag(
                    format!("bernoulli-mean |D_ρ − KL| monotone as ρ→1 for ({p}, {q})"),
                    renyi_kl_limit_check(fam, &[p], &[q], &[0.1, 0.01, 0.001]).map(|t| t.monotone),
                ));
            }
        }
        out
    });
}

fn eguchi_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        let pts = sample_points(fam.name(), 2, seed, false);
        for spec in [
            DivergenceSpec::Kl,
            DivergenceSpec::Alpha(0.3),
            DivergenceSpec::Renyi(0.7),
            DivergenceSpec::Bhattacharyya,
        ] {
            let (label, _) = GeometryLabel::for_divergence(spec);
            for t in &pts {
                let at = format!("{} {spec} at {}", fam.name(), fmt_point(t));
                match (snapshot(spec, fam, t), analytic_snapshot(label, fam, t)) {
                    (Ok(e), Ok(a)) => {
                        let cross = crate::report::CrossResidual::between(&e, &a);
                        out.push(pending(format!("{at}: metric vs analytic (rel)"), "eguchi.metric", Ok(cross.metric_rel)));
                        out.push(pending(
                            format!("{at}: Γ, Γ* vs analytic"),
                            "eguchi.connection",
                            Ok(cross.gamma_abs.max(cross.gamma_dual_abs)),
                        ));
                        out.push(pending(
                            format!("{at}: dual compatibility"),
                            "eguchi.compatibility",
                            Ok(e.compatibility_residual.unwrap_or(f64::MAX)),
                        ));
                    }
                    (Err(e), _) | (_, Err(e)) => out.push(pending(at, "eguchi.metric", Err(e))),
                }
            }
        }
        for rho in [0.25, 0.5, 0.7, 2.0] {
            let t = &pts[0];
            let r = eguchi::induced_metric(DivergenceSpec::Renyi(rho), fam, t).and_then(|g| {
                let f = ExpectationGeometry::compute(fam, t)?.fisher.g;
                Ok((&g.g - &f * rho).abs().max() / (f * rho).abs().max())
            });
            out.push(pending(
                format!("{} Rényi({rho}) metric = ρ·Fisher at {}", fam.name(), fmt_point(t)),
                "eguchi.metric",
                r,
            ));
        }
        out
    });
}

fn labels() -> Vec<GeometryLabel> {
    vec![
        GeometryLabel::M,
        GeometryLabel::LC,
        GeometryLabel::Alpha(0.3),
        GeometryLabel::Rho(0.7),
        GeometryLabel::Rho(2.0),
        GeometryLabel::Bhattacharyya,
    ]
}

/// `|Γ^(label(1+ε)) − Γ^(target)|` for `ε = 10⁻², 10⁻³`, as the ratio of
/// errors divided by the ratio of offsets.
pub fn limit_ratio(
    family: &ModelFamily,
    theta: &[f64],
    make: fn(f64) -> GeometryLabel,
    target: GeometryLabel,
) -> Result<Option<f64>> {
    let geo = ExpectationGeometry::compute(family, theta)?;
    let goal = geo.connection(target);
    let err = |eps: f64| geo.connection(make(1.0 + eps)).max_abs_diff(&goal);
    let (e1, e2) = (err(1e-2), err(1e-3));
    if e1 < 1e-12 {
        return Ok(None);
    }
    Ok(Some((e1 / e2) / 10.0))
}

fn tensors_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        let pts = sample_points(fam.name(), 2, seed, false);
        for t in &pts {
            for label in labels() {
                out.push(pending(
                    format!("{} {label} dual compatibility at {}", fam.name(), fmt_point(t)),
                    "tensors.compatibility",
                    compatibility_residual(label, fam, t),
                ));
            }
        }
        let t = &pts[0];
        out.push(pending(
            format!("{} Bhattacharyya Γ = Γ* = ½·LC at {}", fam.name(), fmt_point(t)),
            "tensors.self-dual",
            ExpectationGeometry::compute(fam, t).map(|g| {
                let b = g.connection(GeometryLabel::Bhattacharyya);
                let bd = g.connection(GeometryLabel::Bhattacharyya.dual());
                let lc = g.connection(GeometryLabel::LC).scaled(0.5);
                b.max_abs_diff(&bd).max(b.max_abs_diff(&lc))
            }),
        ));
        out.push(pending(
            format!("{} LC from metric derivatives at {}", fam.name(), fmt_point(t)),
            "tensors.levi-civita",
            christoffel_from_metric(fam, t).and_then(|c| {
                let lc = ExpectationGeometry::compute(fam, t)?.second_kind(GeometryLabel::LC)?;
                Ok(c.max_abs_diff(&lc) / lc.max_abs().max(1.0))
            }),
        ));
        for (name, make, target) in [
            ("rho → m", GeometryLabel::Rho as fn(f64) -> GeometryLabel, GeometryLabel::M),
            ("rho-dual → e", GeometryLabel::RhoDual as fn(f64) -> GeometryLabel, GeometryLabel::E),
        ] {
            match limit_ratio(fam, t, make, target) {
                Ok(None) => {}
                r => {
                    let tol = ctx_limit_band(r.map(|v| v.unwrap_or(1.0)));
                    out.push(pending(
                        format!("{} {name} error ∝ |ρ−1| (ratio band) at {}", fam.name(), fmt_point(t)),
                        "tensors.limit-ratio",
                        tol,
                    ));
                }
            }
        }
        if fam.dim() == 1 {
            out.push(pending(
                format!("{} √ρ chart: ρ-metric equals Fisher", fam.name()),
                "tensors.sqrt-rho-metric",
                sqrt_rho_chart_check(fam, t, 0.3).map(|r| r.metric_residual),
            ));
        }
        out
    });
}

/// Maps a normalised ratio `r` to `max(r, 1/r)`, compared against a factor.
fn ctx_limit_band(r: Result<f64>) -> Result<f64> {
    r.map(|r| if r > 0.0 { r.max(1.0 / r) } else { f64::MAX })
}

/// `(w_e, w_m)` with `Δ = w_e Δ⁽ᵉ⁾ + w_m Δ⁽ᵐ⁾`.
fn mixture_weights(label: GeometryLabel) -> (f64, f64) {
    match label {
        GeometryLabel::Rho(r) => (1.0 / r - 1.0, 1.0),
        GeometryLabel::RhoDual(r) => (1.0, 1.0 / r - 1.0),
        GeometryLabel::Alpha(a) => (0.5 * (1.0 + a), 0.5 * (1.0 - a)),
        GeometryLabel::AlphaDual(a) => (0.5 * (1.0 - a), 0.5 * (1.0 + a)),
        GeometryLabel::Bhattacharyya => (1.0, 1.0),
        _ => (0.0, 0.0),
    }
}

/// Relative residual of `Δ⁽ˡᵃᵇᵉˡ⁾ = w_e Δ⁽ᵉ⁾ + w_m Δ⁽ᵐ⁾` with every term
/// evaluated as `div ∘ grad`.
pub fn laplacian_mixture_residual(
    label: GeometryLabel,
    family: &ModelFamily,
    field: &crate::laplace::ScalarField,
    theta: &[f64],
) -> Result<f64> {
    let (we, wm) = mixture_weights(label);
    let direct = laplacian_direct(label, family, field, theta)?;
    let e = laplacian_direct(GeometryLabel::E, family, field, theta)?;
    let m = laplacian_direct(GeometryLabel::M, family, field, theta)?;
    let assembled = we * e + wm * m;
    Ok((direct - assembled).abs() / direct.abs().max(assembled.abs()).max(1.0))
}

fn laplace_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        let t = sample_points(fam.name(), 1, seed, true).remove(0);
        let at = fmt_point(&t);
        for (fname, field) in test_fields() {
            for label in [
                GeometryLabel::Rho(0.3),
                GeometryLabel::Rho(2.0),
                GeometryLabel::RhoDual(0.7),
                GeometryLabel::Alpha(0.4),
                GeometryLabel::Bhattacharyya,
            ] {
                out.push(pending(
                    format!("{} Δ {label} mixture, field {fname} at {at}", fam.name()),
                    "laplace.mixture",
                    laplacian_mixture_residual(label, fam, &field, &t),
                ));
            }
            for rho in [0.3, 2.0] {
                let r = laplacian_lc_conformal(fam, &field, &t, rho).and_then(|c| {
                    let one = laplacian_direct(GeometryLabel::LC, fam, &field, &t)? / rho;
                    Ok((c - one).abs() / one.abs().max(1.0))
                });
                out.push(pending(
                    format!("{} LC Laplacian of ρF = ρ⁻¹Δ (ρ = {rho}), field {fname} at {at}", fam.name()),
                    "laplace.conformal",
                    r,
                ));
            }
        }
        let n = fam.dim();
        let x = VectorField::new(move |t| (0..n).map(|i| (t[0] * (i + 1) as f64).sin()).collect());
        out.push(pending(
            format!("{} LC divergence: connection form = determinant form at {at}", fam.name()),
            "laplace.divergence",
            div_connection(GeometryLabel::LC, fam, &x, &t).and_then(|a| {
                let b = div_lc_metric_form_for(GeometryLabel::LC, fam, &x, &t)?;
                Ok((a - b).abs() / a.abs().max(1.0))
            }),
        ));
        out
    });
    for rho in [0.3, 0.5, 2.0] {
        let cert = non_reparameterizability_certificate(rho);
        let mut p = flag(
            format!("no α reparameterizes the ρ-Laplacian (ρ = {rho})"),
            cert.as_ref().map(|c| c.pass).map_err(Clone::clone),
        );
        p.detail = cert.ok().map(CheckDetail::Certificate);
        ctx.push(p);
    }
}

fn priors_suite(ctx: &mut Ctx<'_>, seed: u64) {
    ctx.per_family(|_, fam| {
        let mut out = Vec::new();
        let pts = sample_points(fam.name(), 3, seed, false);
        let flat = fam.flat_structure() != FlatStructure::Generic;
        for rho in [0.3, 0.7, 2.0] {
            for t in &pts {
                let at = format!("{} ρ = {rho} at {}", fam.name(), fmt_point(t));
                out.push(pending(
                    format!("{at}: Hartigan(α_H = ρ) = Rho contraction"),
                    "priors.hartigan",
                    hartigan_log_derivative(fam, rho, t).and_then(|h| {
                        let r = log_derivative_from_connection(GeometryLabel::Rho(rho), fam, t)?;
                        Ok(h.iter().zip(&r).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
                    }),
                ));
                if flat {
                    for label in [GeometryLabel::Rho(rho), GeometryLabel::RhoDual(rho)] {
                        out.push(pending(
                            format!("{at}: parallelity of {label} covolume"),
                            "priors.parallelity",
                            parallelity_residual(label, fam, t),
                        ));
                    }
                }
            }
        }
        if fam.flat_structure() == FlatStructure::MixtureFlat {
            for t in &pts {
                out.push(pending(
                    format!("{} Hartigan(α_H = 1) vanishes at {}", fam.name(), fmt_point(t)),
                    "priors.hartigan",
                    hartigan_log_derivative(fam, 1.0, t).map(|v| v.iter().fold(0.0f64, |m, x| m.max(x.abs()))),
                ));
            }
        }
        if flat {
            let t = &pts[0];
            let label = GeometryLabel::Rho(0.7);
            out.push(pending(
                format!("{} path reconstruction = closed form for {label} at {}", fam.name(), fmt_point(t)),
                "priors.reconstruction",
                CovolumeField::new(PriorLabel::Geometry(label), fam).and_then(|f| {
                    let r = f.reconstruct(t, DEFAULT_PATH_STEPS)?;
                    let c = closed_form_covolume(label, fam.flat_structure(), fam, t)?;
                    Ok((r.value - c).abs())
                }),
            ));
            out.push(flag(
                format!("{} Bhattacharyya covolume = Jeffreys", fam.name()),
                covolume_exponent(GeometryLabel::Bhattacharyya, fam.flat_structure()).and_then(|b| {
                    Ok(b == covolume_exponent(GeometryLabel::LC, fam.flat_structure())?)
                }),
            ));
        }
        out
    });
    let nat = builtin("bernoulli-natural").expect("built in");
    let coin = builtin("bernoulli-mean").expect("built in");
    for rho in [0.3, 0.5, 2.0] {
        let rep = duality_and_reparam_report(&nat, &coin, rho);
        let mut p = flag(
            format!("Rényi covolumes swap under duality and match α = 1 − 2ρ (ρ = {rho})"),
            rep.as_ref().map(|r| r.duality_holds && r.reparam_holds).map_err(Clone::clone),
        );
        p.detail = rep.ok().map(CheckDetail::Duality);
        ctx.push(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tolerance_overrides() {
        let mut t = Tolerances::default();
        t.apply("priors.parallelity=1e-4").unwrap();
        assert_eq!(t.get("priors.parallelity"), 1e-4);
        assert_eq!(t.overrides().len(), 1);
        assert!(t.apply("nope=1").is_err());
        assert!(t.apply("priors.hartigan").is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        assert_eq!(sample_points("bernoulli-mean", 3, 7, false), sample_points("bernoulli-mean", 3, 7, false));
        assert_ne!(sample_points("bernoulli-mean", 1, 7, false), sample_points("bernoulli-mean", 1, 8, false));
        assert!(sample_points("gaussian-loc", 20, 1, true).iter().all(|p| p[0] > 0.0));
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::EACH.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
    }

    #[test]
    fn laplace_and_priors_suites_pass() {
        let tol = Tolerances::default();
        for suite in [Suite::Laplace, Suite::Priors, Suite::Quadrature, Suite::Models] {
            let failed: Vec<Check> = run(suite, 7, &tol).into_iter().filter(|c| !c.pass).collect();
            assert!(failed.is_empty(), "{failed:#?}");
        }
    }
}
