//! Expectation-based geometry: Fisher metric, exponential connection,
//! Amari–Chentsov tensor and the connection families assembled from them.
//!
//! First-kind coefficients are the stored form. Second-kind coefficients are
//! raised on demand with the label's own metric, so for the Rényi labels the
//! factor `ρ⁻¹` from `(ρF)⁻¹` is applied in exactly one place.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::divergences::DivergenceSpec;
use crate::eguchi::{GeometrySnapshot, GeometrySource};
use crate::error::{Error, Result};
use crate::fd;
use crate::models::{Domain, ModelFamily};
use crate::quadrature::expect_vec;

/// FD step for derivatives of the analytic metric field.
pub const METRIC_FD_STEP: f64 = 1e-4;
/// Stencils must stay this many steps away from the domain boundary.
pub const STENCIL_MARGIN: f64 = 8.0;

/// A dense `n × n × n` array indexed `(i, j, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    t.data[(i * n + j) * n + k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.n + j) * self.n + k]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i * self.n + j) * self.n + k] = v;
    }

    /// `a · self + b · other`.
    pub fn combine(&self, a: f64, other: &Tensor3, b: f64) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Tensor3 {
        Tensor3 {
            n: self.n,
            data: self.data.iter().map(|x| a * x).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `max |T_ijk − T_jik|`.
    pub fn torsion(&self) -> f64 {
        let n = self.n;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    r = r.max((self.get(i, j, k) - self.get(j, i, k)).abs());
                }
            }
        }
        r
    }

    /// Largest deviation over all index permutations.
    pub fn symmetry_residual(&self) -> f64 {
        let n = self.n;
        let mut r: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let v = self.get(i, j, k);
                    for w in [
                        self.get(i, k, j),
                        self.get(j, i, k),
                        self.get(j, k, i),
                        self.get(k, i, j),
                        self.get(k, j, i),
                    ] {
                        r = r.max((v - w).abs());
                    }
                }
            }
        }
        r
    }

    /// `out_ijk = Σ_l T_ijl · m_lk` (raises the last index with `m = g⁻¹`).
    pub fn raise_last(&self, m: &DMatrix<f64>) -> Tensor3 {
        let n = self.n;
        Tensor3::from_fn(n, |i, j, k| (0..n).map(|l| self.get(i, j, l) * m[(l, k)]).sum())
    }

    /// `v_i = Σ_j T_jij`: the contraction `Γʲ_{ji}` of a second-kind array
    /// stored as `Γ[lower_1][lower_2][upper]`.
    pub fn trace_first_upper(&self) -> Vec<f64> {
        let n = self.n;
        (0..n).map(|i| (0..n).map(|j| self.get(j, i, j)).sum()).collect()
    }
}

/// The Amari–Chentsov tensor.
pub type CTensor = Tensor3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricTensor {
    #[serde(with = "matrix_rows")]
    pub g: DMatrix<f64>,
    pub point: Vec<f64>,
    /// `max |g_ij − g_ji|` before symmetrization (zero for analytic metrics).
    pub asymmetry: f64,
}

impl MetricTensor {
    /// Symmetrizes `g` and checks positive definiteness.
    pub fn new(g: DMatrix<f64>, point: &[f64]) -> Result<Self> {
        let asymmetry = (&g - g.transpose()).abs().max();
        let g = (&g + g.transpose()) * 0.5;
        if g.iter().any(|v| !v.is_finite()) || g.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite {
                theta: point.to_vec(),
            });
        }
        Ok(Self {
            g,
            point: point.to_vec(),
            asymmetry,
        })
    }

    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        self.g
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| Error::NotPositiveDefinite {
                theta: self.point.clone(),
            })
    }

    pub fn det(&self) -> f64 {
        self.g.determinant()
    }
}

pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    /// `Γ_ijk`.
    FirstKind,
    /// `Γᵏ_ij`, stored at `(i, j, k)`.
    SecondKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectionCoefficients {
    pub gamma: Tensor3,
    pub kind: CoefficientKind,
}

/// Named geometries on a statistical manifold.
///
/// `Rho(1)` and `Alpha(±1)` are accepted as the KL limits of the families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label", content = "order", rename_all = "kebab-case")]
pub enum GeometryLabel {
    Fisher,
    E,
    M,
    #[serde(rename = "lc")]
    LC,
    Alpha(f64),
    AlphaDual(f64),
    Rho(f64),
    RhoDual(f64),
    Bhattacharyya,
}

impl GeometryLabel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            GeometryLabel::Alpha(a) | GeometryLabel::AlphaDual(a) if !a.is_finite() => {
                Err(Error::InvalidOrder(format!("alpha must be finite, got {a}")))
            }
            GeometryLabel::Rho(r) | GeometryLabel::RhoDual(r) if !(r.is_finite() && r > 0.0) => {
                Err(Error::InvalidOrder(format!("rho must be positive, got {r}")))
            }
            _ => Ok(()),
        }
    }

    /// Conformal factor of the label's metric relative to Fisher.
    pub fn metric_scale(&self) -> f64 {
        match *self {
            GeometryLabel::Rho(r) | GeometryLabel::RhoDual(r) => r,
            GeometryLabel::Bhattacharyya => 0.5,
            _ => 1.0,
        }
    }

    /// `(a, b)` with `Γ = a·Γᵉ + b·C` in first kind. `Fisher` denotes the
    /// Levi-Civita connection of the Fisher metric.
    pub fn coefficients(&self) -> (f64, f64) {
        match *self {
            GeometryLabel::E => (1.0, 0.0),
            GeometryLabel::M => (1.0, 1.0),
            GeometryLabel::Fisher | GeometryLabel::LC => (1.0, 0.5),
            GeometryLabel::Alpha(a) => (1.0, 0.5 * (1.0 - a)),
            GeometryLabel::AlphaDual(a) => (1.0, 0.5 * (1.0 + a)),
            GeometryLabel::Rho(r) => (r, r * r),
            GeometryLabel::RhoDual(r) => (r, r * (1.0 - r)),
            GeometryLabel::Bhattacharyya => (0.5, 0.25),
        }
    }

    pub fn dual(&self) -> GeometryLabel {
        match *self {
            GeometryLabel::E => GeometryLabel::M,
            GeometryLabel::M => GeometryLabel::E,
            GeometryLabel::Alpha(a) => GeometryLabel::AlphaDual(a),
            GeometryLabel::AlphaDual(a) => GeometryLabel::Alpha(a),
            GeometryLabel::Rho(r) => GeometryLabel::RhoDual(r),
            GeometryLabel::RhoDual(r) => GeometryLabel::Rho(r),
            other => other,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            GeometryLabel::Fisher => "fisher",
            GeometryLabel::E => "e",
            GeometryLabel::M => "m",
            GeometryLabel::LC => "lc",
            GeometryLabel::Alpha(_) => "alpha",
            GeometryLabel::AlphaDual(_) => "alpha-dual",
            GeometryLabel::Rho(_) => "rho",
            GeometryLabel::RhoDual(_) => "rho-dual",
            GeometryLabel::Bhattacharyya => "bhattacharyya",
        }
    }

    pub fn order(&self) -> Option<f64> {
        match *self {
            GeometryLabel::Alpha(a) | GeometryLabel::AlphaDual(a) => Some(a),
            GeometryLabel::Rho(r) | GeometryLabel::RhoDual(r) => Some(r),
            _ => None,
        }
    }

    /// The `(primal, dual)` labels whose analytic geometry a divergence
    /// induces.
    pub fn for_divergence(spec: DivergenceSpec) -> (GeometryLabel, GeometryLabel) {
        match spec {
            DivergenceSpec::Kl => (GeometryLabel::M, GeometryLabel::E),
            DivergenceSpec::Alpha(a) => (GeometryLabel::Alpha(a), GeometryLabel::AlphaDual(a)),
            DivergenceSpec::Renyi(r) => (GeometryLabel::Rho(r), GeometryLabel::RhoDual(r)),
            DivergenceSpec::Bhattacharyya => (GeometryLabel::Bhattacharyya, GeometryLabel::Bhattacharyya),
        }
    }
}

impl fmt::Display for GeometryLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order() {
            Some(o) => write!(f, "{}({o})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for GeometryLabel {
    type Err = Error;

    /// Parses `fisher`, `e`, `m`, `lc`, `bhattacharyya`, or `name:order` for
    /// `alpha`, `alpha-dual`, `rho`, `rho-dual`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, order) = match s.split_once(':') {
            Some((n, o)) => (
                n,
                Some(
                    o.parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad order in label `{s}`")))?,
                ),
            ),
            None => (s, None),
        };
        let need = || order.ok_or_else(|| Error::Config(format!("label `{name}` needs an order")));
        let label = match name {
            "fisher" => GeometryLabel::Fisher,
            "e" => GeometryLabel::E,
            "m" => GeometryLabel::M,
            "lc" => GeometryLabel::LC,
            "bhattacharyya" => GeometryLabel::Bhattacharyya,
            "alpha" => GeometryLabel::Alpha(need()?),
            "alpha-dual" => GeometryLabel::AlphaDual(need()?),
            "rho" => GeometryLabel::Rho(need()?),
            "rho-dual" => GeometryLabel::RhoDual(need()?),
            _ => return Err(Error::Config(format!("unknown geometry label `{s}`"))),
        };
        label.validate()?;
        Ok(label)
    }
}

/// Fisher metric, `Γᵉ` and `C` from one quadrature pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ExpectationGeometry {
    pub fisher: MetricTensor,
    pub e: Tensor3,
    pub c: CTensor,
}

impl ExpectationGeometry {
    pub fn compute(family: &ModelFamily, theta: &[f64]) -> Result<Self> {
        let n = family.dim();
        let m = n * n + 2 * n * n * n;
        let sums = expect_vec(family, theta, m, |y, pt, out| {
            let s = pt.score(y);
            let h = pt.log_hessian(y);
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] = s[i] * s[j];
                    for k in 0..n {
                        let idx = (i * n + j) * n + k;
                        out[n * n + idx] = h[i * n + j] * s[k];
                        out[n * n + n * n * n + idx] = s[i] * s[j] * s[k];
                    }
                }
            }
        })?;
        let fisher = MetricTensor::new(DMatrix::from_row_slice(n, n, &sums[..n * n]), theta)?;
        let e = Tensor3 {
            n,
            data: sums[n * n..n * n + n * n * n].to_vec(),
        };
        let c = Tensor3 {
            n,
            data: sums[n * n + n * n * n..].to_vec(),
        };
        Ok(Self { fisher, e, c })
    }

    pub fn metric(&self, label: GeometryLabel) -> DMatrix<f64> {
        &self.fisher.g * label.metric_scale()
    }

    pub fn connection(&self, label: GeometryLabel) -> Tensor3 {
        let (a, b) = label.coefficients();
        self.e.combine(a, &self.c, b)
    }

    pub fn second_kind(&self, label: GeometryLabel) -> Result<Tensor3> {
        let inv = self.fisher.inverse()? / label.metric_scale();
        Ok(self.connection(label).raise_last(&inv))
    }
}

pub fn fisher(family: &ModelFamily, theta: &[f64]) -> Result<MetricTensor> {
    let n = family.dim();
    let sums = expect_vec(family, theta, n * n, |y, pt, out| {
        let s = pt.score(y);
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = s[i] * s[j];
            }
        }
    })?;
    MetricTensor::new(DMatrix::from_row_slice(n, n, &sums), theta)
}

/// `Γᵉ_ijk = E[∂_i∂_j ℓ · ∂_k ℓ]`.
pub fn e_connection(family: &ModelFamily, theta: &[f64]) -> Result<ConnectionCoefficients> {
    Ok(ConnectionCoefficients {
        gamma: ExpectationGeometry::compute(family, theta)?.e,
        kind: CoefficientKind::FirstKind,
    })
}

/// `C_ijk = E[∂_i ℓ ∂_j ℓ ∂_k ℓ]`.
pub fn amari_chentsov(family: &ModelFamily, theta: &[f64]) -> Result<CTensor> {
    Ok(ExpectationGeometry::compute(family, theta)?.c)
}

/// First-kind coefficients of `label`.
pub fn connection(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<ConnectionCoefficients> {
    label.validate()?;
    Ok(ConnectionCoefficients {
        gamma: ExpectationGeometry::compute(family, theta)?.connection(label),
        kind: CoefficientKind::FirstKind,
    })
}

/// Second-kind coefficients `Γᵏ_ij = g^{kℓ} Γ_ijℓ` with the label's metric.
pub fn second_kind(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<ConnectionCoefficients> {
    label.validate()?;
    Ok(ConnectionCoefficients {
        gamma: ExpectationGeometry::compute(family, theta)?.second_kind(label)?,
        kind: CoefficientKind::SecondKind,
    })
}

/// Metric, connection, dual connection and `C` of `label` at `theta`.
pub fn analytic_snapshot(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<GeometrySnapshot> {
    label.validate()?;
    let geo = ExpectationGeometry::compute(family, theta)?;
    let metric = MetricTensor::new(geo.metric(label), theta)?;
    Ok(GeometrySnapshot {
        metric,
        gamma: ConnectionCoefficients {
            gamma: geo.connection(label),
            kind: CoefficientKind::FirstKind,
        },
        gamma_dual: ConnectionCoefficients {
            gamma: geo.connection(label.dual()),
            kind: CoefficientKind::FirstKind,
        },
        c_tensor: Some(geo.c),
        source: GeometrySource::Analytic(label),
        compatibility_residual: Some(compatibility_residual(label, family, theta)?),
    })
}

/// Fails with `StepTooLarge` unless a stencil of half-width
/// `STENCIL_MARGIN · h` around `theta` stays in the domain.
pub(crate) fn ensure_reach(domain: &Domain, theta: &[f64], h: f64) -> Result<()> {
    let reach = STENCIL_MARGIN * h;
    if domain.boundary_distance(theta) < reach {
        return Err(Error::StepTooLarge {
            theta: theta.to_vec(),
            reach,
        });
    }
    Ok(())
}

fn max_step(base: f64, theta: &[f64]) -> f64 {
    theta.iter().fold(0.0, |m, &t| m.max(fd::scaled_step(base, t)))
}

/// `∂_i g_jk` of the label's analytic metric field, as `out[i]` = flattened
/// row-major `∂_i g`.
pub fn metric_derivative(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    ensure_reach(family.domain(), theta, max_step(METRIC_FD_STEP, theta))?;
    let scale = label.metric_scale();
    let g = |t: &[f64]| -> Result<Vec<f64>> {
        Ok(fisher(family, t)?.g.transpose().iter().map(|v| v * scale).collect())
    };
    fd::jacobian_rows(&g, theta, METRIC_FD_STEP)
}

/// Residual `max |∂_i g_jk − Γ_ijk − Γ*_ikj|` for `label` and its dual, all
/// analytic, with the metric derivative by finite differences.
pub fn compatibility_residual(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<f64> {
    let geo = ExpectationGeometry::compute(family, theta)?;
    let dg = metric_derivative(label, family, theta)?;
    Ok(compatibility_from(&dg, &geo.connection(label), &geo.connection(label.dual())))
}

pub(crate) fn compatibility_from(dg: &[Vec<f64>], gamma: &Tensor3, dual: &Tensor3) -> f64 {
    let n = gamma.n;
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let v = dg[i][j * n + k] - gamma.get(i, j, k) - dual.get(i, k, j);
                r = r.max(v.abs());
            }
        }
    }
    r
}

/// Second-kind Christoffel symbols of the Fisher metric from its finite
/// differences, `½ g^{kℓ}(∂_i g_jℓ + ∂_j g_iℓ − ∂_ℓ g_ij)`.
pub fn christoffel_from_metric(family: &ModelFamily, theta: &[f64]) -> Result<Tensor3> {
    let n = family.dim();
    let dg = metric_derivative(GeometryLabel::Fisher, family, theta)?;
    let first = Tensor3::from_fn(n, |i, j, l| 0.5 * (dg[i][j * n + l] + dg[j][i * n + l] - dg[l][i * n + j]));
    let inv = fisher(family, theta)?.inverse()?;
    Ok(first.raise_last(&inv))
}

/// Outcome of rescaling the chart by `θ′ = √ρ · θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqrtRhoReport {
    pub rho: f64,
    pub theta: Vec<f64>,
    /// `max |ρg_{i′j′} − ᶠg_ij|`: the rescaled Rényi metric against the
    /// Fisher components of the original chart.
    pub metric_residual: f64,
    /// `max |Γ_{i′j′k′} − ρ^{-3/2} Γ_ijk|` over the primal and dual Rényi
    /// connections.
    pub transform_residual: f64,
    /// `(a, b)` with transformed primal `= aΓᵉ + bC`: `(ρ^{-1/2}, ρ^{1/2})`.
    pub primal_coefficients: (f64, f64),
    /// Transformed dual: `(ρ^{-1/2}, (1−ρ)ρ^{-1/2})`.
    pub dual_coefficients: (f64, f64),
    /// Residual of those decompositions against the computed coefficients.
    pub decomposition_residual: f64,
    /// The C-coefficient `(1−ρ)/√ρ` of the published transformed equation.
    pub displayed_c_coefficient: f64,
    /// Which transformed connection the displayed coefficient matches:
    /// `primal`, `dual`, `both` or `neither`.
    pub display_matches: String,
    /// `α` solving `(1−α)/2 = ρ^{1/2}` from the primal C-coefficient.
    pub alpha_from_primal: f64,
    /// `α` solving `(1+α)/2 = (1−ρ)ρ^{-1/2}` from the dual C-coefficient.
    pub alpha_from_dual: f64,
    /// Whether one `α` reproduces both transformed connections, including
    /// the unit coefficient of `Γᵉ`.
    pub alpha_consistent: bool,
    /// `min_α max(|Γ′ − ᵅΓ|, |Γ*′ − ᵅ*Γ|)` against the α-forms
    /// `Γᵉ + ((1∓α)/2)C` of the original components.
    pub alpha_form_residual: f64,
    /// Distance of both transformed connections to the Levi-Civita
    /// connection of the rescaled metric.
    pub lc_form_residual: f64,
}

/// Compares the Rényi geometry in the chart `θ′ = √ρ θ` with the α-geometry.
pub fn sqrt_rho_chart_check(family: &ModelFamily, theta: &[f64], rho: f64) -> Result<SqrtRhoReport> {
    GeometryLabel::Rho(rho).validate()?;
    let s = rho.sqrt();
    let scaled = family.rescaled_chart(s)?;
    let theta_s: Vec<f64> = theta.iter().map(|t| t * s).collect();
    let orig = ExpectationGeometry::compute(family, theta)?;
    let new = ExpectationGeometry::compute(&scaled, &theta_s)?;

    let metric_residual = (new.metric(GeometryLabel::Rho(rho)) - &orig.fisher.g).abs().max();
    let factor = rho.powf(-1.5);
    let (p_new, d_new) = (
        new.connection(GeometryLabel::Rho(rho)),
        new.connection(GeometryLabel::RhoDual(rho)),
    );
    let (p_old, d_old) = (
        orig.connection(GeometryLabel::Rho(rho)),
        orig.connection(GeometryLabel::RhoDual(rho)),
    );
    let transform_residual = p_new
        .max_abs_diff(&p_old.scaled(factor))
        .max(d_new.max_abs_diff(&d_old.scaled(factor)));

    let primal_coefficients = (1.0 / s, s);
    let dual_coefficients = (1.0 / s, (1.0 - rho) / s);
    let decomposition_residual = p_new
        .max_abs_diff(&orig.e.combine(primal_coefficients.0, &orig.c, primal_coefficients.1))
        .max(d_new.max_abs_diff(&orig.e.combine(dual_coefficients.0, &orig.c, dual_coefficients.1)));

    let displayed = (1.0 - rho) / s;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    let display_matches = match (close(displayed, primal_coefficients.1), close(displayed, dual_coefficients.1)) {
        (true, true) => "both",
        (true, false) => "primal",
        (false, true) => "dual",
        (false, false) => "neither",
    }
    .to_string();

    let alpha_from_primal = 1.0 - 2.0 * s;
    let alpha_from_dual = 2.0 * (1.0 - rho) / s - 1.0;
    let alpha_consistent = close(alpha_from_primal, alpha_from_dual) && close(1.0 / s, 1.0);

    let a1: Vec<f64> = p_new.data.iter().zip(&orig.e.data).map(|(t, e)| t - e).collect();
    let a2: Vec<f64> = d_new.data.iter().zip(&orig.e.data).map(|(t, e)| t - e).collect();
    let cost = |a: f64| -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..a1.len() {
            let c = orig.c.data[k];
            m = m.max((a1[k] - a * c).abs()).max((a2[k] - (1.0 - a) * c).abs());
        }
        m
    };
    let alpha_form_residual = golden_min(cost, -1e6, 1e6);

    let lc = new.connection(GeometryLabel::LC).scaled(rho);
    let lc_form_residual = p_new.max_abs_diff(&lc).max(d_new.max_abs_diff(&lc));

    Ok(SqrtRhoReport {
        rho,
        theta: theta.to_vec(),
        metric_residual,
        transform_residual,
        primal_coefficients,
        dual_coefficients,
        decomposition_residual,
        displayed_c_coefficient: displayed,
        display_matches,
        alpha_from_primal,
        alpha_from_dual,
        alpha_consistent,
        alpha_form_residual,
        lc_form_residual,
    })
}

/// Minimum of a convex function on `[lo, hi]` by golden-section search.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    f1.min(f2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    const P: f64 = 0.3;

    fn oracle_e() -> f64 {
        -1.0 / (P * P) + 1.0 / ((1.0 - P) * (1.0 - P))
    }

    #[test]
    fn oracle_values_are_hand_sums() {
        assert!((oracle_e() + 9.070294784580499).abs() < 1e-12);
        assert!((1.0 / (P * (1.0 - P)) - 4.761904761904762).abs() < 1e-14);
    }

    #[test]
    fn bernoulli_mean_expectations() {
        let coin = builtin("bernoulli-mean").unwrap();
        let geo = ExpectationGeometry::compute(&coin, &[P]).unwrap();
        assert!((geo.fisher.g[(0, 0)] - 4.761904761904762).abs() < 1e-12);
        assert!((geo.e.get(0, 0, 0) - oracle_e()).abs() < 1e-12);
        assert!((geo.c.get(0, 0, 0) + oracle_e()).abs() < 1e-12);
        assert!(geo.connection(GeometryLabel::M).max_abs() < 1e-12);
        let fair = amari_chentsov(&coin, &[0.5]).unwrap();
        assert!(fair.max_abs() < 1e-12);
    }

    #[test]
    fn flat_charts() {
        let nat = builtin("bernoulli-natural").unwrap();
        for t in [-1.5, 0.0, 2.0] {
            assert!(e_connection(&nat, &[t]).unwrap().gamma.max_abs() < 1e-8);
        }
        let g = builtin("gaussian-loc").unwrap();
        assert!(e_connection(&g, &[0.4]).unwrap().gamma.max_abs() < 1e-8);
        assert!(amari_chentsov(&g, &[0.4]).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn gaussian_fisher_sigma_two() {
        let g = builtin("gaussian-loc:sigma=2").unwrap();
        assert!((fisher(&g, &[1.0]).unwrap().g[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn categorical_fisher_closed_form() {
        let cat = builtin("categorical-3").unwrap();
        let u = 1.0 / 3.0;
        let f = fisher(&cat, &[u, u]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 6.0 } else { 3.0 };
                assert!((f.g[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert!(f.det() > 0.0);
    }

    #[test]
    fn label_identities() {
        let coin = builtin("bernoulli-mean").unwrap();
        let geo = ExpectationGeometry::compute(&coin, &[P]).unwrap();
        assert!(geo.connection(GeometryLabel::Rho(1.0)).max_abs() < 1e-8);
        assert_eq!(
            geo.connection(GeometryLabel::Rho(0.5)),
            geo.connection(GeometryLabel::RhoDual(0.5))
        );
        assert!(geo.connection(GeometryLabel::Alpha(0.0)).max_abs_diff(&geo.connection(GeometryLabel::LC)) < 1e-10);
        let rho = geo.second_kind(GeometryLabel::Rho(0.4)).unwrap().get(0, 0, 0);
        let want = (oracle_e() - 0.4 * oracle_e()) * P * (1.0 - P);
        assert!((rho - want).abs() < 1e-8);
        // RhoDual(ρ) differs from Rho(−ρ)
        let d = geo
            .connection(GeometryLabel::RhoDual(0.3))
            .max_abs_diff(&geo.e.combine(-0.3, &geo.c, 0.09));
        assert!(d > 1e-2);
    }

    #[test]
    fn lc_two_ways() {
        for (name, theta) in [("bernoulli-mean", vec![0.3]), ("gaussian-loc-scale", vec![0.2, 1.3])] {
            let fam = builtin(name).unwrap();
            let lc = second_kind(GeometryLabel::LC, &fam, &theta).unwrap().gamma;
            let fdc = christoffel_from_metric(&fam, &theta).unwrap();
            assert!(lc.max_abs_diff(&fdc) < 1e-5, "{name}: {}", lc.max_abs_diff(&fdc));
        }
    }

    #[test]
    fn compatibility_on_loc_scale() {
        let fam = builtin("gaussian-loc-scale").unwrap();
        for label in [GeometryLabel::Rho(0.3), GeometryLabel::Alpha(0.4), GeometryLabel::M] {
            assert!(compatibility_residual(label, &fam, &[0.1, 0.9]).unwrap() < 1e-5);
        }
    }

    #[test]
    fn sqrt_rho_reports() {
        let coin = builtin("bernoulli-mean").unwrap();
        let half = sqrt_rho_chart_check(&coin, &[P], 0.5).unwrap();
        assert!(half.lc_form_residual < 1e-6);
        assert_eq!(half.display_matches, "both");
        let quarter = sqrt_rho_chart_check(&coin, &[P], 0.25).unwrap();
        assert!(quarter.metric_residual < 1e-6);
        assert!(quarter.transform_residual < 1e-8);
        assert!(quarter.alpha_form_residual > 1e-3);
        assert!(!quarter.alpha_consistent);
        assert_eq!(quarter.display_matches, "dual");
        let one = sqrt_rho_chart_check(&coin, &[P], 1.0).unwrap();
        assert!(one.metric_residual < 1e-12 && one.alpha_form_residual < 1e-8);
    }

    #[test]
    fn label_parsing() {
        assert_eq!("rho:0.5".parse::<GeometryLabel>().unwrap(), GeometryLabel::Rho(0.5));
        assert_eq!("lc".parse::<GeometryLabel>().unwrap(), GeometryLabel::LC);
        assert!("rho".parse::<GeometryLabel>().is_err());
        assert!("rho:-1".parse::<GeometryLabel>().is_err());
    }
}
