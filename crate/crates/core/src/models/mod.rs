//! Parametric statistical families.
//!
//! A [`ModelFamily`] couples a sample space, a parameter domain and a
//! [`DensityKernel`] that evaluates `log p_θ(y)` and, where closed forms
//! exist, its score and Hessian in `θ`. Kernels without analytic derivatives
//! fall back to Richardson-extrapolated central differences.

mod builtin;
mod config;
mod spec;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{LocationScale, QuadConfig, SampleSpace};

pub use builtin::{builtin, gaussian_loc, BUILTIN_NAMES};
pub use config::{load_family_config, FamilyConfig, SpaceConfig};
pub use spec::{
    from_exponential_spec, from_mixture_spec, ExponentialFamilySpec, MixtureFamilySpec, SampleFn,
};

/// Step for finite-difference scores: `h = SCORE_FD_STEP · max(1, |θ_i|)`.
pub const SCORE_FD_STEP: f64 = 1e-5;
/// Step for finite-difference Hessians of the log-density.
pub const HESSIAN_FD_STEP: f64 = 1e-3;
/// Margin by which open parameter intervals are shrunk.
pub const DOMAIN_MARGIN: f64 = 1e-6;

/// Which affine structure the family's coordinates carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlatStructure {
    /// Natural parameters of an exponential family (e-affine).
    ExponentialFlat,
    /// Mixture / expectation parameters (m-affine).
    MixtureFlat,
    Generic,
}

impl fmt::Display for FlatStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlatStructure::ExponentialFlat => "exponential-flat",
            FlatStructure::MixtureFlat => "mixture-flat",
            FlatStructure::Generic => "generic",
        })
    }
}

/// A coordinate vector on the statistical manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(Vec<f64>);

impl ParameterPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Config("parameter point needs at least one coordinate".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config(format!("non-finite parameter point {coords:?}")));
        }
        Ok(Self(coords))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParameterPoint {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Box bounds, optionally intersected with `Σ θ_i ≤ sum_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_max: Option<f64>,
}

impl Domain {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("domain bounds must be non-empty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u) || l.is_nan() || u.is_nan()) {
            return Err(Error::Config(format!("empty domain {lower:?}..{upper:?}")));
        }
        Ok(Self {
            lower,
            upper,
            sum_max: None,
        })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(vec![lower], vec![upper])
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
            sum_max: None,
        }
    }

    /// Open probability simplex in the first `dim` coordinates, shrunk by
    /// `margin`.
    pub fn simplex(dim: usize, margin: f64) -> Self {
        Self {
            lower: vec![margin; dim],
            upper: vec![1.0 - margin; dim],
            sum_max: Some(1.0 - margin),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().all(|t| t.is_finite())
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| t >= l && t <= u)
            && self.sum_max.is_none_or(|s| theta.iter().sum::<f64>() <= s)
    }

    /// Largest `r` such that every point within sup-norm distance `r` of
    /// `theta` is inside the domain.
    pub fn boundary_distance(&self, theta: &[f64]) -> f64 {
        if !self.contains(theta) {
            return 0.0;
        }
        let mut r = f64::INFINITY;
        for (t, (l, u)) in theta.iter().zip(self.lower.iter().zip(&self.upper)) {
            r = r.min(t - l).min(u - t);
        }
        if let Some(s) = self.sum_max {
            r = r.min((s - theta.iter().sum::<f64>()) / theta.len() as f64);
        }
        r
    }

    /// Corner points of the box (used for positivity checks of densities
    /// that are affine in the parameter).
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| {
                (0..n)
                    .map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
                    .collect()
            })
            .collect()
    }
}

/// Evaluator of a family at one parameter point.
pub trait PointDensity {
    fn log_density(&self, y: f64) -> f64;

    /// Analytic score `∂_i log p`, if available.
    fn score(&self, _y: f64) -> Option<Vec<f64>> {
        None
    }

    /// Analytic `∂_i∂_j log p` in row-major order, if available.
    fn log_hessian(&self, _y: f64) -> Option<Vec<f64>> {
        None
    }

    fn location_scale(&self) -> Option<LocationScale> {
        None
    }
}

/// Source of [`PointDensity`] evaluators for a family.
pub trait DensityKernel: Send + Sync {
    fn dim(&self) -> usize;

    /// Prepares the evaluator at `theta`. Callers check the domain first.
    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>>;
}

#[derive(Clone)]
pub struct ModelFamily {
    name: String,
    space: SampleSpace,
    domain: Domain,
    flat: FlatStructure,
    anchor: Vec<f64>,
    kernel: Arc<dyn DensityKernel>,
    quad: QuadConfig,
}

impl fmt::Debug for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelFamily")
            .field("name", &self.name)
            .field("dim", &self.dim())
            .field("space", &self.space)
            .field("domain", &self.domain)
            .field("flat", &self.flat)
            .finish()
    }
}

impl ModelFamily {
    pub fn new(
        name: impl Into<String>,
        space: SampleSpace,
        domain: Domain,
        flat: FlatStructure,
        anchor: Vec<f64>,
        kernel: Arc<dyn DensityKernel>,
    ) -> Result<Self> {
        let name = name.into();
        if kernel.dim() != domain.dim() {
            return Err(Error::Dimension {
                expected: kernel.dim(),
                got: domain.dim(),
            });
        }
        if !domain.contains(&anchor) {
            return Err(Error::Config(format!(
                "anchor {anchor:?} of `{name}` is outside its domain"
            )));
        }
        Ok(Self {
            name,
            space,
            domain,
            flat,
            anchor,
            kernel,
            quad: QuadConfig::default(),
        })
    }

    pub fn with_quadrature(mut self, quad: QuadConfig) -> Self {
        self.quad = quad;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn space(&self) -> &SampleSpace {
        &self.space
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn flat_structure(&self) -> FlatStructure {
        self.flat
    }

    /// Reference point at which anchored log-priors vanish.
    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn quadrature(&self) -> QuadConfig {
        self.quad
    }

    pub fn kernel(&self) -> &Arc<dyn DensityKernel> {
        &self.kernel
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        self.domain.contains(theta)
    }

    pub fn check_domain(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if !self.contains(theta) {
            return Err(Error::Domain {
                family: self.name.clone(),
                theta: theta.to_vec(),
            });
        }
        Ok(())
    }

    pub fn point(&self, theta: &[f64]) -> Result<PointEval<'_>> {
        self.check_domain(theta)?;
        Ok(PointEval {
            family: self,
            theta: theta.to_vec(),
            density: self.kernel.at(theta)?,
        })
    }

    pub fn log_density(&self, y: f64, theta: &[f64]) -> Result<f64> {
        Ok(self.point(theta)?.log_density(y))
    }

    pub fn score(&self, y: f64, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.point(theta)?.score(y))
    }

    pub fn log_hessian(&self, y: f64, theta: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        Ok(DMatrix::from_row_slice(n, n, &self.point(theta)?.log_hessian(y)))
    }

    /// The same family in the rescaled chart `θ_new = factor · θ`.
    pub fn rescaled_chart(&self, factor: f64) -> Result<ModelFamily> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Config(format!("chart scale must be positive, got {factor}")));
        }
        let domain = Domain {
            lower: self.domain.lower.iter().map(|l| l * factor).collect(),
            upper: self.domain.upper.iter().map(|u| u * factor).collect(),
            sum_max: self.domain.sum_max.map(|s| s * factor),
        };
        Ok(ModelFamily {
            name: format!("{}[x{factor}]", self.name),
            space: self.space.clone(),
            domain,
            flat: self.flat,
            anchor: self.anchor.iter().map(|a| a * factor).collect(),
            kernel: Arc::new(RescaledKernel {
                inner: self.kernel.clone(),
                factor,
            }),
            quad: self.quad,
        })
    }
}

struct RescaledKernel {
    inner: Arc<dyn DensityKernel>,
    factor: f64,
}

impl DensityKernel for RescaledKernel {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        let original: Vec<f64> = theta.iter().map(|t| t / self.factor).collect();
        Ok(Box::new(RescaledPoint {
            inner: self.inner.at(&original)?,
            factor: self.factor,
        }))
    }
}

struct RescaledPoint {
    inner: Box<dyn PointDensity>,
    factor: f64,
}

impl PointDensity for RescaledPoint {
    fn log_density(&self, y: f64) -> f64 {
        self.inner.log_density(y)
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        self.inner
            .score(y)
            .map(|s| s.into_iter().map(|v| v / self.factor).collect())
    }

    fn log_hessian(&self, y: f64) -> Option<Vec<f64>> {
        let f2 = self.factor * self.factor;
        self.inner
            .log_hessian(y)
            .map(|h| h.into_iter().map(|v| v / f2).collect())
    }

    fn location_scale(&self) -> Option<LocationScale> {
        self.inner.location_scale()
    }
}

/// A family prepared at one parameter point.
pub struct PointEval<'a> {
    family: &'a ModelFamily,
    theta: Vec<f64>,
    density: Box<dyn PointDensity>,
}

impl<'a> PointEval<'a> {
    pub fn family(&self) -> &'a ModelFamily {
        self.family
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn log_density(&self, y: f64) -> f64 {
        self.density.log_density(y)
    }

    pub fn location_scale(&self) -> Option<LocationScale> {
        self.density.location_scale()
    }

    pub fn has_analytic_score(&self) -> bool {
        self.density.score(self.probe_node()).is_some()
    }

    pub fn has_analytic_hessian(&self) -> bool {
        self.density.log_hessian(self.probe_node()).is_some()
    }

    fn probe_node(&self) -> f64 {
        match self.family.space() {
            SampleSpace::Finite { atoms } => atoms[0],
            SampleSpace::Countable { .. } => 0.0,
            SampleSpace::RealLine { center, .. } => *center,
            SampleSpace::Interval { lower, upper } => 0.5 * (lower + upper),
        }
    }

    pub fn score(&self, y: f64) -> Vec<f64> {
        self.density.score(y).unwrap_or_else(|| self.fd_score(y))
    }

    /// Row-major `n × n` Hessian of `log p` in `θ`.
    pub fn log_hessian(&self, y: f64) -> Vec<f64> {
        self.density
            .log_hessian(y)
            .unwrap_or_else(|| self.fd_hessian(y))
    }

    fn shifted_log_density(&self, y: f64, shifts: &[(usize, f64)]) -> f64 {
        let mut t = self.theta.clone();
        for &(i, d) in shifts {
            t[i] += d;
        }
        match self.family.kernel.at(&t) {
            Ok(p) => p.log_density(y),
            Err(_) => f64::NAN,
        }
    }

    /// Central differences in each coordinate, one Richardson level.
    pub fn fd_score(&self, y: f64) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| {
                let h = SCORE_FD_STEP * self.theta[i].abs().max(1.0);
                let d = |h: f64| {
                    (self.shifted_log_density(y, &[(i, h)]) - self.shifted_log_density(y, &[(i, -h)]))
                        / (2.0 * h)
                };
                (4.0 * d(0.5 * h) - d(h)) / 3.0
            })
            .collect()
    }

    pub fn fd_hessian(&self, y: f64) -> Vec<f64> {
        let n = self.theta.len();
        let mut out = vec![0.0; n * n];
        let center = self.log_density(y);
        for i in 0..n {
            let hi = HESSIAN_FD_STEP * self.theta[i].abs().max(1.0);
            for j in i..n {
                let hj = HESSIAN_FD_STEP * self.theta[j].abs().max(1.0);
                let d = |s: f64| {
                    let (hi, hj) = (hi * s, hj * s);
                    if i == j {
                        (self.shifted_log_density(y, &[(i, hi)]) - 2.0 * center
                            + self.shifted_log_density(y, &[(i, -hi)]))
                            / (hi * hi)
                    } else {
                        (self.shifted_log_density(y, &[(i, hi), (j, hj)])
                            - self.shifted_log_density(y, &[(i, hi), (j, -hj)])
                            - self.shifted_log_density(y, &[(i, -hi), (j, hj)])
                            + self.shifted_log_density(y, &[(i, -hi), (j, -hj)]))
                            / (4.0 * hi * hj)
                    }
                };
                let v = (4.0 * d(0.5) - d(1.0)) / 3.0;
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}

/// A family built from plain closures; derivatives are optional and fall
/// back to finite differences.
pub struct ClosureKernel {
    dim: usize,
    log_density: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    location_scale: Option<Arc<dyn Fn(&[f64]) -> LocationScale + Send + Sync>>,
}

impl ClosureKernel {
    pub fn new(dim: usize, log_density: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            log_density: Arc::new(log_density),
            location_scale: None,
        }
    }

    pub fn with_location_scale(
        mut self,
        f: impl Fn(&[f64]) -> LocationScale + Send + Sync + 'static,
    ) -> Self {
        self.location_scale = Some(Arc::new(f));
        self
    }
}

struct ClosurePoint {
    theta: Vec<f64>,
    log_density: Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>,
    location_scale: Option<LocationScale>,
}

impl PointDensity for ClosurePoint {
    fn log_density(&self, y: f64) -> f64 {
        (self.log_density)(y, &self.theta)
    }

    fn location_scale(&self) -> Option<LocationScale> {
        self.location_scale
    }
}

impl DensityKernel for ClosureKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(ClosurePoint {
            theta: theta.to_vec(),
            log_density: self.log_density.clone(),
            location_scale: self.location_scale.as_ref().map(|f| f(theta)),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_point_validation() {
        assert!(ParameterPoint::new(vec![]).is_err());
        assert!(ParameterPoint::new(vec![f64::NAN]).is_err());
        let p = ParameterPoint::new(vec![0.3, 0.2]).unwrap();
        assert_eq!(p.dim(), 2);
        assert_eq!(&p[..], &[0.3, 0.2]);
    }

    #[test]
    fn simplex_boundary_distance() {
        let d = Domain::simplex(2, 1e-6);
        assert!(d.contains(&[0.3, 0.3]));
        assert!(!d.contains(&[0.6, 0.6]));
        let r = d.boundary_distance(&[0.3, 0.3]);
        assert!((r - (1.0 - 1e-6 - 0.6) / 2.0).abs() < 1e-15);
        assert_eq!(d.boundary_distance(&[0.9, 0.9]), 0.0);
    }

    #[test]
    fn closure_family_uses_fd_derivatives() {
        let kernel = ClosureKernel::new(1, |y, t: &[f64]| {
            let p = t[0];
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        });
        let fam = ModelFamily::new(
            "coin-fd",
            SampleSpace::finite(vec![0.0, 1.0]).unwrap(),
            Domain::interval(DOMAIN_MARGIN, 1.0 - DOMAIN_MARGIN).unwrap(),
            FlatStructure::MixtureFlat,
            vec![0.5],
            Arc::new(kernel),
        )
        .unwrap();
        let pt = fam.point(&[0.3]).unwrap();
        assert!(!pt.has_analytic_score());
        let s = pt.score(1.0)[0];
        assert!((s - 1.0 / 0.3).abs() < 1e-6 * (1.0 / 0.3));
        let h = pt.log_hessian(0.0)[0];
        let exact = -1.0 / (0.7f64 * 0.7);
        assert!((h - exact).abs() < 1e-6 * exact.abs(), "{h} vs {exact}");
    }

    #[test]
    fn rescaled_chart_scales_score() {
        let fam = builtin("bernoulli-natural").unwrap();
        let scaled = fam.rescaled_chart(2.0).unwrap();
        let s0 = fam.score(1.0, &[0.4]).unwrap()[0];
        let s1 = scaled.score(1.0, &[0.8]).unwrap()[0];
        assert!((s1 - s0 / 2.0).abs() < 1e-15);
    }
}
