//! Families assembled from exponential-family and mixture-family
//! specifications.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use super::{DensityKernel, Domain, FlatStructure, ModelFamily, PointDensity};
use crate::error::{Error, Result};
use crate::quadrature::{LocationScale, NeumaierSum, QuadConfig, QuadratureRule, SampleSpace};

/// A real function of the sample `y`.
pub type SampleFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Gram matrices with a larger condition number are treated as rank-deficient.
const MAX_GRAM_CONDITION: f64 = 1e12;
/// Tolerance for `∫C = 1` and `∫F_i = 0` in mixture specifications.
const MIXTURE_NORMALIZATION_TOL: f64 = 1e-8;
/// Re-centring passes used to locate a density on unbounded spaces.
const LOCATE_PASSES: usize = 6;

/// `p_θ(y) = exp(θ^i T_i(y) + k(y) − ψ(θ))` against the space's base measure.
#[derive(Clone)]
pub struct ExponentialFamilySpec {
    pub name: String,
    pub space: SampleSpace,
    pub sufficient_stats: Vec<SampleFn>,
    /// The log-carrier `k(y)`.
    pub carrier: SampleFn,
}

impl fmt::Debug for ExponentialFamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExponentialFamilySpec")
            .field("name", &self.name)
            .field("space", &self.space)
            .field("stats", &self.sufficient_stats.len())
            .finish()
    }
}

/// `p_η(y) = η^i F_i(y) + C(y)` against the space's base measure.
#[derive(Clone)]
pub struct MixtureFamilySpec {
    pub name: String,
    pub space: SampleSpace,
    pub components: Vec<SampleFn>,
    pub carrier: SampleFn,
}

impl fmt::Debug for MixtureFamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixtureFamilySpec")
            .field("name", &self.name)
            .field("space", &self.space)
            .field("components", &self.components.len())
            .finish()
    }
}

/// A default reference point: the box centre, or a unit step inside a
/// half-infinite bound, or zero.
pub(crate) fn default_anchor(domain: &Domain) -> Vec<f64> {
    let mut a: Vec<f64> = domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
            (true, true) => 0.5 * (l + u),
            (true, false) => if l < 0.0 { 0.0 } else { l + 1.0 },
            (false, true) => if u > 0.0 { 0.0 } else { u - 1.0 },
            (false, false) => 0.0,
        })
        .collect();
    if let Some(s) = domain.sum_max {
        let total: f64 = a.iter().sum();
        if total > s {
            let n = a.len() as f64;
            a.iter_mut().for_each(|v| *v = s / (n + 1.0));
        }
    }
    a
}

/// Builds an exponential family with `ψ` computed by quadrature.
pub fn from_exponential_spec(spec: ExponentialFamilySpec, domain: Domain) -> Result<ModelFamily> {
    from_exponential_spec_with(spec, domain, None, QuadConfig::default())
}

pub(crate) fn from_exponential_spec_with(
    spec: ExponentialFamilySpec,
    domain: Domain,
    anchor: Option<Vec<f64>>,
    quad: QuadConfig,
) -> Result<ModelFamily> {
    let n = spec.sufficient_stats.len();
    if n == 0 {
        return Err(Error::DegenerateStatistics {
            condition: f64::INFINITY,
        });
    }
    if domain.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: domain.dim(),
        });
    }
    let anchor = anchor.unwrap_or_else(|| default_anchor(&domain));
    let kernel = Arc::new(ExponentialKernel {
        stats: spec.sufficient_stats,
        carrier: spec.carrier,
        space: spec.space.clone(),
        quad,
    });
    if !domain.contains(&anchor) {
        return Err(Error::Config(format!("anchor {anchor:?} is outside the domain")));
    }
    // Centred Gram matrix of the statistics under p at the anchor.
    let cov = kernel.state(&anchor)?.cov;
    let eig = cov.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::DegenerateStatistics { condition });
    }
    Ok(ModelFamily::new(
        spec.name,
        spec.space,
        domain,
        FlatStructure::ExponentialFlat,
        anchor,
        kernel,
    )?
    .with_quadrature(quad))
}

struct ExponentialKernel {
    stats: Vec<SampleFn>,
    carrier: SampleFn,
    space: SampleSpace,
    quad: QuadConfig,
}

struct ExponentialState {
    psi: f64,
    mean: Vec<f64>,
    cov: DMatrix<f64>,
    location: Option<LocationScale>,
}

impl ExponentialKernel {
    fn unnormalized(&self, theta: &[f64], y: f64) -> f64 {
        let mut s = (self.carrier)(y);
        for (t, stat) in theta.iter().zip(&self.stats) {
            s += t * stat(y);
        }
        s
    }

    /// `(log Z, mean y, var y)` under the rule.
    fn moments(&self, rule: &QuadratureRule, theta: &[f64]) -> (f64, f64, f64) {
        let logs: Vec<f64> = rule
            .nodes
            .iter()
            .zip(&rule.log_weights)
            .map(|(&y, &lw)| lw + self.unnormalized(theta, y))
            .collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1, mut m2) = (NeumaierSum::default(), NeumaierSum::default(), NeumaierSum::default());
        for (&y, &l) in rule.nodes.iter().zip(&logs) {
            let w = (l - top).exp();
            if !w.is_finite() {
                continue;
            }
            z.add(w);
            m1.add(w * y);
            m2.add(w * y * y);
        }
        let z = z.total();
        let mean = m1.total() / z;
        let var = (m2.total() / z - mean * mean).max(0.0);
        (top + z.ln(), mean, var)
    }

    fn state(&self, theta: &[f64]) -> Result<ExponentialState> {
        let adaptive = matches!(self.space, SampleSpace::RealLine { .. } | SampleSpace::Countable { .. });
        let mut hint = None;
        let mut rule = QuadratureRule::build(&self.space, hint, self.quad.order, self.quad.target_rel_tol)?;
        let (mut log_z, mut mean, mut var) = self.moments(&rule, theta);
        if adaptive {
            for _ in 0..LOCATE_PASSES {
                if !(log_z.is_finite() && mean.is_finite() && var > 0.0) {
                    break;
                }
                let next = Some(LocationScale {
                    location: mean,
                    scale: var.sqrt(),
                });
                let settled = hint.is_some_and(|h: LocationScale| {
                    (h.location - mean).abs() <= 1e-3 * h.scale && (h.scale / var.sqrt() - 1.0).abs() <= 1e-3
                });
                hint = next;
                rule = QuadratureRule::build(&self.space, hint, self.quad.order, self.quad.target_rel_tol)?;
                (log_z, mean, var) = self.moments(&rule, theta);
                if settled {
                    break;
                }
            }
        }
        if !log_z.is_finite() {
            return Err(Error::NormalizationFailure(format!(
                "log-partition is not finite at {theta:?}"
            )));
        }
        let fine_rule = rule.refine();
        let (fine, _, _) = self.moments(&fine_rule, theta);
        let tol = 10.0 * self.quad.target_rel_tol * fine.abs().max(1.0);
        if !fine.is_finite() || (fine - log_z).abs() > tol {
            return Err(Error::NonConvergent {
                order: rule.order,
                refined: fine_rule.order,
                coarse: log_z,
                fine,
            });
        }
        let psi = fine;
        let n = self.stats.len();
        let (sums, _) = fine_rule.weighted_sums(
            n + n * n,
            |y| self.unnormalized(theta, y) - psi,
            |y, out| {
                let t: Vec<f64> = self.stats.iter().map(|s| s(y)).collect();
                out[..n].copy_from_slice(&t);
                for i in 0..n {
                    for j in 0..n {
                        out[n + i * n + j] = t[i] * t[j];
                    }
                }
            },
        );
        let mean_t = sums[..n].to_vec();
        let cov = DMatrix::from_fn(n, n, |i, j| sums[n + i * n + j] - mean_t[i] * mean_t[j]);
        Ok(ExponentialState {
            psi,
            mean: mean_t,
            cov,
            location: adaptive.then_some(hint).flatten(),
        })
    }
}

impl DensityKernel for ExponentialKernel {
    fn dim(&self) -> usize {
        self.stats.len()
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        let state = self.state(theta)?;
        Ok(Box::new(ExponentialPoint {
            theta: theta.to_vec(),
            stats: self.stats.clone(),
            carrier: self.carrier.clone(),
            state,
        }))
    }
}

struct ExponentialPoint {
    theta: Vec<f64>,
    stats: Vec<SampleFn>,
    carrier: SampleFn,
    state: ExponentialState,
}

impl PointDensity for ExponentialPoint {
    fn log_density(&self, y: f64) -> f64 {
        let mut s = (self.carrier)(y) - self.state.psi;
        for (t, stat) in self.theta.iter().zip(&self.stats) {
            s += t * stat(y);
        }
        s
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        Some(
            self.stats
                .iter()
                .zip(&self.state.mean)
                .map(|(s, m)| s(y) - m)
                .collect(),
        )
    }

    fn log_hessian(&self, _y: f64) -> Option<Vec<f64>> {
        Some(self.state.cov.transpose().iter().map(|v| -v).collect())
    }

    fn location_scale(&self) -> Option<LocationScale> {
        self.state.location
    }
}

/// Builds a mixture family. The density is affine in `η`, so positivity is
/// checked at the vertices of the domain on the nodes of the starting and
/// refined rules.
pub fn from_mixture_spec(spec: MixtureFamilySpec, domain: Domain) -> Result<ModelFamily> {
    from_mixture_spec_with(spec, domain, None, QuadConfig::default())
}

pub(crate) fn from_mixture_spec_with(
    spec: MixtureFamilySpec,
    domain: Domain,
    anchor: Option<Vec<f64>>,
    quad: QuadConfig,
) -> Result<ModelFamily> {
    let n = spec.components.len();
    if n == 0 {
        return Err(Error::Config("mixture family needs at least one component".into()));
    }
    if domain.dim() != n {
        return Err(Error::Dimension {
            expected: n,
            got: domain.dim(),
        });
    }
    if domain.lower.iter().chain(&domain.upper).any(|b| !b.is_finite()) {
        return Err(Error::Config("mixture family domains must be bounded".into()));
    }
    let rule = QuadratureRule::build(&spec.space, None, quad.order, quad.target_rel_tol)?;
    let refined = rule.refine();

    let integral = |f: &SampleFn| refined.weighted_sums(1, |_| 0.0, |y, o| o[0] = f(y)).0[0];
    let total = integral(&spec.carrier);
    if (total - 1.0).abs() > MIXTURE_NORMALIZATION_TOL {
        return Err(Error::NormalizationFailure(format!("carrier integrates to {total}")));
    }
    for (i, f) in spec.components.iter().enumerate() {
        let v = integral(f);
        if v.abs() > MIXTURE_NORMALIZATION_TOL {
            return Err(Error::NormalizationFailure(format!("component {i} integrates to {v}")));
        }
    }

    let mut vertices: Vec<Vec<f64>> = domain.corners().into_iter().filter(|c| domain.contains(c)).collect();
    if let Some(s) = domain.sum_max {
        for i in 0..n {
            let mut v = domain.lower.clone();
            let rest: f64 = v.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, x)| x).sum();
            v[i] = (s - rest).min(domain.upper[i]);
            vertices.push(v);
        }
    }
    for eta in &vertices {
        for &y in rule.nodes.iter().chain(&refined.nodes) {
            let mut p = (spec.carrier)(y);
            for (e, f) in eta.iter().zip(&spec.components) {
                p += e * f(y);
            }
            if !(p >= 0.0) {
                return Err(Error::NegativeDensity {
                    node: y,
                    theta: eta.clone(),
                    value: p,
                });
            }
        }
    }

    let anchor = anchor.unwrap_or_else(|| default_anchor(&domain));
    Ok(ModelFamily::new(
        spec.name,
        spec.space,
        domain,
        FlatStructure::MixtureFlat,
        anchor,
        Arc::new(MixtureKernel {
            components: spec.components,
            carrier: spec.carrier,
        }),
    )?
    .with_quadrature(quad))
}

struct MixtureKernel {
    components: Vec<SampleFn>,
    carrier: SampleFn,
}

impl DensityKernel for MixtureKernel {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(MixturePoint {
            eta: theta.to_vec(),
            components: self.components.clone(),
            carrier: self.carrier.clone(),
        }))
    }
}

struct MixturePoint {
    eta: Vec<f64>,
    components: Vec<SampleFn>,
    carrier: SampleFn,
}

impl MixturePoint {
    fn density(&self, y: f64) -> f64 {
        let mut p = (self.carrier)(y);
        for (e, f) in self.eta.iter().zip(&self.components) {
            p += e * f(y);
        }
        p
    }
}

impl PointDensity for MixturePoint {
    fn log_density(&self, y: f64) -> f64 {
        self.density(y).ln()
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        let p = self.density(y);
        Some(self.components.iter().map(|f| f(y) / p).collect())
    }

    fn log_hessian(&self, y: f64) -> Option<Vec<f64>> {
        let p = self.density(y);
        let f: Vec<f64> = self.components.iter().map(|f| f(y) / p).collect();
        let n = f.len();
        Some((0..n * n).map(|k| -f[k / n] * f[k % n]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::expect;

    fn coin_stats() -> ExponentialFamilySpec {
        ExponentialFamilySpec {
            name: "coin".into(),
            space: SampleSpace::finite(vec![0.0, 1.0]).unwrap(),
            sufficient_stats: vec![Arc::new(|y| y)],
            carrier: Arc::new(|_| 0.0),
        }
    }

    #[test]
    fn exponential_bernoulli_log_partition() {
        let fam = from_exponential_spec(coin_stats(), Domain::unbounded(1)).unwrap();
        for theta in [-2.0, 0.0, 0.7, 3.0] {
            let psi = (1.0 + f64::exp(theta)).ln();
            let lp = fam.log_density(1.0, &[theta]).unwrap();
            assert!((lp - (theta - psi)).abs() < 1e-14, "{theta}");
        }
        assert_eq!(fam.flat_structure(), FlatStructure::ExponentialFlat);
    }

    #[test]
    fn exponential_gaussian_log_partition() {
        let spec = ExponentialFamilySpec {
            name: "normal".into(),
            space: SampleSpace::real_line(),
            sufficient_stats: vec![Arc::new(|y| y)],
            carrier: Arc::new(|y| -0.5 * y * y - 0.5 * (2.0 * std::f64::consts::PI).ln()),
        };
        let fam = from_exponential_spec(spec, Domain::unbounded(1)).unwrap();
        for theta in [-3.0, 0.0, 1.3, 8.0] {
            // log p(y) at y = θ equals k(θ) + θ² − θ²/2
            let lp = fam.log_density(theta, &[theta]).unwrap();
            let want = -0.5 * (2.0 * std::f64::consts::PI).ln();
            assert!((lp - want).abs() < 1e-9, "{theta}: {lp}");
            let one = expect(&fam, &[theta], |_| 1.0).unwrap();
            assert!((one - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_statistics_are_degenerate() {
        let mut spec = coin_stats();
        spec.sufficient_stats.clear();
        assert!(matches!(
            from_exponential_spec(spec, Domain::unbounded(1)),
            Err(Error::DegenerateStatistics { .. })
        ));
    }

    #[test]
    fn collinear_statistics_are_degenerate() {
        let mut spec = coin_stats();
        spec.sufficient_stats.push(Arc::new(|y| 2.0 * y));
        assert!(matches!(
            from_exponential_spec(spec, Domain::unbounded(2)),
            Err(Error::DegenerateStatistics { .. })
        ));
    }

    fn coin_mixture() -> MixtureFamilySpec {
        MixtureFamilySpec {
            name: "coin-mix".into(),
            space: SampleSpace::finite(vec![0.0, 1.0]).unwrap(),
            components: vec![Arc::new(|y| if y == 1.0 { 1.0 } else { -1.0 })],
            carrier: Arc::new(|_| 0.5),
        }
    }

    #[test]
    fn mixture_bernoulli() {
        let fam = from_mixture_spec(coin_mixture(), Domain::interval(-0.49, 0.49).unwrap()).unwrap();
        let lp = fam.log_density(1.0, &[0.2]).unwrap();
        assert!((lp - 0.7f64.ln()).abs() < 1e-15);
        let lp0 = fam.log_density(0.0, &[0.0]).unwrap();
        assert_eq!(lp0, 0.5f64.ln());
        assert_eq!(fam.flat_structure(), FlatStructure::MixtureFlat);
    }

    #[test]
    fn mixture_negative_density_witness() {
        let err = from_mixture_spec(coin_mixture(), Domain::interval(-0.6, 0.3).unwrap()).unwrap_err();
        match err {
            Error::NegativeDensity { node, theta, value } => {
                assert_eq!(node, 1.0);
                assert_eq!(theta, vec![-0.6]);
                assert!(value < 0.0);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn mixture_normalization_checked() {
        let mut spec = coin_mixture();
        spec.carrier = Arc::new(|_| 0.6);
        assert!(matches!(
            from_mixture_spec(spec, Domain::interval(-0.4, 0.4).unwrap()),
            Err(Error::NormalizationFailure(_))
        ));
    }
}
