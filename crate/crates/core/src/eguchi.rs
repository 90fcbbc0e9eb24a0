//! Geometry induced by a divergence through mixed partial derivatives at the
//! diagonal:
//!
//! ```text
//! g_ij   = −∂_i ∂_{j′} D[θ : θ′]        |θ=θ′
//! Γ_ijk  = −∂_i ∂_j ∂_{k′} D[θ : θ′]    |θ=θ′
//! Γ*_ijk = −∂_k ∂_{i′} ∂_{j′} D[θ : θ′] |θ=θ′
//! ```
//!
//! Derivatives are central differences over the `2n` variables `(θ, θ′)`,
//! evaluated first and restricted to the diagonal last. Nothing here uses
//! the expectation formulas of [`crate::tensors`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::divergences::{divergence, DivergenceSpec};
use crate::error::Result;
use crate::fd;
use crate::models::ModelFamily;
use crate::tensors::{
    compatibility_from, ensure_reach, CTensor, CoefficientKind, ConnectionCoefficients, GeometryLabel,
    MetricTensor, Tensor3,
};

/// Base step for second mixed partials.
pub const H_FD: f64 = 1e-4;
/// Base step for third mixed partials.
pub const H_FD3: f64 = 5e-3;
/// Base step for the outer derivative of the induced metric field.
pub const H_COMPAT: f64 = 5e-3;
/// Relative tolerance on induced metrics.
pub const TOL_METRIC_REL: f64 = 1e-5;
/// Absolute tolerance on third-derivative quantities.
pub const TOL_THIRD_ABS: f64 = 5e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "spec", rename_all = "kebab-case")]
pub enum GeometrySource {
    Eguchi(DivergenceSpec),
    Analytic(GeometryLabel),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySnapshot {
    pub metric: MetricTensor,
    pub gamma: ConnectionCoefficients,
    pub gamma_dual: ConnectionCoefficients,
    pub c_tensor: Option<CTensor>,
    pub source: GeometrySource,
    /// `max |∂_i g_jk − Γ_ijk − Γ*_ikj|` with `∂g` by finite differences of
    /// the metric field.
    pub compatibility_residual: Option<f64>,
}

fn steps(base: f64, theta: &[f64]) -> Vec<f64> {
    theta
        .iter()
        .chain(theta.iter())
        .map(|&t| fd::scaled_step(base, t))
        .collect()
}

fn max_step(base: f64, theta: &[f64]) -> f64 {
    theta.iter().fold(0.0, |m, &t| m.max(fd::scaled_step(base, t)))
}

/// `D` as a function of the stacked point `(θ, θ′)`.
fn stacked(spec: DivergenceSpec, family: &ModelFamily) -> impl Fn(&[f64]) -> Result<f64> + '_ {
    let n = family.dim();
    move |z: &[f64]| divergence(spec, family, &z[..n], &z[n..])
}

pub fn induced_metric(spec: DivergenceSpec, family: &ModelFamily, theta: &[f64]) -> Result<MetricTensor> {
    spec.validate()?;
    family.check_domain(theta)?;
    ensure_reach(family.domain(), theta, max_step(H_FD, theta))?;
    let n = family.dim();
    let d = stacked(spec, family);
    let z: Vec<f64> = theta.iter().chain(theta.iter()).copied().collect();
    let h = steps(H_FD, theta);
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g[(i, j)] = -fd::partial(&d, &z, &[i, n + j], &h)?;
        }
    }
    MetricTensor::new(g, theta)
}

pub fn induced_connection(spec: DivergenceSpec, family: &ModelFamily, theta: &[f64]) -> Result<ConnectionCoefficients> {
    third_order(spec, family, theta, false)
}

pub fn induced_dual_connection(
    spec: DivergenceSpec,
    family: &ModelFamily,
    theta: &[f64],
) -> Result<ConnectionCoefficients> {
    third_order(spec, family, theta, true)
}

fn third_order(spec: DivergenceSpec, family: &ModelFamily, theta: &[f64], dual: bool) -> Result<ConnectionCoefficients> {
    spec.validate()?;
    family.check_domain(theta)?;
    ensure_reach(family.domain(), theta, max_step(H_FD3, theta))?;
    let n = family.dim();
    let d = stacked(spec, family);
    let z: Vec<f64> = theta.iter().chain(theta.iter()).copied().collect();
    let h = steps(H_FD3, theta);
    let mut gamma = Tensor3::zeros(n);
    for i in 0..n {
        for j in i..n {
            for k in 0..n {
                // Γ: ∂_i ∂_j in θ, ∂_k in θ′.  Γ*: ∂_k in θ, ∂_i ∂_j in θ′.
                let idx = if dual { [k, n + i, n + j] } else { [i, j, n + k] };
                let v = -fd::partial(&d, &z, &idx, &h)?;
                gamma.set(i, j, k, v);
                gamma.set(j, i, k, v);
            }
        }
    }
    Ok(ConnectionCoefficients {
        gamma,
        kind: CoefficientKind::FirstKind,
    })
}

/// Metric, connection and dual connection induced by `spec`, with the dual
/// compatibility residual attached.
pub fn snapshot(spec: DivergenceSpec, family: &ModelFamily, theta: &[f64]) -> Result<GeometrySnapshot> {
    let metric = induced_metric(spec, family, theta)?;
    let gamma = induced_connection(spec, family, theta)?;
    let gamma_dual = induced_dual_connection(spec, family, theta)?;
    ensure_reach(family.domain(), theta, max_step(H_COMPAT, theta) + max_step(H_FD, theta))?;
    let field = |t: &[f64]| -> Result<Vec<f64>> {
        Ok(induced_metric(spec, family, t)?.g.transpose().iter().copied().collect())
    };
    let dg = fd::jacobian_rows(&field, theta, H_COMPAT)?;
    let residual = compatibility_from(&dg, &gamma.gamma, &gamma_dual.gamma);
    Ok(GeometrySnapshot {
        metric,
        gamma,
        gamma_dual,
        c_tensor: None,
        source: GeometrySource::Eguchi(spec),
        compatibility_residual: Some(residual),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;
    use crate::tensors::ExpectationGeometry;

    #[test]
    fn renyi_half_metric_on_bernoulli() {
        let coin = builtin("bernoulli-mean").unwrap();
        let g = induced_metric(DivergenceSpec::Renyi(0.5), &coin, &[0.3]).unwrap();
        let want = 0.5 / (0.3 * 0.7);
        assert!((g.g[(0, 0)] - want).abs() < 1e-5 * want);
    }

    #[test]
    fn kl_metric_on_gaussian() {
        let g = builtin("gaussian-loc").unwrap();
        for mu in [-2.0, 0.0, 3.5] {
            let m = induced_metric(DivergenceSpec::Kl, &g, &[mu]).unwrap();
            assert!((m.g[(0, 0)] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn kl_connections_are_flat_in_their_charts() {
        let coin = builtin("bernoulli-mean").unwrap();
        let m = induced_connection(DivergenceSpec::Kl, &coin, &[0.3]).unwrap();
        assert!(m.gamma.get(0, 0, 0).abs() < 2e-3);
        let nat = builtin("bernoulli-natural").unwrap();
        let e = induced_dual_connection(DivergenceSpec::Kl, &nat, &[0.4]).unwrap();
        assert!(e.gamma.get(0, 0, 0).abs() < 2e-3);
    }

    #[test]
    fn renyi_dual_minus_primal() {
        let coin = builtin("bernoulli-mean").unwrap();
        let rho = 0.3;
        let g = induced_connection(DivergenceSpec::Renyi(rho), &coin, &[0.4]).unwrap();
        let gd = induced_dual_connection(DivergenceSpec::Renyi(rho), &coin, &[0.4]).unwrap();
        let c = ExpectationGeometry::compute(&coin, &[0.4]).unwrap().c.get(0, 0, 0);
        let diff = gd.gamma.get(0, 0, 0) - g.gamma.get(0, 0, 0);
        assert!((diff - rho * (1.0 - 2.0 * rho) * c).abs() < 5e-3);
    }

    #[test]
    fn snapshot_compatibility_and_determinism() {
        let g = builtin("gaussian-loc").unwrap();
        let a = snapshot(DivergenceSpec::Renyi(0.7), &g, &[0.2]).unwrap();
        assert!(a.compatibility_residual.unwrap() <= 5e-3);
        let b = snapshot(DivergenceSpec::Renyi(0.7), &g, &[0.2]).unwrap();
        assert_eq!(a, b);
        let coin = builtin("bernoulli-mean").unwrap();
        let s = snapshot(DivergenceSpec::Kl, &coin, &[0.5]).unwrap();
        assert!((s.metric.g[(0, 0)] - 4.0).abs() < 1e-5 * 4.0);
    }

    #[test]
    fn near_boundary_is_rejected() {
        let coin = builtin("bernoulli-mean").unwrap();
        assert!(matches!(
            induced_connection(DivergenceSpec::Kl, &coin, &[0.01]),
            Err(crate::Error::StepTooLarge { .. })
        ));
    }
}
