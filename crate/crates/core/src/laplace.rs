//! Divergence of vector fields, metric gradients and Laplace–Beltrami
//! operators for the connection families of [`GeometryLabel`].
//!
//! `div X = ∂_i Xⁱ + Γⁱ_{ij} Xʲ` with the label's second-kind coefficients,
//! `grad h = g⁻¹ ∂h` with the label's metric, and `Δh = div grad h`. The
//! α-, ρ- and Bhattacharyya Laplacians are defined by their mixtures of the
//! e- and m-Laplacians; the direct `div ∘ grad` evaluation is kept as a
//! cross-check.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::models::ModelFamily;
use crate::tensors::{ensure_reach, fisher, ExpectationGeometry, GeometryLabel};

/// Step for derivatives of scalar and vector fields and of `g⁻¹∂h`.
pub const FIELD_FD_STEP: f64 = 1e-5;
/// Tolerance of the assembled-versus-direct cross-checks.
pub const TOL_CROSS_CHECK: f64 = 1e-6;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// A scalar function on parameter space with optional analytic derivatives.
#[derive(Clone)]
pub struct ScalarField {
    value: ScalarFn,
    grad: Option<VectorFn>,
    hess: Option<MatrixFn>,
}

impl ScalarField {
    pub fn new(value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Arc::new(value),
            grad: None,
            hess: None,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_hess(mut self, hess: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.hess = Some(Arc::new(hess));
        self
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        (self.value)(theta)
    }

    /// True when the gradient comes from finite differences.
    pub fn grad_is_fd(&self) -> bool {
        self.grad.is_none()
    }

    pub fn hess_is_fd(&self) -> bool {
        self.hess.is_none()
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(theta),
            None => {
                let f = |t: &[f64]| Ok(self.value(t));
                fd::gradient(&f, theta, FIELD_FD_STEP).expect("field evaluation is infallible")
            }
        }
    }

    pub fn hess(&self, theta: &[f64]) -> DMatrix<f64> {
        match &self.hess {
            Some(h) => h(theta),
            None => {
                let f = |t: &[f64]| Ok(self.value(t));
                fd::hessian(&f, theta, 1e-4).expect("field evaluation is infallible")
            }
        }
    }
}

/// A vector field with optional analytic Jacobian `J[i][j] = ∂_j Xⁱ`.
#[derive(Clone)]
pub struct VectorField {
    components: VectorFn,
    jacobian: Option<MatrixFn>,
}

impl VectorField {
    pub fn new(components: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            components: Arc::new(components),
            jacobian: None,
        }
    }

    pub fn with_jacobian(mut self, j: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(j));
        self
    }

    pub fn zero(n: usize) -> Self {
        Self::new(move |_| vec![0.0; n]).with_jacobian(move |_| DMatrix::zeros(n, n))
    }

    pub fn components(&self, theta: &[f64]) -> Vec<f64> {
        (self.components)(theta)
    }

    pub fn jacobian_is_fd(&self) -> bool {
        self.jacobian.is_none()
    }

    pub fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(theta),
            None => {
                let f = |t: &[f64]| Ok(self.components(t));
                let rows = fd::jacobian_rows(&f, theta, FIELD_FD_STEP).expect("field evaluation is infallible");
                let n = theta.len();
                DMatrix::from_fn(n, n, |i, j| rows[j][i])
            }
        }
    }

    /// `∂_i Xⁱ`.
    pub fn divergence(&self, theta: &[f64]) -> f64 {
        self.jacobian(theta).trace()
    }
}

/// `Γⁱ_{ij}` of the label.
fn trace_vector(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<Vec<f64>> {
    Ok(ExpectationGeometry::compute(family, theta)?
        .second_kind(label)?
        .trace_first_upper())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn div_plain(label: GeometryLabel, family: &ModelFamily, x: &VectorField, theta: &[f64]) -> Result<f64> {
    family.check_domain(theta)?;
    let tr = trace_vector(label, family, theta)?;
    Ok(x.divergence(theta) + dot(&tr, &x.components(theta)))
}

/// `∇`-divergence `∂_i Xⁱ + Γⁱ_{ij} Xʲ`. For the Rényi labels the mixture
/// `ρ·div⁽ᵐ⁾ + (1−ρ)·div⁽ᵉ⁾` (dual: ρ ↔ 1−ρ) is verified alongside.
pub fn div_connection(label: GeometryLabel, family: &ModelFamily, x: &VectorField, theta: &[f64]) -> Result<f64> {
    label.validate()?;
    let direct = div_plain(label, family, x, theta)?;
    let weight_m = match label {
        GeometryLabel::Rho(r) => Some(r),
        GeometryLabel::RhoDual(r) => Some(1.0 - r),
        _ => None,
    };
    if let Some(w) = weight_m {
        let mixed = w * div_plain(GeometryLabel::M, family, x, theta)?
            + (1.0 - w) * div_plain(GeometryLabel::E, family, x, theta)?;
        cross_check("rho divergence mixture", direct, mixed, TOL_CROSS_CHECK)?;
    }
    Ok(direct)
}

fn cross_check(what: &str, a: f64, b: f64, tol: f64) -> Result<()> {
    let residual = (a - b).abs();
    if !(residual <= tol * a.abs().max(b.abs()).max(1.0)) {
        return Err(Error::CrossCheck {
            what: what.into(),
            residual,
            tolerance: tol,
        });
    }
    Ok(())
}

/// `(1/√det g) ∂_j(√det g Xʲ)` with the derivative by finite differences of
/// the product field. `metric` must be positive definite on the stencil.
pub fn div_lc_metric_form<M>(metric: M, x: &VectorField, theta: &[f64]) -> Result<f64>
where
    M: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    let vol = |t: &[f64]| -> Result<f64> {
        let det = metric(t)?.determinant();
        if !(det > 0.0) {
            return Err(Error::NotPositiveDefinite { theta: t.to_vec() });
        }
        Ok(det.sqrt())
    };
    let product = |t: &[f64]| -> Result<Vec<f64>> {
        let v = vol(t)?;
        Ok(x.components(t).into_iter().map(|c| v * c).collect())
    };
    let rows = fd::jacobian_rows(&product, theta, FIELD_FD_STEP)?;
    let div: f64 = (0..theta.len()).map(|j| rows[j][j]).sum();
    Ok(div / vol(theta)?)
}

/// [`div_lc_metric_form`] with the label's metric on `family`.
pub fn div_lc_metric_form_for(
    label: GeometryLabel,
    family: &ModelFamily,
    x: &VectorField,
    theta: &[f64],
) -> Result<f64> {
    ensure_reach(family.domain(), theta, max_step(theta))?;
    let scale = label.metric_scale();
    div_lc_metric_form(|t| Ok(fisher(family, t)?.g * scale), x, theta)
}

fn max_step(theta: &[f64]) -> f64 {
    theta.iter().fold(0.0, |m, &t| m.max(fd::scaled_step(FIELD_FD_STEP, t)))
}

/// `g^{ij} ∂_j h` with the label's metric.
pub fn grad(label: GeometryLabel, family: &ModelFamily, h: &ScalarField, theta: &[f64]) -> Result<Vec<f64>> {
    label.validate()?;
    let inv = fisher(family, theta)?.inverse()? / label.metric_scale();
    Ok((&inv * nalgebra::DVector::from_vec(h.grad(theta))).iter().copied().collect())
}

/// `div⁽ˡᵃᵇᵉˡ⁾ grad⁽ˡᵃᵇᵉˡ⁾ h` evaluated directly.
pub fn laplacian_direct(label: GeometryLabel, family: &ModelFamily, h: &ScalarField, theta: &[f64]) -> Result<f64> {
    label.validate()?;
    family.check_domain(theta)?;
    ensure_reach(family.domain(), theta, max_step(theta))?;
    let field = |t: &[f64]| grad(label, family, h, t);
    let rows = fd::jacobian_rows(&field, theta, FIELD_FD_STEP)?;
    let outer: f64 = (0..theta.len()).map(|i| rows[i][i]).sum();
    let tr = trace_vector(label, family, theta)?;
    Ok(outer + dot(&tr, &field(theta)?))
}

/// `(weight_e, weight_m, label)` expressing a Laplacian as a mixture of
/// `Δ⁽ᵉ⁾` and `Δ⁽ᵐ⁾`, or `None` for the directly evaluated labels.
fn mixture(label: GeometryLabel) -> Option<(f64, f64)> {
    match label {
        GeometryLabel::Alpha(a) => Some((0.5 * (1.0 + a), 0.5 * (1.0 - a))),
        GeometryLabel::AlphaDual(a) => Some((0.5 * (1.0 - a), 0.5 * (1.0 + a))),
        GeometryLabel::Rho(r) => Some((1.0 / r - 1.0, 1.0)),
        GeometryLabel::RhoDual(r) => Some((1.0, 1.0 / r - 1.0)),
        // Δᴮ = 2Δᴸᶜ = Δ⁽ᵉ⁾ + Δ⁽ᵐ⁾
        GeometryLabel::Bhattacharyya => Some((1.0, 1.0)),
        _ => None,
    }
}

/// Laplace–Beltrami operator of `label` applied to `h`.
///
/// E, M, LC and Fisher are evaluated as `div ∘ grad`. The α-, ρ- and
/// Bhattacharyya operators are assembled from `Δ⁽ᵉ⁾` and `Δ⁽ᵐ⁾`
/// (e.g. `Δ⁽ρ⁾ = Δ⁽ᵐ⁾ + (ρ⁻¹−1)Δ⁽ᵉ⁾`) and checked against `div ∘ grad`.
pub fn laplacian(label: GeometryLabel, family: &ModelFamily, h: &ScalarField, theta: &[f64]) -> Result<f64> {
    label.validate()?;
    match mixture(label) {
        None => laplacian_direct(label, family, h, theta),
        Some((we, wm)) => {
            let e = laplacian_direct(GeometryLabel::E, family, h, theta)?;
            let m = laplacian_direct(GeometryLabel::M, family, h, theta)?;
            let assembled = we * e + wm * m;
            let direct = laplacian_direct(label, family, h, theta)?;
            cross_check("laplacian assembly", assembled, direct, TOL_CROSS_CHECK)?;
            Ok(assembled)
        }
    }
}

/// Levi-Civita Laplacian of the conformal metric `ρ·F`, evaluated directly.
pub fn laplacian_lc_conformal(family: &ModelFamily, h: &ScalarField, theta: &[f64], rho: f64) -> Result<f64> {
    GeometryLabel::Rho(rho).validate()?;
    family.check_domain(theta)?;
    ensure_reach(family.domain(), theta, max_step(theta))?;
    let field = |t: &[f64]| -> Result<Vec<f64>> {
        let inv = fisher(family, t)?.inverse()? / rho;
        Ok((&inv * nalgebra::DVector::from_vec(h.grad(t))).iter().copied().collect())
    };
    let rows = fd::jacobian_rows(&field, theta, FIELD_FD_STEP)?;
    let outer: f64 = (0..theta.len()).map(|i| rows[i][i]).sum();
    // The Christoffel symbols of ρF equal those of F.
    let tr = trace_vector(GeometryLabel::LC, family, theta)?;
    Ok(outer + dot(&tr, &field(theta)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReparamCertificate {
    pub rho: f64,
    /// `α` forced by matching the m-coefficient: `(1−α)/2 = 1`.
    pub alpha_from_m: f64,
    /// `(1+α)/2` at that `α`.
    pub e_coefficient_alpha: f64,
    /// `ρ⁻¹ − 1`, the e-coefficient of the ρ-Laplacian.
    pub e_coefficient_rho: f64,
    pub residual: f64,
    pub consistent: bool,
    pub pass: bool,
}

/// Checks that no `α` turns `Δ⁽ᵐ⁾ + (ρ⁻¹−1)Δ⁽ᵉ⁾` into
/// `((1+α)/2)Δ⁽ᵉ⁾ + ((1−α)/2)Δ⁽ᵐ⁾`.
pub fn non_reparameterizability_certificate(rho: f64) -> Result<ReparamCertificate> {
    if !(rho.is_finite() && rho > 0.0) || rho == 1.0 {
        return Err(Error::InvalidOrder(format!("rho must be positive and not 1, got {rho}")));
    }
    // (1−α)/2 = 1
    let alpha = -1.0;
    let e_alpha = 0.5 * (1.0 + alpha);
    let e_rho = 1.0 / rho - 1.0;
    let residual = (e_rho - e_alpha).abs();
    let consistent = residual <= 1e-12;
    Ok(ReparamCertificate {
        rho,
        alpha_from_m: alpha,
        e_coefficient_alpha: e_alpha,
        e_coefficient_rho: e_rho,
        residual,
        consistent,
        pass: !consistent,
    })
}

/// Test fields used by the verification suites: `θ₀²`, `log θ₀`, `sin θ₀`.
pub fn test_fields() -> Vec<(&'static str, ScalarField)> {
    vec![
        (
            "square",
            ScalarField::new(|t| t[0] * t[0]).with_grad(|t| {
                let mut g = vec![0.0; t.len()];
                g[0] = 2.0 * t[0];
                g
            }),
        ),
        ("log", ScalarField::new(|t| t[0].ln())),
        (
            "sin",
            ScalarField::new(|t| t[0].sin()).with_grad(|t| {
                let mut g = vec![0.0; t.len()];
                g[0] = t[0].cos();
                g
            }),
        ),
    ]
}
