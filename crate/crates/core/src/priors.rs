//! Covolume priors: closed forms on flat charts, log-derivative fields from
//! connections and from Hartigan's definition, and path reconstruction.
//!
//! Priors are improper and carried as log-values anchored at the family's
//! reference point, `log cov(θ₀) = 0`. The conformal prefactor `ρ^{n/2}` of
//! the Rényi covolumes is reported separately and never folded into values.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::models::{FlatStructure, ModelFamily};
use crate::quadrature::expect_vec;
use crate::tensors::{ensure_reach, fisher, ExpectationGeometry, GeometryLabel};

/// Step for finite differences of log-values and log-derivative fields.
pub const PRIOR_FD_STEP: f64 = 1e-5;
/// Closedness residuals above this reject a field.
pub const CLOSEDNESS_TOL: f64 = 1e-4;
/// Default number of trapezoid steps for path reconstruction.
pub const DEFAULT_PATH_STEPS: usize = 64;

/// Which prior a covolume field describes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", content = "order", rename_all = "kebab-case")]
pub enum PriorLabel {
    Geometry(GeometryLabel),
    Hartigan(f64),
}

/// `log det F(θ)`.
pub fn log_det_fisher(family: &ModelFamily, theta: &[f64]) -> Result<f64> {
    let f = fisher(family, theta)?;
    let det = f.det();
    if !(det > 0.0) {
        return Err(Error::NotPositiveDefinite { theta: theta.to_vec() });
    }
    Ok(det.ln())
}

/// Exponent `k` with `cov ∝ (det F)^k` for `label` on a flat chart.
///
/// Exponential-flat: Rho ρ, RhoDual 1−ρ, Alpha (1−α)/2, AlphaDual (1+α)/2,
/// LC/Fisher/Bhattacharyya ½, M (KL) 1, E (KL dual) 0. Mixture-flat charts
/// use `1 −` the exponential-flat exponent.
pub fn covolume_exponent(label: GeometryLabel, structure: FlatStructure) -> Result<f64> {
    label.validate()?;
    let e = match label {
        GeometryLabel::Rho(r) => r,
        GeometryLabel::RhoDual(r) => 1.0 - r,
        GeometryLabel::Alpha(a) => 0.5 * (1.0 - a),
        GeometryLabel::AlphaDual(a) => 0.5 * (1.0 + a),
        GeometryLabel::LC | GeometryLabel::Fisher | GeometryLabel::Bhattacharyya => 0.5,
        GeometryLabel::M => 1.0,
        GeometryLabel::E => 0.0,
    };
    match structure {
        FlatStructure::ExponentialFlat => Ok(e),
        FlatStructure::MixtureFlat => Ok(1.0 - e),
        FlatStructure::Generic => Err(Error::StructureMismatch(
            "closed-form covolumes exist only on exponential- or mixture-flat charts".into(),
        )),
    }
}

/// `log` of the constant prefactor: `(n/2) log ρ` for the Rényi labels,
/// `(n/2) log ½` for Bhattacharyya, zero otherwise.
pub fn log_conformal_prefactor(label: GeometryLabel, n: usize) -> f64 {
    0.5 * n as f64 * label.metric_scale().ln()
}

/// `log cov(θ) − log cov(θ₀)` from the closed form, with `θ₀` the family's
/// anchor.
pub fn closed_form_covolume(
    label: GeometryLabel,
    structure: FlatStructure,
    family: &ModelFamily,
    theta: &[f64],
) -> Result<f64> {
    if structure != family.flat_structure() {
        return Err(Error::StructureMismatch(format!(
            "requested {structure} but `{}` is {}",
            family.name(),
            family.flat_structure()
        )));
    }
    let k = covolume_exponent(label, structure)?;
    if k == 0.0 {
        family.check_domain(theta)?;
        return Ok(0.0);
    }
    Ok(k * (log_det_fisher(family, theta)? - log_det_fisher(family, family.anchor())?))
}

/// `∂_i log cov = Γʲ_{ji}` with the label's second-kind coefficients.
pub fn log_derivative_from_connection(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<Vec<f64>> {
    label.validate()?;
    Ok(ExpectationGeometry::compute(family, theta)?
        .second_kind(label)?
        .trace_first_upper())
}

/// Whether `α_H` lies outside the admissible Rényi orders `(0, 1) ∪ (1, ∞)`.
pub fn outside_renyi(alpha_h: f64) -> bool {
    !(alpha_h > 0.0 && alpha_h != 1.0 && alpha_h.is_finite())
}

/// `∂_i log π = F^{jk} E[α_H ∂_iℓ ∂_jℓ ∂_kℓ + ∂_i∂_jℓ ∂_kℓ]`, with the
/// contraction applied inside the expectation.
pub fn hartigan_log_derivative(family: &ModelFamily, alpha_h: f64, theta: &[f64]) -> Result<Vec<f64>> {
    if !alpha_h.is_finite() {
        return Err(Error::InvalidOrder(format!("alpha_H must be finite, got {alpha_h}")));
    }
    let n = family.dim();
    let inv = fisher(family, theta)?.inverse()?;
    expect_vec(family, theta, n, |y, pt, out| {
        let s = pt.score(y);
        let h = pt.log_hessian(y);
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                for k in 0..n {
                    acc += inv[(j, k)] * (alpha_h * s[i] * s[j] * s[k] + h[i * n + j] * s[k]);
                }
            }
            *o = acc;
        }
    })
}

/// A log-derivative field `θ ↦ ∂ log cov(θ)`.
pub type LogDerivativeField<'a> = dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub value: f64,
    /// Change of the extrapolated value between `steps` and `2·steps`.
    pub refinement_gap: f64,
    /// `max |∂_i v_j − ∂_j v_i|` at the path midpoint.
    pub closedness: f64,
    pub steps: usize,
}

/// Line integral of `field` along the straight path `θ₀ → θ`.
///
/// Trapezoid sums at `N`, `2N`, `4N` steps are Richardson-combined twice
/// over; the reported gap compares the `(N, 2N)` and `(2N, 4N)` combinations.
pub fn reconstruct_log_prior(
    field: &LogDerivativeField<'_>,
    family: &ModelFamily,
    theta: &[f64],
    theta0: &[f64],
    steps: usize,
) -> Result<Reconstruction> {
    let n = family.dim();
    if theta.len() != n || theta0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: if theta.len() != n { theta.len() } else { theta0.len() },
        });
    }
    if steps == 0 {
        return Err(Error::Config("path needs at least one step".into()));
    }
    let total = 4 * steps;
    let at = |k: usize| -> Vec<f64> {
        let s = k as f64 / total as f64;
        theta0.iter().zip(theta).map(|(a, b)| a + s * (b - a)).collect()
    };
    for k in 0..=total {
        let p = at(k);
        if !family.contains(&p) {
            return Err(Error::PathExitsDomain(p));
        }
    }

    let closedness = closedness_at(field, family, &at(total / 2))?;
    if closedness > CLOSEDNESS_TOL {
        return Err(Error::NonClosedField(closedness));
    }

    let dir: Vec<f64> = theta0.iter().zip(theta).map(|(a, b)| b - a).collect();
    let mut integrand = Vec::with_capacity(total + 1);
    for k in 0..=total {
        let v = field(&at(k))?;
        integrand.push(v.iter().zip(&dir).map(|(x, d)| x * d).sum::<f64>());
    }
    let trapezoid = |stride: usize| -> f64 {
        let m = total / stride;
        let mut s = 0.5 * (integrand[0] + integrand[total]);
        for k in 1..m {
            s += integrand[k * stride];
        }
        s / m as f64
    };
    let (t1, t2, t4) = (trapezoid(4), trapezoid(2), trapezoid(1));
    let s1 = (4.0 * t2 - t1) / 3.0;
    let s2 = (4.0 * t4 - t2) / 3.0;
    Ok(Reconstruction {
        value: s2,
        refinement_gap: (s2 - s1).abs(),
        closedness,
        steps,
    })
}

fn closedness_at(field: &LogDerivativeField<'_>, family: &ModelFamily, theta: &[f64]) -> Result<f64> {
    let n = theta.len();
    if n < 2 {
        return Ok(0.0);
    }
    let reach = family.domain().boundary_distance(theta);
    let h_max = theta.iter().fold(0.0, |m: f64, &t| m.max(fd::scaled_step(PRIOR_FD_STEP, t)));
    let base = if reach >= 2.0 * h_max {
        PRIOR_FD_STEP
    } else {
        PRIOR_FD_STEP * reach / (2.0 * h_max)
    };
    let rows = fd::jacobian_rows(&|t: &[f64]| field(t), theta, base)?;
    let mut r: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            r = r.max((rows[i][j] - rows[j][i]).abs());
        }
    }
    Ok(r)
}

/// `‖∂_i log cov − Γʲ_{ji}‖∞` with the closed-form covolume differentiated
/// numerically and the contraction taken from the analytic connection.
pub fn parallelity_residual(label: GeometryLabel, family: &ModelFamily, theta: &[f64]) -> Result<f64> {
    let structure = family.flat_structure();
    covolume_exponent(label, structure)?;
    family.check_domain(theta)?;
    let h_max = theta.iter().fold(0.0, |m: f64, &t| m.max(fd::scaled_step(PRIOR_FD_STEP, t)));
    ensure_reach(family.domain(), theta, h_max)?;
    let f = |t: &[f64]| closed_form_covolume(label, structure, family, t);
    let numeric = fd::gradient(&f, theta, PRIOR_FD_STEP)?;
    let contraction = log_derivative_from_connection(label, family, theta)?;
    Ok(numeric
        .iter()
        .zip(&contraction)
        .fold(0.0, |m: f64, (a, b)| m.max((a - b).abs())))
}

/// A prior known through its log-derivative field.
#[derive(Clone)]
pub struct CovolumeField {
    pub label: PriorLabel,
    pub family: ModelFamily,
    pub reference: Vec<f64>,
    derivative: Arc<dyn Fn(&ModelFamily, &[f64]) -> Result<Vec<f64>> + Send + Sync>,
}

impl CovolumeField {
    pub fn new(label: PriorLabel, family: &ModelFamily) -> Result<Self> {
        let derivative: Arc<dyn Fn(&ModelFamily, &[f64]) -> Result<Vec<f64>> + Send + Sync> = match label {
            PriorLabel::Geometry(g) => {
                g.validate()?;
                Arc::new(move |f, t| log_derivative_from_connection(g, f, t))
            }
            PriorLabel::Hartigan(a) => Arc::new(move |f, t| hartigan_log_derivative(f, a, t)),
        };
        Ok(Self {
            label,
            family: family.clone(),
            reference: family.anchor().to_vec(),
            derivative,
        })
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Result<Self> {
        self.family.check_domain(&reference)?;
        self.reference = reference;
        Ok(self)
    }

    pub fn family_structure(&self) -> FlatStructure {
        self.family.flat_structure()
    }

    pub fn log_derivative(&self, theta: &[f64]) -> Result<Vec<f64>> {
        (self.derivative)(&self.family, theta)
    }

    pub fn reconstruct(&self, theta: &[f64], steps: usize) -> Result<Reconstruction> {
        let field = |t: &[f64]| self.log_derivative(t);
        reconstruct_log_prior(&field, &self.family, theta, &self.reference, steps)
    }

    /// Anchored log-value by path reconstruction.
    pub fn log_value(&self, theta: &[f64]) -> Result<f64> {
        Ok(self.reconstruct(theta, DEFAULT_PATH_STEPS)?.value)
    }
}

/// `constant + slope·ρ`, the form a covolume exponent takes as a function
/// of the Rényi order. All coefficients that arise are dyadic, so equality
/// of forms is exact.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineInRho {
    pub constant: f64,
    pub slope: f64,
}

impl AffineInRho {
    pub const RHO: AffineInRho = AffineInRho { constant: 0.0, slope: 1.0 };

    pub fn new(constant: f64, slope: f64) -> Self {
        Self { constant, slope }
    }

    pub fn eval(&self, rho: f64) -> f64 {
        self.constant + self.slope * rho
    }

    /// `1 − self`: the exponent on the mixture chart.
    pub fn complement(&self) -> Self {
        Self::new(1.0 - self.constant, -self.slope)
    }

    /// `(1 − α)/2` for `α = self`.
    pub fn alpha_exponent(&self) -> Self {
        Self::new(0.5 * (1.0 - self.constant), -0.5 * self.slope)
    }

    /// `(1 + α)/2` for `α = self`.
    pub fn alpha_dual_exponent(&self) -> Self {
        Self::new(0.5 * (1.0 + self.constant), 0.5 * self.slope)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub rho: f64,
    pub e_family: String,
    pub m_family: String,
    /// `(det F)` exponents of `cov_e^(ρ)`, `cov_e^(ρ*)`, `cov_m^(ρ)`,
    /// `cov_m^(ρ*)` as forms in `ρ`.
    pub rho_e: AffineInRho,
    pub rho_dual_e: AffineInRho,
    pub rho_m: AffineInRho,
    pub rho_dual_m: AffineInRho,
    /// `cov_e^(ρ*) = cov_m^(ρ)` and `cov_e^(ρ) = cov_m^(ρ*)` as forms.
    pub duality_holds: bool,
    /// `α = 1 − 2ρ`, i.e. `ρ = (1−α)/2`.
    pub alpha_map: AffineInRho,
    pub alpha: f64,
    pub alpha_e: AffineInRho,
    pub alpha_dual_e: AffineInRho,
    /// Rényi and α exponents agree as forms on 𝒫ₑ under `α = 1 − 2ρ`.
    pub reparam_holds: bool,
    /// The alternative map `ρ = (1+α)/2`, i.e. `α = 2ρ − 1`.
    pub alternative_map: AffineInRho,
    pub alternative_alpha_e: AffineInRho,
    /// Forms agree under the alternative map.
    pub alternative_map_holds: bool,
    /// Values agree under the alternative map at this `ρ` (only at `ρ = ½`).
    pub alternative_map_holds_at_rho: bool,
    /// Evaluated exponents `[cov_e^(ρ), cov_e^(ρ*), cov_m^(ρ), cov_m^(ρ*)]`.
    pub values: [f64; 4],
    /// `(n/2) log ρ`, reported apart from the exponents.
    pub log_conformal_prefactor: f64,
    pub n: usize,
}

/// Exponent bookkeeping between the Rényi covolumes on an exponential chart
/// and a mixture chart, and their α-covolume counterparts.
pub fn duality_and_reparam_report(e_family: &ModelFamily, m_family: &ModelFamily, rho: f64) -> Result<DualityReport> {
    GeometryLabel::Rho(rho).validate()?;
    if e_family.flat_structure() != FlatStructure::ExponentialFlat {
        return Err(Error::StructureMismatch(format!("`{}` is not exponential-flat", e_family.name())));
    }
    if m_family.flat_structure() != FlatStructure::MixtureFlat {
        return Err(Error::StructureMismatch(format!("`{}` is not mixture-flat", m_family.name())));
    }
    if e_family.dim() != m_family.dim() {
        return Err(Error::StructureMismatch("charts have different dimensions".into()));
    }
    let rho_e = AffineInRho::RHO;
    let rho_dual_e = AffineInRho::RHO.complement();
    let rho_m = rho_e.complement();
    let rho_dual_m = rho_dual_e.complement();
    // The forms must agree with the numeric exponents used elsewhere.
    let ef = FlatStructure::ExponentialFlat;
    let mf = FlatStructure::MixtureFlat;
    let values = [
        covolume_exponent(GeometryLabel::Rho(rho), ef)?,
        covolume_exponent(GeometryLabel::RhoDual(rho), ef)?,
        covolume_exponent(GeometryLabel::Rho(rho), mf)?,
        covolume_exponent(GeometryLabel::RhoDual(rho), mf)?,
    ];
    debug_assert!([rho_e, rho_dual_e, rho_m, rho_dual_m]
        .iter()
        .zip(values)
        .all(|(f, v)| (f.eval(rho) - v).abs() <= 1e-15 * v.abs().max(1.0)));

    let alpha_map = AffineInRho::new(1.0, -2.0);
    let alpha_e = alpha_map.alpha_exponent();
    let alpha_dual_e = alpha_map.alpha_dual_exponent();
    let alternative_map = AffineInRho::new(-1.0, 2.0);
    let alternative_alpha_e = alternative_map.alpha_exponent();
    let n = e_family.dim();
    Ok(DualityReport {
        rho,
        e_family: e_family.name().into(),
        m_family: m_family.name().into(),
        rho_e,
        rho_dual_e,
        rho_m,
        rho_dual_m,
        duality_holds: rho_dual_e == rho_m && rho_e == rho_dual_m,
        alpha_map,
        alpha: alpha_map.eval(rho),
        alpha_e,
        alpha_dual_e,
        reparam_holds: rho_e == alpha_e && rho_dual_e == alpha_dual_e,
        alternative_map,
        alternative_alpha_e,
        alternative_map_holds: rho_e == alternative_alpha_e,
        alternative_map_holds_at_rho: rho_e.eval(rho) == alternative_alpha_e.eval(rho),
        values,
        log_conformal_prefactor: log_conformal_prefactor(GeometryLabel::Rho(rho), n),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    #[test]
    fn jeffreys_anchored_value() {
        let coin = builtin("bernoulli-mean").unwrap();
        let v = closed_form_covolume(GeometryLabel::LC, FlatStructure::MixtureFlat, &coin, &[0.3]).unwrap();
        let oracle = 0.5 * (1.0f64 / 0.21).ln() - 0.5 * 4f64.ln();
        assert!((oracle - 0.0871766935723889).abs() < 1e-9);
        assert!((v - oracle).abs() < 1e-12, "{v}");
    }

    #[test]
    fn structure_is_checked() {
        let coin = builtin("bernoulli-mean").unwrap();
        assert!(matches!(
            closed_form_covolume(GeometryLabel::LC, FlatStructure::ExponentialFlat, &coin, &[0.3]),
            Err(Error::StructureMismatch(_))
        ));
        let ls = builtin("gaussian-loc-scale").unwrap();
        assert!(matches!(
            closed_form_covolume(GeometryLabel::LC, FlatStructure::Generic, &ls, &[0.0, 1.5]),
            Err(Error::StructureMismatch(_))
        ));
    }

    #[test]
    fn kl_dual_is_uniform_on_natural_chart() {
        let nat = builtin("bernoulli-natural").unwrap();
        let v = closed_form_covolume(GeometryLabel::RhoDual(1.0), FlatStructure::ExponentialFlat, &nat, &[1.3]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn connection_contraction_oracle() {
        let coin = builtin("bernoulli-mean").unwrap();
        let v = log_derivative_from_connection(GeometryLabel::Rho(0.4), &coin, &[0.3]).unwrap()[0];
        let oracle: f64 = 0.21 * (0.4 - 1.0) * (1.0 / 0.09 - 1.0 / 0.49);
        assert!((oracle + 1.142857142857).abs() < 1e-9);
        assert!((v - oracle).abs() < 1e-8);
        let m = log_derivative_from_connection(GeometryLabel::Rho(1.0), &coin, &[0.3]).unwrap()[0];
        assert!(m.abs() < 1e-8);
    }

    #[test]
    fn hartigan_matches_rho() {
        let coin = builtin("bernoulli-mean").unwrap();
        assert!(hartigan_log_derivative(&coin, 1.0, &[0.3]).unwrap()[0].abs() < 1e-8);
        for rho in [0.25, 0.5, 0.9] {
            let h = hartigan_log_derivative(&coin, rho, &[0.35]).unwrap()[0];
            let r = log_derivative_from_connection(GeometryLabel::Rho(rho), &coin, &[0.35]).unwrap()[0];
            assert!((h - r).abs() < 1e-8);
        }
        let g = builtin("gaussian-loc").unwrap();
        assert!(hartigan_log_derivative(&g, 0.0, &[0.3]).unwrap()[0].abs() < 1e-12);
        assert!(outside_renyi(1.0) && outside_renyi(-0.2) && !outside_renyi(0.4));
    }

    #[test]
    fn reconstruction_matches_closed_form() {
        let nat = builtin("bernoulli-natural").unwrap();
        let rho = 0.7;
        let field = CovolumeField::new(PriorLabel::Geometry(GeometryLabel::Rho(rho)), &nat).unwrap();
        let r = field.reconstruct(&[1.2], DEFAULT_PATH_STEPS).unwrap();
        let cf = closed_form_covolume(GeometryLabel::Rho(rho), FlatStructure::ExponentialFlat, &nat, &[1.2]).unwrap();
        assert!((r.value - cf).abs() < 1e-6);
        assert!(r.refinement_gap < 1e-8);

        let coin = builtin("bernoulli-mean").unwrap();
        let h = CovolumeField::new(PriorLabel::Hartigan(0.5), &coin).unwrap();
        let jeff = closed_form_covolume(GeometryLabel::LC, FlatStructure::MixtureFlat, &coin, &[0.3]).unwrap();
        assert!((h.log_value(&[0.3]).unwrap() - jeff).abs() < 1e-6);

        let zero = |_: &[f64]| Ok(vec![0.0]);
        assert_eq!(reconstruct_log_prior(&zero, &coin, &[0.3], &[0.5], 8).unwrap().value, 0.0);
    }

    #[test]
    fn path_and_closedness_errors() {
        let coin = builtin("bernoulli-mean").unwrap();
        let f = |_: &[f64]| Ok(vec![0.0]);
        assert!(matches!(
            reconstruct_log_prior(&f, &coin, &[1.5], &[0.5], 8),
            Err(Error::PathExitsDomain(_))
        ));
        let ls = builtin("gaussian-loc-scale").unwrap();
        // v = (−y, x) has curl 2
        let rot = |t: &[f64]| Ok(vec![-t[1], t[0]]);
        assert!(matches!(
            reconstruct_log_prior(&rot, &ls, &[0.5, 1.5], &[0.0, 1.0], 8),
            Err(Error::NonClosedField(_))
        ));
    }

    #[test]
    fn parallelity() {
        let nat = builtin("bernoulli-natural").unwrap();
        for label in [GeometryLabel::Rho(0.7), GeometryLabel::RhoDual(0.7), GeometryLabel::LC] {
            for t in [-1.0, 0.3, 2.0] {
                assert!(parallelity_residual(label, &nat, &[t]).unwrap() <= 1e-5);
            }
        }
        let coin = builtin("bernoulli-mean").unwrap();
        assert!(parallelity_residual(GeometryLabel::Rho(0.7), &coin, &[0.3]).unwrap() <= 1e-5);
    }

    #[test]
    fn duality_report() {
        let nat = builtin("bernoulli-natural").unwrap();
        let coin = builtin("bernoulli-mean").unwrap();
        for rho in [0.1, 0.25, 0.3, 0.7, 2.0] {
            let r = duality_and_reparam_report(&nat, &coin, rho).unwrap();
            assert!(r.duality_holds && r.reparam_holds, "{rho}");
            assert!(!r.alternative_map_holds && !r.alternative_map_holds_at_rho);
            assert_eq!(r.values[0], rho);
            assert_eq!(r.alpha_e.eval(rho), rho);
        }
        let one = duality_and_reparam_report(&nat, &coin, 1.0).unwrap();
        assert_eq!((one.alpha, one.values[0]), (-1.0, 1.0));
        let half = duality_and_reparam_report(&nat, &coin, 0.5).unwrap();
        assert!(half.alternative_map_holds_at_rho && !half.alternative_map_holds);
        assert!((half.log_conformal_prefactor - 0.5 * 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            duality_and_reparam_report(&coin, &nat, 0.5),
            Err(Error::StructureMismatch(_))
        ));
    }
}
