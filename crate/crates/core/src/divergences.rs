//! KL, α-, Rényi and Bhattacharyya divergences between two members of one
//! family.
//!
//! All four are computed as expectations under `p_θ` with the integrand in
//! log space, `exp(c · (log p_θ′ − log p_θ))`. The Rényi value is the
//! logarithm of its quadrature integral. The α-divergence admits every real
//! `α` except `±1`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ModelFamily;
use crate::quadrature::expect_vec_at;

/// Non-negativity and identity tolerance.
pub const TOL_DIV: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "order", rename_all = "kebab-case")]
pub enum DivergenceSpec {
    Kl,
    Alpha(f64),
    Renyi(f64),
    Bhattacharyya,
}

impl DivergenceSpec {
    pub fn alpha(alpha: f64) -> Result<Self> {
        let s = DivergenceSpec::Alpha(alpha);
        s.validate()?;
        Ok(s)
    }

    pub fn renyi(rho: f64) -> Result<Self> {
        let s = DivergenceSpec::Renyi(rho);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DivergenceSpec::Alpha(a) if !a.is_finite() || a == 1.0 || a == -1.0 => Err(
                Error::InvalidOrder(format!("alpha-divergence needs alpha outside {{-1, 1}}, got {a}")),
            ),
            DivergenceSpec::Renyi(r) if !(r.is_finite() && r > 0.0) || r == 1.0 => Err(
                Error::InvalidOrder(format!("Renyi divergence needs rho > 0 and rho != 1, got {r}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DivergenceSpec::Kl => "kl",
            DivergenceSpec::Alpha(_) => "alpha",
            DivergenceSpec::Renyi(_) => "renyi",
            DivergenceSpec::Bhattacharyya => "bhattacharyya",
        }
    }

    pub fn order(&self) -> Option<f64> {
        match *self {
            DivergenceSpec::Alpha(a) => Some(a),
            DivergenceSpec::Renyi(r) => Some(r),
            _ => None,
        }
    }
}

impl fmt::Display for DivergenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.order() {
            Some(o) => write!(f, "{}({o})", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// `D[θ : θ′]`.
pub fn divergence(spec: DivergenceSpec, family: &ModelFamily, theta: &[f64], theta_p: &[f64]) -> Result<f64> {
    spec.validate()?;
    let p = family.point(theta)?;
    let q = family.point(theta_p)?;
    // log p′ − log p at y
    let ratio = |y: f64| q.log_density(y) - p.log_density(y);
    match spec {
        DivergenceSpec::Kl => expect_vec_at(&p, 1, |y, _, o| o[0] = -ratio(y)).map(|v| v[0]),
        DivergenceSpec::Alpha(alpha) => {
            let c = 0.5 * (1.0 + alpha);
            let i = expect_vec_at(&p, 1, |y, _, o| o[0] = (c * ratio(y)).exp())?[0];
            Ok(4.0 / (1.0 - alpha * alpha) * (1.0 - i))
        }
        DivergenceSpec::Renyi(rho) => {
            let i = expect_vec_at(&p, 1, |y, _, o| o[0] = ((1.0 - rho) * ratio(y)).exp())?[0];
            if !(i > 0.0) {
                return Err(Error::IntegralNonPositive(i));
            }
            Ok(i.ln() / (rho - 1.0))
        }
        DivergenceSpec::Bhattacharyya => {
            let i = expect_vec_at(&p, 1, |y, _, o| o[0] = (0.5 * ratio(y)).exp())?[0];
            if !(i > 0.0) {
                return Err(Error::IntegralNonPositive(i));
            }
            Ok(-2.0 * i.ln())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitRow {
    pub eps: f64,
    pub rho: f64,
    pub renyi: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitTable {
    pub kl: f64,
    /// Rows for `ρ = 1 + ε` then `ρ = 1 − ε` (when `1 − ε > 0`), each in the
    /// order of `eps_list`.
    pub rows: Vec<LimitRow>,
    /// Discrepancies are non-increasing (1e-9 slack) as `ε` shrinks, on each
    /// side of 1.
    pub monotone: bool,
}

/// `|D_ρ − D_KL|` for `ρ = 1 ± ε`, `ε ∈ eps_list`.
pub fn renyi_kl_limit_check(
    family: &ModelFamily,
    theta: &[f64],
    theta_p: &[f64],
    eps_list: &[f64],
) -> Result<LimitTable> {
    if eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidOrder("limit offsets must be positive".into()));
    }
    let kl = divergence(DivergenceSpec::Kl, family, theta, theta_p)?;
    let mut rows = Vec::new();
    let mut monotone = true;
    for sign in [1.0, -1.0] {
        let mut side: Vec<(f64, LimitRow)> = Vec::new();
        for &eps in eps_list {
            let rho = 1.0 + sign * eps;
            if rho <= 0.0 {
                continue;
            }
            let renyi = divergence(DivergenceSpec::Renyi(rho), family, theta, theta_p)?;
            side.push((
                eps,
                LimitRow {
                    eps,
                    rho,
                    renyi,
                    discrepancy: (renyi - kl).abs(),
                },
            ));
        }
        let mut sorted: Vec<&(f64, LimitRow)> = side.iter().collect();
        sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
        monotone &= sorted
            .windows(2)
            .all(|w| w[1].1.discrepancy <= w[0].1.discrepancy + 1e-9);
        rows.extend(side.into_iter().map(|(_, r)| r));
    }
    Ok(LimitTable { kl, rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    #[test]
    fn kl_identity_and_gaussian_closed_form() {
        let coin = builtin("bernoulli-mean").unwrap();
        assert_eq!(divergence(DivergenceSpec::Kl, &coin, &[0.5], &[0.5]).unwrap(), 0.0);
        let g = builtin("gaussian-loc").unwrap();
        let d = divergence(DivergenceSpec::Kl, &g, &[0.0], &[1.0]).unwrap();
        assert!((d - 0.5).abs() < 1e-12, "{d}");
    }

    #[test]
    fn bernoulli_kl_two_term_sum() {
        let (p, q): (f64, f64) = (0.3, 0.6);
        let oracle = p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln();
        let coin = builtin("bernoulli-mean").unwrap();
        let d = divergence(DivergenceSpec::Kl, &coin, &[p], &[q]).unwrap();
        assert!((d - oracle).abs() < 1e-15);
    }

    #[test]
    fn renyi_half_is_bhattacharyya() {
        for (name, a, b) in [
            ("bernoulli-mean", vec![0.3], vec![0.6]),
            ("gaussian-loc-scale", vec![0.2, 1.1], vec![-0.4, 0.8]),
            ("poisson-natural", vec![0.5], vec![1.5]),
        ] {
            let fam = builtin(name).unwrap();
            let r = divergence(DivergenceSpec::Renyi(0.5), &fam, &a, &b).unwrap();
            let bh = divergence(DivergenceSpec::Bhattacharyya, &fam, &a, &b).unwrap();
            assert!((r - bh).abs() < 1e-10, "{name}");
        }
    }

    #[test]
    fn gaussian_renyi_closed_form() {
        let g = builtin("gaussian-loc").unwrap();
        for rho in [0.3, 0.9, 1.1, 2.0] {
            let d = divergence(DivergenceSpec::Renyi(rho), &g, &[0.0], &[1.0]).unwrap();
            assert!((d - rho / 2.0).abs() < 1e-10, "{rho}: {d}");
        }
    }

    #[test]
    fn invalid_orders() {
        let coin = builtin("bernoulli-mean").unwrap();
        for spec in [
            DivergenceSpec::Alpha(1.0),
            DivergenceSpec::Alpha(-1.0),
            DivergenceSpec::Renyi(1.0),
            DivergenceSpec::Renyi(0.0),
            DivergenceSpec::Renyi(-0.5),
        ] {
            assert!(matches!(
                divergence(spec, &coin, &[0.3], &[0.4]),
                Err(Error::InvalidOrder(_))
            ));
        }
    }

    #[test]
    fn limit_table_for_bernoulli() {
        let coin = builtin("bernoulli-mean").unwrap();
        let t = renyi_kl_limit_check(&coin, &[0.3], &[0.6], &[0.1, 0.01, 0.001]).unwrap();
        assert!(t.monotone);
        assert_eq!(t.rows.len(), 6);
        let same = renyi_kl_limit_check(&coin, &[0.3], &[0.3], &[0.1, 0.01]).unwrap();
        assert!(same.rows.iter().all(|r| r.discrepancy < 1e-10));
    }

    #[test]
    fn spec_serde_round_trip() {
        let s = DivergenceSpec::Renyi(0.25);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<DivergenceSpec>(&text).unwrap(), s);
    }
}
