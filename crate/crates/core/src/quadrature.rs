//! Expectations `∫ dμ(y) p_θ(y) f(y)` over the sample space of a family.
//!
//! Every expectation-based quantity in the crate goes through [`expect`] or
//! [`expect_vec`]. Rules are built per evaluation point: Gauss–Hermite nodes
//! on the real line are re-centred on the density's location and scale when
//! the family reports them, Gauss–Legendre nodes cover bounded intervals, and
//! discrete spaces are summed exactly (countable ones after truncation).
//!
//! The base measure is implied by the space: counting measure on finite and
//! countable spaces, Lebesgue measure on the real line and on intervals.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::{GaussHermite, GaussLegendre};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ModelFamily, PointEval};

pub const DEFAULT_ORDER: usize = 40;
pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// Environment variable overriding the default starting order.
pub const ORDER_ENV_VAR: &str = "IGEO_QUAD_ORDER";

/// Refinements may disagree by at most this multiple of the target tolerance.
const NON_CONVERGENCE_FACTOR: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadConfig {
    pub order: usize,
    pub target_rel_tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            order: DEFAULT_ORDER,
            target_rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl QuadConfig {
    /// Default configuration with the starting order taken from
    /// `IGEO_QUAD_ORDER` when it is set to a positive integer.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Some(order) = std::env::var(ORDER_ENV_VAR)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&o| o > 0)
        {
            cfg.order = order;
        }
        cfg
    }
}

/// How a countably infinite space is cut down to a finite index set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// `max(min_terms, ceil(mean + sd_multiplier · sd))` terms, using the
    /// location/scale the family reports at the evaluation point.
    Adaptive { min_terms: usize, sd_multiplier: f64 },
    Fixed(usize),
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation::Adaptive {
            min_terms: 50,
            sd_multiplier: 12.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SampleSpace {
    Finite { atoms: Vec<f64> },
    Countable { truncation: Truncation },
    /// The real line. `center`/`scale` is the fallback window used when the
    /// family does not report a location and scale.
    RealLine { center: f64, scale: f64 },
    Interval { lower: f64, upper: f64 },
}

impl SampleSpace {
    pub fn finite(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Config("finite sample space needs at least one atom".into()));
        }
        if atoms.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("finite sample space atoms must be finite".into()));
        }
        let mut sorted = atoms.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("finite sample space atoms must be distinct".into()));
        }
        Ok(SampleSpace::Finite { atoms })
    }

    pub fn countable(truncation: Truncation) -> Self {
        SampleSpace::Countable { truncation }
    }

    pub fn real_line() -> Self {
        SampleSpace::RealLine {
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Config(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(SampleSpace::Interval { lower, upper })
    }

    /// Data dimension. Only scalar data is supported.
    pub fn dimension(&self) -> usize {
        1
    }

    pub fn is_counting(&self) -> bool {
        matches!(self, SampleSpace::Finite { .. } | SampleSpace::Countable { .. })
    }
}

/// Location and scale of a density, used to place quadrature nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocationScale {
    pub location: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Layout {
    Atoms,
    Counting,
    Hermite { center: f64, scale: f64 },
    Legendre { lower: f64, upper: f64 },
}

/// Nodes with log-weights against the base measure, so that
/// `∫ dμ(y) g(y) ≈ Σ exp(log_weights[i]) g(nodes[i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub order: usize,
    pub target_rel_tol: f64,
    layout: Layout,
}

impl QuadratureRule {
    /// Builds the rule for `space` at starting `order`, placing nodes with
    /// `hint` where the layout uses one.
    pub fn build(
        space: &SampleSpace,
        hint: Option<LocationScale>,
        order: usize,
        target_rel_tol: f64,
    ) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("quadrature order must be positive".into()));
        }
        match space {
            SampleSpace::Finite { atoms } => Ok(Self {
                nodes: atoms.clone(),
                log_weights: vec![0.0; atoms.len()],
                order: atoms.len(),
                target_rel_tol,
                layout: Layout::Atoms,
            }),
            SampleSpace::Countable { truncation } => {
                let terms = match truncation {
                    Truncation::Fixed(n) => *n,
                    Truncation::Adaptive {
                        min_terms,
                        sd_multiplier,
                    } => {
                        let ls = hint.unwrap_or(LocationScale {
                            location: 0.0,
                            scale: 0.0,
                        });
                        let reach = (ls.location + sd_multiplier * ls.scale).ceil();
                        if !reach.is_finite() {
                            return Err(Error::Config("non-finite truncation point".into()));
                        }
                        (*min_terms).max(reach.max(0.0) as usize)
                    }
                };
                Ok(Self::counting(terms, target_rel_tol))
            }
            SampleSpace::RealLine { center, scale } => {
                let (center, scale) = match hint {
                    Some(ls) if ls.scale > 0.0 && ls.scale.is_finite() && ls.location.is_finite() => {
                        (ls.location, ls.scale)
                    }
                    _ => (*center, *scale),
                };
                Ok(Self::hermite(order, center, scale, target_rel_tol))
            }
            SampleSpace::Interval { lower, upper } => {
                Ok(Self::legendre(order, *lower, *upper, target_rel_tol))
            }
        }
    }

    fn counting(terms: usize, target_rel_tol: f64) -> Self {
        Self {
            nodes: (0..terms).map(|k| k as f64).collect(),
            log_weights: vec![0.0; terms],
            order: terms,
            target_rel_tol,
            layout: Layout::Counting,
        }
    }

    fn hermite(order: usize, center: f64, scale: f64, target_rel_tol: f64) -> Self {
        let base = standard_rule(RuleFamily::Hermite, order);
        let s = std::f64::consts::SQRT_2 * scale;
        let ln_s = s.ln();
        let nodes = base.0.iter().map(|x| center + s * x).collect();
        let log_weights = base
            .0
            .iter()
            .zip(base.1.iter())
            .map(|(x, w)| w.ln() + x * x + ln_s)
            .collect();
        Self {
            nodes,
            log_weights,
            order,
            target_rel_tol,
            layout: Layout::Hermite { center, scale },
        }
    }

    fn legendre(order: usize, lower: f64, upper: f64, target_rel_tol: f64) -> Self {
        let base = standard_rule(RuleFamily::Legendre, order);
        let half = 0.5 * (upper - lower);
        let mid = 0.5 * (upper + lower);
        Self {
            nodes: base.0.iter().map(|x| mid + half * x).collect(),
            log_weights: base.1.iter().map(|w| (w * half).ln()).collect(),
            order,
            target_rel_tol,
            layout: Layout::Legendre { lower, upper },
        }
    }

    /// The same layout at twice the order. Finite atom sets are exact and
    /// are returned unchanged.
    pub fn refine(&self) -> QuadratureRule {
        match self.layout {
            Layout::Atoms => self.clone(),
            Layout::Counting => Self::counting(2 * self.order, self.target_rel_tol),
            Layout::Hermite { center, scale } => {
                Self::hermite(2 * self.order, center, scale, self.target_rel_tol)
            }
            Layout::Legendre { lower, upper } => {
                Self::legendre(2 * self.order, lower, upper, self.target_rel_tol)
            }
        }
    }

    pub fn is_exact(&self) -> bool {
        self.layout == Layout::Atoms
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ exp(log_w + log_g(y)) f(y)` for an `m`-vector integrand, plus the
    /// matching sums of absolute terms (the scale used for convergence tests).
    pub fn weighted_sums<L, F>(&self, m: usize, log_g: L, mut f: F) -> (Vec<f64>, Vec<f64>)
    where
        L: Fn(f64) -> f64,
        F: FnMut(f64, &mut [f64]),
    {
        let mut acc = vec![NeumaierSum::default(); m];
        let mut mass = vec![NeumaierSum::default(); m];
        let mut buf = vec![0.0; m];
        for (&y, &lw) in self.nodes.iter().zip(self.log_weights.iter()) {
            let w = (lw + log_g(y)).exp();
            if w == 0.0 || !w.is_finite() {
                continue;
            }
            buf.iter_mut().for_each(|b| *b = 0.0);
            f(y, &mut buf);
            for k in 0..m {
                let term = w * buf[k];
                acc[k].add(term);
                mass[k].add(term.abs());
            }
        }
        (
            acc.iter().map(NeumaierSum::total).collect(),
            mass.iter().map(NeumaierSum::total).collect(),
        )
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum RuleFamily {
    Hermite,
    Legendre,
}

type StandardRule = Arc<(Vec<f64>, Vec<f64>)>;

fn standard_rule(kind: RuleFamily, order: usize) -> StandardRule {
    static CACHE: OnceLock<Mutex<HashMap<(RuleFamily, usize), StandardRule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().expect("rule cache poisoned").get(&(kind, order)) {
        return rule.clone();
    }
    let degree = NonZeroUsize::new(order).expect("order checked positive");
    let (nodes, weights): (Vec<f64>, Vec<f64>) = match kind {
        RuleFamily::Hermite => {
            let gh = GaussHermite::new(degree);
            (gh.nodes().copied().collect(), gh.weights().copied().collect())
        }
        RuleFamily::Legendre => {
            let gl = GaussLegendre::new(degree);
            (gl.nodes().copied().collect(), gl.weights().copied().collect())
        }
    };
    let rule = Arc::new((nodes, weights));
    cache
        .lock()
        .expect("rule cache poisoned")
        .insert((kind, order), rule.clone());
    rule
}

/// Compensated (Neumaier) summation in insertion order.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

/// The rule `expect` starts from for `family` at the prepared point.
pub fn rule_for(point: &PointEval<'_>) -> Result<QuadratureRule> {
    let cfg = point.family().quadrature();
    QuadratureRule::build(
        point.family().space(),
        point.location_scale(),
        cfg.order,
        cfg.target_rel_tol,
    )
}

/// Vector-valued expectation. `f(y, point, out)` fills `out` (length `m`)
/// with the integrand at sample `y`; `point` gives the density and its
/// derivatives at `theta`.
pub fn expect_vec<F>(family: &ModelFamily, theta: &[f64], m: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &PointEval<'_>, &mut [f64]),
{
    let point = family.point(theta)?;
    expect_vec_at(&point, m, f)
}

/// As [`expect_vec`], for an already prepared point.
pub fn expect_vec_at<F>(point: &PointEval<'_>, m: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64, &PointEval<'_>, &mut [f64]),
{
    let rule = rule_for(point)?;
    let log_g = |y: f64| point.log_density(y);
    let (coarse, _) = rule.weighted_sums(m, log_g, |y, out| f(y, point, out));
    if rule.is_exact() {
        return Ok(coarse);
    }
    let refined = rule.refine();
    let (fine, mass) = refined.weighted_sums(m, log_g, |y, out| f(y, point, out));
    for k in 0..m {
        let scale = mass[k].max(fine[k].abs());
        let gap = (fine[k] - coarse[k]).abs();
        if !fine[k].is_finite() || gap > NON_CONVERGENCE_FACTOR * rule.target_rel_tol * scale {
            return Err(Error::NonConvergent {
                order: rule.order,
                refined: refined.order,
                coarse: coarse[k],
                fine: fine[k],
            });
        }
    }
    Ok(fine)
}

/// `∫ dμ(y) p_θ(y) f(y)`.
pub fn expect<F>(family: &ModelFamily, theta: &[f64], f: F) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    expect_vec(family, theta, 1, |y, _, out| out[0] = f(y)).map(|v| v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::builtin;

    #[test]
    fn bernoulli_normalization() {
        let fam = builtin("bernoulli-mean").unwrap();
        let v = expect(&fam, &[0.3], |_| 1.0).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn gaussian_second_moment() {
        let fam = builtin("gaussian-loc").unwrap();
        let v = expect(&fam, &[0.0], |y| y * y).unwrap();
        assert!((v - 1.0).abs() < 1e-12, "{v}");
    }

    #[test]
    fn bernoulli_squared_score_is_fisher() {
        // exact two-term sum: 1/(p(1-p)) at p = 0.3
        let oracle = 0.3 * (1.0f64 / 0.3).powi(2) + 0.7 * (1.0f64 / 0.7).powi(2);
        assert!((oracle - 4.761904761904762).abs() < 1e-14);
        let fam = builtin("bernoulli-mean").unwrap();
        let v = expect_vec(&fam, &[0.3], 1, |y, pt, out| {
            let s = pt.score(y)[0];
            out[0] = s * s;
        })
        .unwrap()[0];
        assert!((v - oracle).abs() < 1e-12);
    }

    #[test]
    fn refine_doubles_order_and_keeps_normalization() {
        let space = SampleSpace::real_line();
        let rule = QuadratureRule::build(&space, None, 20, 1e-10).unwrap();
        let r2 = rule.refine();
        assert_eq!(r2.order, 40);
        assert_eq!(r2.len(), 40);
        // standard normal density against the Lebesgue rule
        let log_phi = |y: f64| -0.5 * y * y - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let (one, _) = r2.weighted_sums(1, log_phi, |_, o| o[0] = 1.0);
        assert!((one[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fourth_moment_refinement_gap() {
        let sigma = 1.7;
        let space = SampleSpace::real_line();
        let hint = Some(LocationScale {
            location: 0.4,
            scale: sigma,
        });
        let log_p = |y: f64| {
            let z = (y - 0.4) / sigma;
            -0.5 * z * z - (sigma * (2.0 * std::f64::consts::PI).sqrt()).ln()
        };
        let r20 = QuadratureRule::build(&space, hint, 20, 1e-10).unwrap();
        let r40 = r20.refine();
        let f = |y: f64, o: &mut [f64]| o[0] = (y - 0.4).powi(4);
        let (a, _) = r20.weighted_sums(1, log_p, f);
        let (b, _) = r40.weighted_sums(1, log_p, f);
        assert!((a[0] - b[0]).abs() <= 1e-10);
        assert!((b[0] - 3.0 * sigma.powi(4)).abs() < 1e-10 * 3.0 * sigma.powi(4));
    }

    #[test]
    fn finite_space_validation() {
        assert!(SampleSpace::finite(vec![]).is_err());
        assert!(SampleSpace::finite(vec![0.0, 1.0, 0.0]).is_err());
        assert!(SampleSpace::finite(vec![0.0, 1.0]).is_ok());
    }

    #[test]
    fn poisson_truncation_policy() {
        let space = SampleSpace::countable(Truncation::default());
        let small = QuadratureRule::build(
            &space,
            Some(LocationScale {
                location: 2.0,
                scale: 2f64.sqrt(),
            }),
            40,
            1e-10,
        )
        .unwrap();
        assert_eq!(small.len(), 50);
        let big = QuadratureRule::build(
            &space,
            Some(LocationScale {
                location: 100.0,
                scale: 10.0,
            }),
            40,
            1e-10,
        )
        .unwrap();
        assert_eq!(big.len(), 220);
    }

    #[test]
    fn finite_sum_is_bitwise_reproducible() {
        let fam = builtin("categorical-4").unwrap();
        let theta = [0.1, 0.2, 0.3];
        let a = expect(&fam, &theta, |y| (y + 0.1).sin()).unwrap();
        let b = expect(&fam, &theta, |y| (y + 0.1).sin()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn domain_error_propagates() {
        let fam = builtin("bernoulli-mean").unwrap();
        assert!(matches!(expect(&fam, &[1.2], |_| 1.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn neumaier_beats_naive_sum() {
        let mut s = NeumaierSum::default();
        for x in [1.0, 1e100, 1.0, -1e100] {
            s.add(x);
        }
        assert_eq!(s.total(), 2.0);
    }
}
