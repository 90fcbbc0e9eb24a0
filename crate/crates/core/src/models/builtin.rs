//! The built-in families.

use std::sync::{Arc, OnceLock};

use super::{Domain, DensityKernel, FlatStructure, ModelFamily, PointDensity, DOMAIN_MARGIN};
use crate::error::{Error, Result};
use crate::quadrature::{LocationScale, SampleSpace, Truncation};

pub const BUILTIN_NAMES: &[&str] = &[
    "bernoulli-mean",
    "bernoulli-natural",
    "categorical-k",
    "gaussian-loc",
    "gaussian-loc-scale",
    "poisson-natural",
];

/// Upper bound on the Poisson natural parameter (rate ≤ 10⁴) keeping the
/// truncated sum to about 11 200 terms.
const POISSON_MAX_LOG_RATE: f64 = 9.210340371976184;

/// Instantiates a built-in family.
///
/// Accepted names: `bernoulli-mean`, `bernoulli-natural`, `categorical-<k>`
/// (k ≥ 2), `gaussian-loc` (σ = 1) or `gaussian-loc:sigma=<σ>`,
/// `gaussian-loc-scale`, `poisson-natural`.
pub fn builtin(name: &str) -> Result<ModelFamily> {
    let unknown = || Error::UnknownFamily(name.to_string());
    match name {
        "bernoulli-mean" => ModelFamily::new(
            name,
            coin(),
            Domain::interval(DOMAIN_MARGIN, 1.0 - DOMAIN_MARGIN)?,
            FlatStructure::MixtureFlat,
            vec![0.5],
            Arc::new(BernoulliMean),
        ),
        "bernoulli-natural" => ModelFamily::new(
            name,
            coin(),
            Domain::unbounded(1),
            FlatStructure::ExponentialFlat,
            vec![0.0],
            Arc::new(BernoulliNatural),
        ),
        "gaussian-loc" => gaussian_loc(1.0),
        "gaussian-loc-scale" => ModelFamily::new(
            name,
            SampleSpace::real_line(),
            Domain::boxed(vec![f64::NEG_INFINITY, DOMAIN_MARGIN], vec![f64::INFINITY, f64::INFINITY])?,
            FlatStructure::Generic,
            vec![0.0, 1.0],
            Arc::new(GaussianLocScale),
        ),
        "poisson-natural" => ModelFamily::new(
            name,
            SampleSpace::countable(Truncation::default()),
            Domain::interval(f64::NEG_INFINITY, POISSON_MAX_LOG_RATE)?,
            FlatStructure::ExponentialFlat,
            vec![0.0],
            Arc::new(PoissonNatural),
        ),
        _ => {
            if let Some(k) = name.strip_prefix("categorical-") {
                let k: usize = k.parse().map_err(|_| unknown())?;
                if k < 2 {
                    return Err(unknown());
                }
                return ModelFamily::new(
                    name,
                    SampleSpace::finite((0..k).map(|i| i as f64).collect())?,
                    Domain::simplex(k - 1, DOMAIN_MARGIN),
                    FlatStructure::MixtureFlat,
                    vec![1.0 / k as f64; k - 1],
                    Arc::new(Categorical { k }),
                );
            }
            if let Some(s) = name.strip_prefix("gaussian-loc:sigma=") {
                let sigma: f64 = s.parse().map_err(|_| unknown())?;
                return gaussian_loc(sigma).map(|f| f.with_name(name));
            }
            Err(unknown())
        }
    }
}

/// Gaussian location family with fixed standard deviation `sigma`.
pub fn gaussian_loc(sigma: f64) -> Result<ModelFamily> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    ModelFamily::new(
        "gaussian-loc",
        SampleSpace::real_line(),
        Domain::unbounded(1),
        FlatStructure::ExponentialFlat,
        vec![0.0],
        Arc::new(GaussianLoc { sigma }),
    )
}

fn coin() -> SampleSpace {
    SampleSpace::Finite {
        atoms: vec![0.0, 1.0],
    }
}

fn ln_sqrt_2pi() -> f64 {
    0.5 * (2.0 * std::f64::consts::PI).ln()
}

struct BernoulliMean;

struct BernoulliMeanAt {
    p: f64,
}

impl DensityKernel for BernoulliMean {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(BernoulliMeanAt { p: theta[0] }))
    }
}

impl PointDensity for BernoulliMeanAt {
    fn log_density(&self, y: f64) -> f64 {
        if y == 1.0 {
            self.p.ln()
        } else {
            (1.0 - self.p).ln()
        }
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        Some(vec![if y == 1.0 { 1.0 / self.p } else { -1.0 / (1.0 - self.p) }])
    }

    fn log_hessian(&self, y: f64) -> Option<Vec<f64>> {
        Some(vec![if y == 1.0 {
            -1.0 / (self.p * self.p)
        } else {
            -1.0 / ((1.0 - self.p) * (1.0 - self.p))
        }])
    }
}

struct BernoulliNatural;

struct BernoulliNaturalAt {
    theta: f64,
    /// log(1 + e^θ)
    log_partition: f64,
    mean: f64,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl DensityKernel for BernoulliNatural {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        let t = theta[0];
        Ok(Box::new(BernoulliNaturalAt {
            theta: t,
            log_partition: softplus(t),
            mean: 1.0 / (1.0 + (-t).exp()),
        }))
    }
}

impl PointDensity for BernoulliNaturalAt {
    fn log_density(&self, y: f64) -> f64 {
        y * self.theta - self.log_partition
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        Some(vec![y - self.mean])
    }

    fn log_hessian(&self, _y: f64) -> Option<Vec<f64>> {
        Some(vec![-self.mean * (1.0 - self.mean)])
    }
}

/// Categorical distribution on `{0, …, k-1}` in mean coordinates
/// `η = (p_0, …, p_{k-2})`; the last probability is `1 − Σ η`.
struct Categorical {
    k: usize,
}

struct CategoricalAt {
    probs: Vec<f64>,
}

impl DensityKernel for Categorical {
    fn dim(&self) -> usize {
        self.k - 1
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        let mut probs = theta.to_vec();
        probs.push(1.0 - theta.iter().sum::<f64>());
        Ok(Box::new(CategoricalAt { probs }))
    }
}

impl CategoricalAt {
    fn index(&self, y: f64) -> usize {
        (y.round().max(0.0) as usize).min(self.probs.len() - 1)
    }
}

impl PointDensity for CategoricalAt {
    fn log_density(&self, y: f64) -> f64 {
        self.probs[self.index(y)].ln()
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        let n = self.probs.len() - 1;
        let idx = self.index(y);
        let mut s = vec![0.0; n];
        if idx == n {
            s.iter_mut().for_each(|v| *v = -1.0 / self.probs[n]);
        } else {
            s[idx] = 1.0 / self.probs[idx];
        }
        Some(s)
    }

    fn log_hessian(&self, y: f64) -> Option<Vec<f64>> {
        let n = self.probs.len() - 1;
        let idx = self.index(y);
        let mut h = vec![0.0; n * n];
        if idx == n {
            let v = -1.0 / (self.probs[n] * self.probs[n]);
            h.iter_mut().for_each(|x| *x = v);
        } else {
            h[idx * n + idx] = -1.0 / (self.probs[idx] * self.probs[idx]);
        }
        Some(h)
    }
}

struct GaussianLoc {
    sigma: f64,
}

struct GaussianLocAt {
    mu: f64,
    sigma: f64,
}

impl DensityKernel for GaussianLoc {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(GaussianLocAt {
            mu: theta[0],
            sigma: self.sigma,
        }))
    }
}

impl PointDensity for GaussianLocAt {
    fn log_density(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - ln_sqrt_2pi()
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        Some(vec![(y - self.mu) / (self.sigma * self.sigma)])
    }

    fn log_hessian(&self, _y: f64) -> Option<Vec<f64>> {
        Some(vec![-1.0 / (self.sigma * self.sigma)])
    }

    fn location_scale(&self) -> Option<LocationScale> {
        Some(LocationScale {
            location: self.mu,
            scale: self.sigma,
        })
    }
}

/// Gaussian in `(μ, σ)`.
struct GaussianLocScale;

struct GaussianLocScaleAt {
    mu: f64,
    sigma: f64,
}

impl DensityKernel for GaussianLocScale {
    fn dim(&self) -> usize {
        2
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(GaussianLocScaleAt {
            mu: theta[0],
            sigma: theta[1],
        }))
    }
}

impl PointDensity for GaussianLocScaleAt {
    fn log_density(&self, y: f64) -> f64 {
        let z = (y - self.mu) / self.sigma;
        -0.5 * z * z - self.sigma.ln() - ln_sqrt_2pi()
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        let d = y - self.mu;
        let s2 = self.sigma * self.sigma;
        Some(vec![d / s2, -1.0 / self.sigma + d * d / (s2 * self.sigma)])
    }

    fn log_hessian(&self, y: f64) -> Option<Vec<f64>> {
        let d = y - self.mu;
        let s2 = self.sigma * self.sigma;
        let mixed = -2.0 * d / (s2 * self.sigma);
        Some(vec![-1.0 / s2, mixed, mixed, 1.0 / s2 - 3.0 * d * d / (s2 * s2)])
    }

    fn location_scale(&self) -> Option<LocationScale> {
        Some(LocationScale {
            location: self.mu,
            scale: self.sigma,
        })
    }
}

/// Poisson in the natural parameter `θ = log λ`.
struct PoissonNatural;

struct PoissonNaturalAt {
    theta: f64,
    rate: f64,
}

impl DensityKernel for PoissonNatural {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, theta: &[f64]) -> Result<Box<dyn PointDensity>> {
        Ok(Box::new(PoissonNaturalAt {
            theta: theta[0],
            rate: theta[0].exp(),
        }))
    }
}

impl PointDensity for PoissonNaturalAt {
    fn log_density(&self, y: f64) -> f64 {
        y * self.theta - self.rate - ln_factorial(y as usize)
    }

    fn score(&self, y: f64) -> Option<Vec<f64>> {
        Some(vec![y - self.rate])
    }

    fn log_hessian(&self, _y: f64) -> Option<Vec<f64>> {
        Some(vec![-self.rate])
    }

    fn location_scale(&self) -> Option<LocationScale> {
        Some(LocationScale {
            location: self.rate,
            scale: self.rate.sqrt(),
        })
    }
}

const LN_FACTORIAL_TABLE: usize = 1 << 16;

/// `ln k!`, tabulated by running sums.
fn ln_factorial(k: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACTORIAL_TABLE);
        let mut acc = crate::quadrature::NeumaierSum::default();
        t.push(0.0);
        for i in 1..LN_FACTORIAL_TABLE {
            acc.add((i as f64).ln());
            t.push(acc.total());
        }
        t
    });
    if k < LN_FACTORIAL_TABLE {
        table[k]
    } else {
        // Stirling series beyond the table.
        let n = k as f64;
        n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
            - 1.0 / (360.0 * n * n * n)
    }
}
