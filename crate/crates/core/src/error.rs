use thiserror::Error;

/// Errors raised by the geometry engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter point {theta:?} is outside the domain of `{family}`")]
    Domain { family: String, theta: Vec<f64> },

    #[error("quadrature did not converge: order {order} gave {coarse}, order {refined} gave {fine}")]
    NonConvergent {
        order: usize,
        refined: usize,
        coarse: f64,
        fine: f64,
    },

    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("sufficient statistics are degenerate (condition number {condition:e})")]
    DegenerateStatistics { condition: f64 },

    #[error("normalization failed: {0}")]
    NormalizationFailure(String),

    #[error("negative density {value:e} at node y = {node} for parameter {theta:?}")]
    NegativeDensity {
        node: f64,
        theta: Vec<f64>,
        value: f64,
    },

    #[error("invalid order: {0}")]
    InvalidOrder(String),

    #[error("inner integral is non-positive ({0:e})")]
    IntegralNonPositive(f64),

    #[error("finite-difference stencil of half-width {reach:e} leaves the domain at {theta:?}")]
    StepTooLarge { theta: Vec<f64>, reach: f64 },

    #[error("matrix is not positive definite at {theta:?}")]
    NotPositiveDefinite { theta: Vec<f64> },

    #[error("family structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("reconstruction path leaves the domain at {0:?}")]
    PathExitsDomain(Vec<f64>),

    #[error("log-derivative field is not closed (residual {0:e})")]
    NonClosedField(f64),

    #[error("cross-check `{what}` failed: residual {residual:e} exceeds {tolerance:e}")]
    CrossCheck {
        what: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
