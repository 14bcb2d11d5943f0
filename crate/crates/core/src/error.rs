use thiserror::Error;

/// Violated operator precondition.
///
/// These gate the guaranteed parameter range. Most of them can be bypassed with
/// [`OperatorSpec::allow_unsafe`](crate::operators::OperatorSpec::allow_unsafe);
/// the non-finite, non-positive `omega`/`tau` and negative `alpha` checks cannot.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParameterError {
    #[error("{name} must be finite (got {value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("alpha must be >= 0 (got alpha={alpha})")]
    NegativeAlpha { alpha: f64 },
    #[error("omega must be > 0 (got omega={omega})")]
    OmegaNotPositive { omega: f64 },
    #[error("omega ≥ 2/(1+gamma) = {upper:.3} (got omega={omega}, gamma={gamma})")]
    OmegaAboveRange { omega: f64, gamma: f64, upper: f64 },
    #[error("alpha must be < omega (alpha={alpha}, omega={omega})")]
    AlphaNotBelowOmega { alpha: f64, omega: f64 },
    #[error("omega - alpha = {gap:e} is below the minimum margin {margin:e}")]
    MarginTooSmall { gap: f64, margin: f64 },
    #[error("{variant} requires 0 <= alpha < 1 (got alpha={alpha}); pass the unsafe flag to explore beyond")]
    AlphaAboveOne { variant: &'static str, alpha: f64 },
    #[error("tau must be > 0 (got tau={tau})")]
    TauNotPositive { tau: f64 },
    #[error("requires omega < 1 (got omega={omega})")]
    OmegaNotBelowOne { omega: f64 },
    #[error("epsilon must be >= 0 (got {epsilon})")]
    NegativeEpsilon { epsilon: f64 },
    #[error("tolerance must be > 0 (got {tol})")]
    Tolerance { tol: f64 },
    #[error("k_max must be >= 1")]
    ZeroIterations,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("discount gamma={0} outside [0, 1)")]
    Discount(f64),
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("branching={branching} must lie in 1..={n_states}")]
    Branching { branching: usize, n_states: usize },
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite Q value at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("value iteration residual {residual:e} still above tol {tol:e} after {iterations} iterations")]
    NotConverged { tol: f64, iterations: usize, residual: f64 },
    #[error("policy evaluation residual {residual:e} exceeds {limit:e}")]
    PolicyEvaluation { residual: f64, limit: f64 },
    #[error(transparent)]
    Parameter(#[from] ParameterError),
    #[error("iteration diverged at k={k}: ||Q||={norm:e} exceeds guard {limit:e}")]
    Divergence { k: usize, norm: f64, limit: f64 },
    #[error("B aggregate needs {0}")]
    Aggregate(&'static str),
    #[error("MDP document: {0}")]
    Document(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
