//! Error type shared by every operation in the crate.

use thiserror::Error;

/// Errors produced by metric construction, duality solves, and the
/// discrete operators built on top of them.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A argument violated a documented precondition (dimension mismatch,
    /// empty sample set, unsupported dimension, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The metric data does not define a strongly convex Finsler norm
    /// (non-SPD matrix, Randers drift with norm >= 1, ...).
    #[error("metric is not a strongly convex Finsler structure: {0}")]
    MetricInvalid(String),

    /// An operation that differentiates along the fibre was asked to work
    /// at v = 0 (or omega = 0), where the square of the norm is not C^2.
    #[error("degenerate direction: the requested derivative is undefined at the zero vector")]
    DegenerateDirection,

    /// A diffeomorphism used for a pullback failed its consistency checks
    /// (forward/inverse mismatch or singular Jacobian at a sample point).
    #[error("pullback diffeomorphism is degenerate: {0}")]
    PullbackDegenerate(String),

    /// An iterative solve (Legendre inversion, chart minimization) did not
    /// reach its tolerance within the iteration budget.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// A linear solve met a matrix that is singular or too ill-conditioned
    /// to trust at the requested tolerance.
    #[error("ill-conditioned linear system: {0}")]
    IllConditioned(String),

    /// An operation that is only meaningful for Berwald metrics was called
    /// on a metric whose Berwald test failed.
    #[error("metric is not Berwald: max nonlinearity residual {residual:.3e} exceeds {tol:.3e}")]
    NotBerwald { residual: f64, tol: f64 },

    /// Chart certification failed: no neighbourhood of the origin satisfied
    /// the Jacobian determinant threshold.
    #[error("chart is degenerate: {0}")]
    ChartDegenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
