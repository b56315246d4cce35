//! Error type shared by the solver library.

use crate::trace::IterationTrace;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Grid construction or cross-grid mixing problems.
    #[error("grid error: {0}")]
    Grid(String),

    /// A state, field, or trajectory violates a structural invariant
    /// (non-finite entries, negative density, mismatched shapes, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A model or option combination that cannot be evaluated
    /// (Hartree term disabled, missing exchange-correlation block, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Time argument outside the span covered by a path.
    #[error("time {t} outside covered span [{lo}, {hi}]")]
    OutOfSpan { t: f64, lo: f64, hi: f64 },

    /// The model violates a positivity/boundedness assumption at run time.
    #[error("model violation: {0}")]
    ModelViolation(String),

    /// Inner linear solve (Helmholtz / Crank-Nicolson system) failed to reach
    /// the requested tolerance.
    #[error("linear solve stalled: residual {residual:.3e} after {iterations} iterations")]
    LinearSolve { residual: f64, iterations: usize },

    /// Analytic constants did not close (the propagator-bound / ball-radius
    /// fixed point diverged). Usually means the coupling is too strong for
    /// analytic-mode certification on this window.
    #[error("analytic constants diverged: {0}")]
    ConstantsDiverged(String),

    /// An outer iteration (Picard / Newton / truncated-Neumann Newton)
    /// stopped without meeting its target. Carries the recorded trace.
    #[error("{solver} did not converge: residual {residual:.3e} after {iterations} iterations")]
    NonConvergence {
        solver: &'static str,
        residual: f64,
        iterations: usize,
        trace: Box<IterationTrace>,
    },

    /// Newton start point violates the consistency condition ||S(u0)|| <= 1/sigma.
    #[error("Newton start rejected: residual {residual:.3e} exceeds 1/sigma = {limit:.3e}")]
    StartInconsistent { residual: f64, limit: f64 },

    /// The certified linearization bound is >= 1 on this window, so the
    /// Neumann/fixed-point inversion is not available.
    #[error("window too long: linearization bound {bound:.3e} >= 1")]
    WindowTooLong { bound: f64 },

    /// A diagnostic was asked for fewer data points than it needs.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
}
