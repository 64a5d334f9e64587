use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// `h(t) = exp(lh(t))` does not fit in an `f64`.
    #[error("h({t}) overflows: lh({t}) = {lh} is outside the f64 exponent range")]
    Overflow { t: f64, lh: f64 },

    #[error("t = {t} is outside the valid interval [{lo}, {hi}] of the growth rate")]
    OutsideValidInterval { t: f64, lo: f64, hi: f64 },

    /// A mu-value has no preimage inside the valid interval.
    #[error("mu = {mu} is outside the invertible range [{lo}, {hi}]")]
    Range { mu: f64, lo: f64, hi: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("points belong to different growth rates")]
    IncompatibleRate,

    #[error("invalid interval: lower end mu = {lo} exceeds upper end mu = {hi}")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("quadrature did not converge after {subdivisions} subdivisions (last estimate {estimate:?})")]
    QuadratureFailure {
        estimate: Vec<f64>,
        subdivisions: usize,
    },

    #[error("cocycle audit failed: residual {residual:.3e} at (t, tau, s) = ({t}, {tau}, {s}) in mu-coordinates")]
    CocycleViolation {
        t: f64,
        tau: f64,
        s: f64,
        residual: f64,
    },

    #[error("step size underflow at mu = {x} (step {step:.3e}); the system is too stiff")]
    Stiffness { x: f64, step: f64 },

    #[error("degenerate family: ||U(t,s)|| = 0 at mu = ({t}, {s})")]
    DegenerateFamily { t: f64, s: f64 },

    #[error("restriction to the unstable range is not invertible (condition number {cond:.3e})")]
    RestrictedInversion { cond: f64 },

    #[error("no dichotomy: {0}")]
    NoDichotomy(String),

    #[error("no singular-value gap at mu = {mu}: singular values {singular_values:?}")]
    UndetectableSplitting { mu: f64, singular_values: Vec<f64> },

    #[error("the Green kernel is discontinuous on the diagonal t0 = s0")]
    Diagonal,

    #[error("empty grid")]
    EmptyGrid,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
