use thiserror::Error;

/// Errors raised by problem evaluation, slab iteration and the adaptive loop.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rhs overflow at t = {t}, component {index}")]
    RhsOverflow { t: f64, index: usize },

    #[error("jacobian overflow at t = {t}, entry ({row}, {col})")]
    JacobianOverflow { t: f64, row: usize, col: usize },

    #[error("t = {t} outside covered range [{begin}, {end}]")]
    OutOfRange { t: f64, begin: f64, end: f64 },

    #[error("iteration overflow in slab {slab} (t = {t})")]
    IterationOverflow { slab: usize, t: f64 },

    #[error("unable to stabilize at t = {t}: step {step:e} below floor {floor:e} (last rate estimate {rate:e})")]
    UnableToStabilize { t: f64, step: f64, floor: f64, rate: f64 },

    #[error("dual blow-up at t = {t}")]
    DualBlowUp { t: f64 },

    #[error("oracle failure at t = {t}: Newton did not converge")]
    OracleFailure { t: f64 },

    #[error("trace parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
