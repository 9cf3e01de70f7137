use thiserror::Error;

/// Errors raised while building, simulating, or analyzing constrained designs.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("limited output channel {channel} has no relative degree within n = {n}")]
    NoRelativeDegree { channel: usize, n: usize },

    #[error("control sensitivity matrix is singular (condition number {cond:.3e})")]
    SingularHu { cond: f64 },

    #[error("polynomial root {root} is not strictly negative")]
    NonNegativeRoot { root: f64 },

    #[error("constraint box channel {channel}: min {min} must be below max {max}")]
    InvalidBox { channel: usize, min: f64, max: f64 },

    #[error("eigenvalue solver failed to converge")]
    EigenFailure,

    #[error("servo matrix [[A, B], [C_reg, D_reg]] is singular (transmission zero at the origin)")]
    SingularServoMatrix,

    #[error("closed-loop DC gain deviates from identity by {residual:.3e}")]
    DcGainMismatch { residual: f64 },

    #[error("pair (A, B) is not stabilizable")]
    NonStabilizable,

    #[error("Riccati iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    RiccatiNoConvergence { iterations: usize, residual: f64 },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:.6e})")]
    NotHurwitz { abscissa: f64 },

    #[error("integral gain K_I is singular")]
    SingularKI,

    #[error("closed-form and generic {what} disagree (relative error {error:.3e})")]
    BlockMismatch { what: &'static str, error: f64 },

    #[error("state became non-finite after step {last_finite_step}")]
    NonFiniteState { last_finite_step: usize },

    #[error("resolvent (jωI - A) is singular at ω = {omega}")]
    ResolventSingular { omega: f64 },

    #[error("activation enumeration over {channels} channels exceeds the cap of {cap}")]
    EnumerationCap { channels: usize, cap: usize },

    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dims(what: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            what,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
