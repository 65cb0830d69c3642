use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at t = {t}: {context}")]
    NonFinite { t: f64, context: String },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("matrix is not Hurwitz: eigenvalue {re} + {im}i has nonnegative real part")]
    NotHurwitz { re: f64, im: f64 },

    #[error("singular configuration: {0}")]
    Singular(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("probe point outside surrogate domain: {0}")]
    OutsideDomain(String),

    #[error("gain eta = {eta} is not below the certified ceiling eta* = {eta_star} (gain condition violated)")]
    GainAboveCeiling { eta: f64, eta_star: f64 },

    #[error("gradient-error slope gamma = {gamma} is not below c0/c3 = {limit}: no exponential rate")]
    NoExponentialRate { gamma: f64, limit: f64 },

    #[error("certificate and trajectory describe different plant/cost instances ({0} vs {1})")]
    InstanceMismatch(String, String),

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("serialization: {0}")]
    Serialization(String),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize, context: &'static str) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context,
        }
    }
}
