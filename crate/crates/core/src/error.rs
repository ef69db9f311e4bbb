use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-posed moments: {0}")]
    IllPosedMoments(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate leverage: h[{index}] = {leverage}")]
    DegenerateLeverage { index: usize, leverage: f64 },

    #[error("undefined denominator: {0}")]
    UndefinedDenominator(String),

    #[error("rejection sampling starved: {accepted} accepted of {proposed} (rate {rate:.3e})")]
    RejectionStarvation {
        accepted: usize,
        proposed: usize,
        rate: f64,
    },

    #[error("no posterior support: every log-likelihood is -inf")]
    NoPosteriorSupport,

    #[error("undefined weights: every model evidence is zero")]
    UndefinedWeights,

    #[error("singular covariance at output {0}")]
    SingularCovariance(usize),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("model failure: {0}")]
    ModelFailure(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
