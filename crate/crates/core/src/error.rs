use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("theta = {theta} lies outside the parameter domain [{lo}, {hi}]")]
    Domain { theta: f64, lo: f64, hi: f64 },

    #[error("outcome index {index} out of range (|Y| = {size})")]
    Outcome { index: usize, size: usize },

    #[error("family `{0}` has no registered sufficient statistic")]
    UnsupportedReduction(String),

    #[error("operation not supported for family `{family}`: {reason}")]
    Unsupported { family: String, reason: String },

    #[error("Fisher information is negative ({value}) at theta = {theta}")]
    NegativeFisher { theta: f64, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("marginal vanishes on outcome {outcome} which a positive-weight row supports")]
    DegenerateMarginal { outcome: usize },

    #[error("accumulator became non-finite at outcome {outcome}")]
    NonFiniteAccumulator { outcome: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("channel matrix: {0}")]
    Matrix(String),

    #[error("Lipschitz estimate {beta} requires N = {required:e} samples, above the cap {cap}")]
    Infeasible { beta: f64, required: f64, cap: u64 },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
