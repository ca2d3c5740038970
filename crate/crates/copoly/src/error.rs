use thiserror::Error;

/// Errors produced by model construction and the numerical kernels.
///
/// Variants are split between input validation (bad parameters, sizes
/// inconsistent with a law's period or truncation) and runtime limits
/// (combinatorial caps, DP budgets, indeterminate searches). The CLI maps
/// the former to usage errors and the latter to computational failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tail exponent alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),

    #[error("truncation n_max = {n_max} is too small: {reason}")]
    TruncationTooSmall { n_max: usize, reason: &'static str },

    #[error("size {0} is odd, but the law has period 2 (odd sites carry no mass)")]
    OddSizeForPeriodTwo(usize),

    #[error("size {n} exceeds the law truncation n_max = {n_max}")]
    BeyondTruncation { n: usize, n_max: usize },

    #[error("pinning strength xi = {0} outside [0, 1]")]
    XiOutOfRange(f64),

    #[error("fractional exponent gamma = {0} outside the open interval (0, 1)")]
    GammaOutOfRange(f64),

    #[error("asymptotic ratio unsupported for alpha = {0} (only 0 < alpha <= 1)")]
    UnsupportedAlpha(f64),

    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),

    #[error("index range [{a}, {b}] invalid for a sample of length {n}")]
    IndexOutOfRange { a: usize, b: usize, n: usize },

    #[error("series with exponent {0} <= 1 diverges")]
    DivergentSeries(f64),

    #[error("block enumeration over {n_blocks} blocks exceeds the cap of {cap}")]
    EnumerationCap { n_blocks: usize, cap: usize },

    #[error("block configuration inconsistent with the system: {0}")]
    BadBlockConfig(String),

    #[error("block scale k = {k} exceeds the DP budget {budget}")]
    ResourceLimit { k: usize, budget: usize },

    #[error("conditioning on a null event: u({0}) = 0")]
    NullConditioning(usize),

    #[error("detection threshold {threshold} not above the working-size stderr {stderr}")]
    ThresholdTooSmall { threshold: f64, stderr: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed binary sample file: {0}")]
    BadSampleFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True when the error reflects invalid input rather than a runtime
    /// resource or convergence failure. The CLI uses this to pick exit codes.
    pub fn is_usage(&self) -> bool {
        !matches!(
            self,
            Error::ResourceLimit { .. } | Error::EnumerationCap { .. } | Error::Io(_)
        )
    }
}
