use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("a graph needs at least one area")]
    EmptyGraph,
    #[error("area index {index} out of range for {n} areas")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("self-loop on area {0}")]
    SelfLoop(usize),
    #[error("area {0} has no neighbours")]
    IsolatedArea(usize),

    #[error("{name} = {value} is outside its admissible range {range}")]
    ParameterOutOfRange {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("scale parameter kappa[{index}] = {value} must be positive")]
    NonPositiveKappa { index: usize, value: f64 },
    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },
    #[error("dense inversion requested for n = {n}, above the configured cap of {cap}")]
    TooLargeForDenseInverse { n: usize, cap: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("offset for area {index} is {value}; offsets must be positive")]
    NonPositiveOffset { index: usize, value: f64 },
    #[error("total population is zero")]
    ZeroPopulation,

    #[error("gradient unavailable: target density is not finite at this point")]
    GradientUnavailable,
    #[error("chain {chain}: no finite starting point after {attempts} attempts")]
    InitializationFailure { chain: usize, attempts: usize },
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
    #[error("mask selects no cells")]
    EmptyMask,
    #[error("model has no kappa parameters")]
    KappaAbsent,
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("unknown model tag `{0}`")]
    UnknownModel(String),
}
