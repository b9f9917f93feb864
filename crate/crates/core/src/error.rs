use thiserror::Error;

/// Errors raised while loading, designing, fitting or simulating paired experiments.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("line {line}: missing value in column `{column}`")]
    MissingValue { line: u64, column: String },

    #[error("pair {pair}: {message}")]
    PairViolation { pair: i64, message: String },

    #[error("expected {expected} covariates, found {found} (line {line})")]
    DimensionMismatch {
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("transform produced a non-finite value in column `{column}` for pair {pair}")]
    NonFiniteTransform { column: String, pair: usize },

    #[error("need more than {required} pairs, found {n}")]
    TooFewPairs { n: usize, required: usize },

    #[error(
        "{n} observations cannot identify {params} parameters with residual degrees of freedom"
    )]
    Underdetermined { n: usize, params: usize },

    #[error("design is rank deficient: numerical rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("intercept variance denominator e'(I-H)e = {value:e} is degenerate for n = {n}")]
    DegenerateDenominator { value: f64, n: usize },

    #[error("observation {index} has leverage {leverage} (too close to one)")]
    LeverageOne { index: usize, leverage: f64 },

    #[error("expected an R2 estimate, got {0}")]
    WrongEstimator(String),

    #[error("alpha must lie in (0, 1], got {0}")]
    BadAlpha(f64),

    #[error("exact enumeration over {n} pairs exceeds the cap of {cap}")]
    TooLarge { n: usize, cap: usize },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
