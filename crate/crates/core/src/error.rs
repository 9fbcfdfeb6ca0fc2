use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,
    #[error("domain mismatch: expected size {expected}, found {found}")]
    DomainMismatch { expected: usize, found: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("rule `{rule}` does not accept samples of size {size}")]
    RejectedSampleSize { rule: String, size: usize },
    #[error("enumeration budget exceeded: {required} sample outcomes required, budget is {budget}")]
    BudgetExceeded { required: u128, budget: u128 },
    #[error("degenerate pivot {0:e}")]
    Degenerate(f64),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("output error: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;
