use thiserror::Error;

use crate::model::Token;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("token {0} is not in the vocabulary")]
    InvalidToken(Token),

    #[error("unknown token name `{0}`")]
    UnknownTokenName(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("distribution has no finite mass")]
    DegenerateDistribution,

    #[error("every one-token extension of the prefix has zero mass")]
    DegenerateConditional,

    #[error("all particle weights are zero")]
    PopulationExtinct,

    #[error("instance has {states} states, above the enumeration cap of {cap}")]
    InstanceTooLarge { states: u128, cap: u64 },

    #[error("distributions do not share a support: {0}")]
    SupportMismatch(String),

    #[error("no table row for context {context} and no default row")]
    MissingContext { context: String },

    #[error("model file line {line}: {message}")]
    Parse { line: usize, message: String },
}
