use thiserror::Error;

/// Errors produced by the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RcrError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown variable {0}")]
    UnknownVariable(usize),

    #[error("invalid evidence: {0}")]
    Evidence(String),

    #[error("constraint {0} is already recovered")]
    AlreadyRecovered(usize),

    #[error("unknown constraint {0}")]
    UnknownConstraint(usize),

    #[error("constraint {0} is degenerate: every state has zero marginal")]
    DegenerateConstraint(usize),

    #[error("constraint {constraint} is not decoupled: original and clone share a component, use the binary update")]
    NotDecoupled { constraint: usize },

    #[error("state space of {states} assignments exceeds the enumeration guard of {limit}")]
    StateSpaceTooLarge { states: f64, limit: u64 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, RcrError>;
