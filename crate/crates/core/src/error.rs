use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node {node} is out of range for a network with {n} nodes")]
    InvalidNode { node: usize, n: usize },

    #[error("self-loop on node {0}")]
    SelfLoop(usize),

    #[error("preferential attachment infeasible at node {step}: {eligible} eligible targets, {needed} needed")]
    AttachmentInfeasible {
        step: usize,
        eligible: usize,
        needed: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("data does not match the model: {0}")]
    Mismatch(String),

    #[error("local assignment does not cover node {0}")]
    IncompleteAssignment(usize),

    #[error("neighborhood of node {node} has {size} members, above the enumeration cap {cap}")]
    EnumerationCap { node: usize, size: usize, cap: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty input: {0}")]
    Empty(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
