use thiserror::Error;

/// Errors raised while building or evaluating agent models.
///
/// Agent numbers in messages are 1-based.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("coupling graph needs at least one agent")]
    EmptyGraph,
    #[error("agent {agent} out of range (n = {n})")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("state of agent {agent} missing (joint state holds {available} agents)")]
    MissingState { agent: usize, available: usize },
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("agent {agent} has no barrier function")]
    NoBarrier { agent: usize },
    #[error("agent {agent}'s input does not enter the constraint of agent {owner}")]
    NotCoupled { agent: usize, owner: usize },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("active-set iteration cap ({0}) exceeded")]
    MaxIterations(usize),
    #[error("malformed problem: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("local problem of agent {agent} is infeasible")]
    LocalInfeasible { agent: usize },
    #[error("centralized problem is infeasible (violating rows {rows:?})")]
    Infeasible { rows: Vec<usize> },
    #[error("agent {agent} has zero safety weight; relatedness undefined")]
    ZeroWeight { agent: usize },
    #[error("degenerate row: |a_22| = {0:e} below 1e-12")]
    DegenerateRow(f64),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("at t = {time}: {source}")]
    Solve { time: f64, source: SolveError },
    #[error("non-finite state at t = {time} (agent {agent})")]
    NonFinite { time: f64, agent: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation config: {0}")]
    Config(String),
}
