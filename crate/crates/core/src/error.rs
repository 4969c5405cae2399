use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("edge list is empty")]
    EmptyEdgeList,
    #[error("root `{0}` does not appear in the edge list")]
    UnknownRoot(String),
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("node `{0}` is not connected to the root")]
    DisconnectedNode(String),
    #[error("link {parent} -> {child} has non-positive delay {delay}")]
    NonPositiveDelay {
        parent: String,
        child: String,
        delay: f64,
    },
    #[error("duplicate edge {parent} -> {child}")]
    DuplicateEdge { parent: String, child: String },
    #[error("node `{0}` has more than one parent")]
    MultipleParents(String),
    #[error("invariant violated: a tree needs at least 2 leaves, found {0}")]
    TooFewLeaves(usize),
    #[error("duplicate leaf label `{0}`")]
    DuplicateLeafLabel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("topology space over {leaves} leaves exceeds the enumeration limit of {limit}")]
    SpaceTooLarge { leaves: usize, limit: usize },
    #[error("leaf sets differ")]
    LeafSetMismatch,
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("negative entry {value} at position {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("vector is not tree-realizable: triple ({0}, {1}, {2}) violates the three-point condition")]
    NotRealizable(String, String, String),

    #[error("non-finite output")]
    NonFiniteOutput,
    #[error("objective is not finite at the evaluation point")]
    NonFiniteValue,
    #[error("{leaves} leaves do not fit a one-hot encoding of width {dim}")]
    LeafCountExceedsDim { leaves: usize, dim: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("topology space is empty")]
    EmptySpace,
    #[error("topology is not a member of the topology space")]
    NotInSpace,
    #[error("training objective diverged at iteration {0}")]
    DivergedObjective(usize),

    #[error("posterior support is empty")]
    EmptySupport,
    #[error("MCMC chain produced {0} consecutive invalid proposals")]
    ChainDiverged(usize),

    #[error("topology space of size {0} is too small (need at least 2)")]
    SpaceTooSmall(usize),
    #[error("premise violated: beta {beta} exceeds log2|space| = {limit}")]
    PremiseViolated { beta: f64, limit: f64 },

    #[error("no fake topology distinct from the truth after {0} attempts")]
    NoCandidate(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("in cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io(_) | Error::DivergedObjective(_) | Error::ChainDiverged(_) => false,
            Error::NonFiniteOutput | Error::NonFiniteValue => false,
            Error::Cell { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
