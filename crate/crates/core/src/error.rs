use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("coordinate out of range: lng {lng}, lat {lat}")]
    CoordinateOutOfRange { lng: f64, lat: f64 },
    #[error("invalid object {id}: {reason}")]
    InvalidObject { id: String, reason: &'static str },
    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: &'static str },
    #[error("gold not in candidates for query {query}")]
    GoldNotInCandidates { query: String },
    #[error("dangling reference to {id}")]
    DanglingReference { id: String },
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
    #[error("shape mismatch: expected {expected}")]
    ShapeMismatch { expected: &'static str },
    #[error("degenerate map bounds")]
    DegenerateBounds,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
    #[error("sequence of length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("{family} code {code} outside vocabulary of {size}")]
    CodeOutOfRange {
        family: &'static str,
        code: usize,
        size: usize,
    },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("input is not a strictly positive probability distribution")]
    NotADistribution,
    #[error("batch of {0} is too small (need at least 2)")]
    BatchTooSmall(usize),
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("parameter {name} has no gradient")]
    MissingGradient { name: String },
    #[error("unknown parameter {name}")]
    UnknownParameter { name: String },
    #[error("parameter {name} has shape mismatch")]
    ParameterShape { name: String },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("cross-encoder cannot run retrieval over the full pool")]
    CrossHeadRetrieval,
    #[error("missing geographic context for {id}")]
    MissingGc { id: String },
    #[error("infeasible benchmark spec: {0}")]
    InfeasibleSpec(&'static str),
}
