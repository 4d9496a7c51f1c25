use crate::graph::NodeId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid extrinsics: {0}")]
    InvalidExtrinsics(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("class id {class_id} out of range for a class table of size {k}")]
    ClassOutOfRange { class_id: u32, k: usize },

    #[error("node {0} does not exist")]
    MissingNode(NodeId),

    #[error("node id {0} already present")]
    DuplicateNode(NodeId),

    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),

    #[error("descriptor parameters differ: query (R={query_r}, k={query_k}) vs database (R={db_r}, k={db_k})")]
    DescriptorMismatch {
        query_r: usize,
        query_k: usize,
        db_r: usize,
        db_k: usize,
    },

    #[error("vector groups differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("timestamp {got} does not exceed previous timestamp {previous}")]
    OutOfOrder { previous: f64, got: f64 },

    #[error("no extrinsics loaded for this session")]
    MissingExtrinsics,

    #[error("not enough context: {0}")]
    NotEnoughContext(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("trajectory leaves world bounds at ({x:.3}, {y:.3})")]
    OutOfBounds { x: f64, y: f64 },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by malformed input data rather than usage or
    /// internal faults.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Invariant(_) | Error::InvalidConfig(_))
    }
}
