use thiserror::Error;

/// Errors surfaced by the simulator library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("invalid CID: {0}")]
    InvalidCid(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("store corruption: content for {0} does not match its address")]
    StoreCorruption(String),

    #[error("node already registered: {0}")]
    DuplicateRegistration(String),

    #[error("unknown node: {0}")]
    UnknownNode(String),

    #[error("stake must be positive")]
    InvalidStake,

    #[error("round {0} already finalized")]
    AlreadyFinalized(u64),

    #[error("round {0} not finalized")]
    NotFinalized(u64),

    #[error("round {0} already distributed")]
    AlreadyDistributed(u64),

    #[error("slash amount {amount} exceeds stake {stake} of node {node_id}")]
    SlashExceedsStake {
        node_id: String,
        amount: i64,
        stake: i64,
    },

    #[error("digest leaves must be sorted by ascending node id")]
    UnsortedLeaves,

    #[error("verification mismatch: {0}")]
    VerifyMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
