use crate::simnet::PartyId;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("key size {0} is not supported: must be even and at least 64 bits")]
    InvalidKeyBits(usize),

    #[error("invalid prime injection: {0}")]
    InvalidPrimes(String),

    #[error("plaintext {0} is outside the encodable range (-n/2, n/2)")]
    PlaintextOutOfRange(String),

    #[error("ciphertext was produced under a different public key")]
    KeyMismatch,

    #[error("invalid ciphertext: {0}")]
    InvalidCiphertext(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid decision tree: {0}")]
    InvalidTree(String),

    #[error("record is missing a class label")]
    MissingLabel,

    #[error("protocol requires at least one driver")]
    NoDrivers,

    #[error("share {share} exceeds the per-share bound for {drivers} drivers")]
    ShareBound { share: u64, drivers: u64 },

    #[error("ragged share table: driver {driver} supplied {got} shares, expected {expected}")]
    RaggedShareTable {
        driver: u32,
        got: usize,
        expected: usize,
    },

    #[error("invalid ring order: {0}")]
    InvalidRingOrder(String),

    #[error("party {0} is not registered on the network")]
    UnknownParty(PartyId),

    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    #[error("malformed message payload: {0}")]
    MalformedMessage(String),

    #[error("digit count mismatch: path set carries {expected} digits, vector has {got}")]
    DigitCountMismatch { expected: usize, got: usize },

    #[error("invalid generator config: {0}")]
    InvalidGenConfig(String),

    #[error("invalid experiment spec: {0}")]
    InvalidExperiment(String),

    #[error("{count} aggressive paths cannot fit a tree over {attributes} attributes")]
    InfeasiblePathCount { count: usize, attributes: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
