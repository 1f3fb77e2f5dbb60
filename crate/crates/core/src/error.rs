//! Error type shared by every protocol layer.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("modulus {0} is not an odd prime below 2^63")]
    InvalidModulus(u64),

    #[error("value {value} out of range for modulus {modulus}")]
    OutOfRange { value: u64, modulus: u64 },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("shares belong to the same party")]
    SameParty,

    #[error("share belongs to party {actual}, expected party {expected}")]
    WrongParty { expected: usize, actual: usize },

    #[error("beaver triples exhausted: requested {requested}, remaining {remaining}")]
    TriplesExhausted { requested: usize, remaining: usize },

    #[error("re-masking pad for party {0} already consumed this round")]
    MaskReuse(usize),

    #[error("headroom violation: {0}")]
    Headroom(String),

    #[error("mac key is for round {key_round}, batch is from round {batch_round}")]
    KeyRoundMismatch { key_round: u64, batch_round: u64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite input at index {0}")]
    NonFinite(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("no trusted updates: every trust weight is zero")]
    NoTrustedUpdates,

    #[error("bundle mismatch: {0}")]
    BundleMismatch(String),

    #[error("invalid tamper position {position} for a batch of {len}")]
    InvalidPosition { position: usize, len: usize },

    #[error("malformed encoding: {0}")]
    Malformed(String),
}
