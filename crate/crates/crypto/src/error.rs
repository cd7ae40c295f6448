use thiserror::Error;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("no safe prime of {bits} bits found after {candidates} candidates")]
    PrimeTimeout { bits: u64, candidates: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("plaintext outside [0, N)")]
    PlaintextOutOfRange,

    #[error("ciphertext outside the unit group mod N^2")]
    InvalidCiphertext,

    #[error("threshold unmet: {needed} distinct shares needed, {got} supplied")]
    ThresholdUnmet { needed: usize, got: usize },

    #[error("share combination failed: {0}")]
    CombineFailed(String),

    #[error("key material does not belong to this public key")]
    KeyMismatch,

    #[error("value {value} exceeds the encodable bound {bound}")]
    ValueOutOfRange { value: f64, bound: f64 },

    #[error("decoded magnitude {magnitude:e} exceeds {bound:e}; the plaintext wrapped around")]
    Wraparound { magnitude: f64, bound: f64 },

    #[error("coordinate {index}: {source}")]
    Coordinate {
        index: usize,
        #[source]
        source: Box<CryptoError>,
    },

    #[error("malformed encoding: {0}")]
    Decode(String),
}

impl CryptoError {
    pub(crate) fn at(index: usize) -> impl FnOnce(CryptoError) -> CryptoError {
        move |e| CryptoError::Coordinate { index, source: Box::new(e) }
    }
}

pub type Result<T, E = CryptoError> = std::result::Result<T, E>;
