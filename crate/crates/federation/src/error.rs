use fedph_crypto::CryptoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Core(#[from] fedph_core::Error),

    #[error(transparent)]
    Crypto(#[from] CryptoError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model heterogeneity: {0}")]
    ModelHeterogeneity(String),

    #[error("codec: {0}")]
    Codec(String),

    #[error("transport: {0}")]
    Transport(String),

    #[error("round {round}: no update from client {client}")]
    MissingUpdate { round: u32, client: u32 },

    #[error("unexpected message: {0}")]
    Protocol(String),

    #[error("round {round}, {peer}: {source}")]
    Round {
        round: u32,
        peer: String,
        #[source]
        source: Box<FedError>,
    },
}

impl FedError {
    pub(crate) fn in_round(round: u32, peer: impl Into<String>) -> impl FnOnce(FedError) -> FedError {
        let peer = peer.into();
        move |e| match e {
            e @ FedError::Round { .. } => e,
            e => FedError::Round { round, peer, source: Box::new(e) },
        }
    }

    /// The innermost error, skipping round context.
    pub fn root(&self) -> &FedError {
        match self {
            FedError::Round { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T, E = FedError> = std::result::Result<T, E>;
