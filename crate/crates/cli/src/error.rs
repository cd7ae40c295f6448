use std::path::PathBuf;

use fedph_federation::{FedError, Method};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Core(#[from] fedph_core::Error),
    #[error(transparent)]
    Crypto(#[from] fedph_crypto::CryptoError),
    #[error("{method} seed {seed}: {source}")]
    Run {
        method: Method,
        seed: u64,
        #[source]
        source: FedError,
    },
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }

    pub(crate) fn run(method: Method, seed: u64) -> impl FnOnce(FedError) -> Self {
        move |source| Self::Run { method, seed, source }
    }

    /// Short stable identifier of the failure class.
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Io { .. } => "io",
            Self::Config { .. } => "config",
            Self::Argument(_) => "argument",
            Self::Csv(_) => "csv",
            Self::Core(_) => "core",
            Self::Crypto(_) => "crypto",
            Self::Run { source, .. } => match source.root() {
                FedError::ModelHeterogeneity(_) => "model_heterogeneity",
                FedError::MissingUpdate { .. } => "missing_update",
                FedError::Config(_) => "config",
                FedError::Transport(_) => "transport",
                FedError::Crypto(_) => "crypto",
                _ => "run",
            },
        }
    }

    /// One-line JSON record for the `error:` line the binary prints.
    pub fn record(&self, command: &str) -> ErrorRecord {
        let (method, seed, round) = match self {
            Self::Run { method, seed, source } => {
                let round = match source {
                    FedError::Round { round, .. } | FedError::MissingUpdate { round, .. } => Some(*round),
                    _ => None,
                };
                (Some(method.name()), Some(*seed), round)
            }
            _ => (None, None, None),
        };
        ErrorRecord { command: command.to_string(), kind: self.kind(), method, seed, round, message: self.to_string() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub command: String,
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    pub message: String,
}

impl ErrorRecord {
    pub fn line(&self) -> String {
        format!("error: {}", serde_json::to_string(self).unwrap_or_else(|_| format!("{:?}", self.message)))
    }
}
