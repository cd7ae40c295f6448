//! Federated rounds over prototype or weight exchange, with optional
//! Gaussian perturbation and threshold-Paillier secure aggregation.

pub mod client;
pub mod config;
mod error;
pub mod experiment;
pub mod message;
pub mod metrics;
pub mod server;
pub mod transport;

pub use client::{ClientState, LocalOutcome, LocalPlan, LossMeans};
pub use config::{Aggregation, CryptoConfig, ExperimentConfig, Method, ModelConfig, TransportKind};
pub use error::{FedError, Result};
pub use experiment::{run_experiment, Experiment};
pub use message::RoundMessage;
pub use metrics::{MetricsRow, MetricsTable};
pub use server::{average_weights, ServerState};
pub use transport::{MemoryTransport, Meter, Peer, TcpTransport, Transport};
