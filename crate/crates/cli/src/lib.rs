//! Experiment harness: config files, metrics CSVs, the crypto benchmark and
//! the privacy sweep behind the `fedph` binary.

pub mod bench;
pub mod config;
pub mod data;
mod error;
pub mod run;
pub mod sweep;

pub use bench::{bench_crypto, cmd_bench_crypto, BenchRow, Timing};
pub use config::{parse_dims, parse_epsilons, parse_seed_list, RunConfig, SEED_ENV};
pub use data::{cmd_generate_data, cmd_generate_data_config};
pub use error::{ErrorRecord, HarnessError, Result};
pub use run::{cmd_run, cmd_run_config, MethodSummary, RunReport};
pub use sweep::{cmd_privacy_sweep, privacy_sweep, SweepMode, SweepRow};
