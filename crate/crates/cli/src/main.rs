use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedph_cli::{
    cmd_bench_crypto, cmd_generate_data, cmd_privacy_sweep, cmd_run, parse_dims, parse_epsilons, HarnessError,
    SEED_ENV,
};

#[derive(Debug, Parser)]
#[command(name = "fedph", version, about = "Prototype-sharing federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic client datasets as CSV files.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every method and seed of a config; writes metrics.csv and summary.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time encryption of prototype and head-parameter payloads.
    BenchCrypto {
        #[arg(long, default_value_t = 2048)]
        bits: u64,
        /// Embedding widths, comma separated.
        #[arg(long, default_value = "64")]
        dims: String,
        #[arg(long, default_value_t = fedph_cli::bench::DEFAULT_REPS)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// FedPH final accuracy across privacy budgets, split and local noise.
    PrivacySweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma separated; `inf` disables noise.
        #[arg(long, default_value = "0.5,1,5,inf")]
        eps: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenerateData { .. } => "generate-data",
            Command::Run { .. } => "run",
            Command::BenchCrypto { .. } => "bench-crypto",
            Command::PrivacySweep { .. } => "privacy-sweep",
        }
    }
}

fn execute(command: &Command, seed_env: Option<&str>) -> Result<(), HarnessError> {
    match command {
        Command::GenerateData { config, out } => {
            let files = cmd_generate_data(config, out.as_deref(), seed_env)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::Run { config, out } => {
            let report = cmd_run(config, out.as_deref(), seed_env)?;
            for s in &report.summaries {
                println!("{:<9} {} ({} seeds)", s.method.name(), s.formatted(), s.seeds);
            }
            if let Some(p) = &report.metrics_path {
                println!("metrics: {}", p.display());
            }
        }
        Command::BenchCrypto { bits, dims, reps, out } => {
            let rows = cmd_bench_crypto(*bits, &parse_dims(dims)?, *reps, out)?;
            for r in &rows {
                println!(
                    "bits {} d_b {}: prototypes {:.4}s ± {:.4}s, parameters {:.4}s ± {:.4}s, ratio {:.1}",
                    r.bits,
                    r.embed_dim,
                    r.prototype.mean,
                    r.prototype.std,
                    r.params.mean,
                    r.params.std,
                    r.ratio()
                );
            }
        }
        Command::PrivacySweep { config, eps, out } => {
            let rows = cmd_privacy_sweep(config, &parse_epsilons(eps)?, out.as_deref(), seed_env)?;
            for r in &rows {
                println!("eps {} {} seed {}: {:.4} (noise std {:.4})", r.epsilon, r.mode, r.seed, r.final_accuracy, r.noise_std);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed_env = std::env::var(SEED_ENV).ok();
    match execute(&cli.command, seed_env.as_deref()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record(cli.command.name()).line());
            ExitCode::FAILURE
        }
    }
}
