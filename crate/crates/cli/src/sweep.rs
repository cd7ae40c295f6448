use std::fmt;
use std::path::Path;

use fedph_core::privacy::{DpConfig, NoiseMode};
use fedph_federation::{Aggregation, Experiment, Method};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};
use crate::run::parallel_map;

pub const SWEEP_FILE: &str = "privacy_sweep.csv";
pub const SWEEP_HEADER: [&str; 7] = ["epsilon", "mode", "seed", "final_accuracy", "noise_std", "min_honest", "delta"];

/// Used when the config has no `dp` block.
pub const DEFAULT_DELTA: f64 = 1e-5;
pub const DEFAULT_MIN_HONEST: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Noise split across clients, `σ²/(t-1)` each.
    Split,
    /// Every client adds the full noise.
    Local,
    /// No noise at all.
    Control,
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepMode::Split => "split",
            SweepMode::Local => "local",
            SweepMode::Control => "control",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Infinite for noise-free runs.
    pub epsilon: f64,
    pub mode: SweepMode,
    pub seed: u64,
    pub final_accuracy: f64,
    /// Per-client noise standard deviation actually added.
    pub noise_std: f64,
    pub min_honest: usize,
    pub delta: f64,
}

/// FedPH at every epsilon under split and local noise, plus one noise-free
/// control per seed. Encryption is off and aggregation uniform.
pub fn privacy_sweep(cfg: &RunConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(HarnessError::Argument("epsilons must be a non-empty list of positive values".into()));
    }
    let base = cfg.experiment.dp;
    let delta = base.map_or(DEFAULT_DELTA, |d| d.delta);
    let min_honest = base.map_or(DEFAULT_MIN_HONEST, |d| d.min_honest);
    let mut jobs = Vec::new();
    for seed in cfg.seeds() {
        for &eps in epsilons {
            jobs.push((eps, SweepMode::Split, seed));
            jobs.push((eps, SweepMode::Local, seed));
        }
        jobs.push((f64::INFINITY, SweepMode::Control, seed));
    }
    parallel_map(&jobs, |&(epsilon, mode, seed)| {
        let mut exp_cfg = cfg.experiment_for(Method::FedPh, seed);
        exp_cfg.crypto = None;
        exp_cfg.aggregation = Some(Aggregation::Uniform);
        exp_cfg.dp = match mode {
            _ if epsilon.is_infinite() => None,
            SweepMode::Control => None,
            SweepMode::Split => Some(DpConfig { epsilon, delta, min_honest, mode: NoiseMode::Split }),
            SweepMode::Local => Some(DpConfig { epsilon, delta, min_honest, mode: NoiseMode::Local }),
        };
        let noise_mode = exp_cfg.dp.map(|d| d.mode);
        let mut exp = Experiment::new(exp_cfg).map_err(HarnessError::run(Method::FedPh, seed))?;
        let noise_std = match (exp.noise_spec(), noise_mode) {
            (Some(spec), Some(m)) => spec.std_for(m),
            _ => 0.0,
        };
        let table = exp.run_configured().map_err(HarnessError::run(Method::FedPh, seed))?;
        Ok(SweepRow {
            epsilon,
            mode,
            seed,
            final_accuracy: table.final_accuracy().unwrap_or(0.0),
            noise_std,
            min_honest,
            delta,
        })
    })
    .into_iter()
    .collect()
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        let eps = if r.epsilon.is_infinite() { "inf".to_string() } else { r.epsilon.to_string() };
        w.write_record([
            eps,
            r.mode.to_string(),
            r.seed.to_string(),
            r.final_accuracy.to_string(),
            r.noise_std.to_string(),
            r.min_honest.to_string(),
            r.delta.to_string(),
        ])?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

/// `privacy-sweep --config <path> --eps <list> --out <dir>`
pub fn cmd_privacy_sweep(
    config: &Path,
    epsilons: &[f64],
    out: Option<&Path>,
    seed_env: Option<&str>,
) -> Result<Vec<SweepRow>> {
    let cfg = RunConfig::load(config)?.with_seed_override(seed_env)?;
    let dir = cfg.output_dir(out)?;
    let rows = privacy_sweep(&cfg, epsilons)?;
    std::fs::create_dir_all(&dir).map_err(HarnessError::io(&dir))?;
    write_sweep(&dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

/// Mean final accuracy of the rows matching `epsilon` and `mode`.
pub fn mean_accuracy(rows: &[SweepRow], epsilon: f64, mode: SweepMode) -> Option<f64> {
    let picked: Vec<f64> = rows
        .iter()
        .filter(|r| r.mode == mode && r.epsilon == epsilon)
        .map(|r| r.final_accuracy)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}
