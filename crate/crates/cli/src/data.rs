use std::path::{Path, PathBuf};

use fedph_core::datagen::{generate, write_dataset_dir};

use crate::config::RunConfig;
use crate::error::Result;

/// Directory of the dataset generated for `seed` under `out`.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Writes one dataset directory per seed: per-client CSVs plus a manifest.
/// Returns every file written.
pub fn cmd_generate_data_config(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    for seed in cfg.seeds() {
        let data = cfg.experiment_for(cfg.experiment.method, seed).effective_data();
        let datasets = generate::<f64>(&data)?;
        written.extend(write_dataset_dir(&seed_dir(out, seed), &data, &datasets)?);
    }
    Ok(written)
}

/// `generate-data --config <path> --out <dir>`
pub fn cmd_generate_data(config: &Path, out: Option<&Path>, seed_env: Option<&str>) -> Result<Vec<PathBuf>> {
    let cfg = RunConfig::load(config)?.with_seed_override(seed_env)?;
    let dir = cfg.output_dir(out)?;
    cmd_generate_data_config(&cfg, &dir)
}
