use std::path::{Path, PathBuf};

use fedph_federation::{ExperimentConfig, Method};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Environment variable replacing the seed list, as comma-separated integers.
pub const SEED_ENV: &str = "FEDPH_SEED";

/// A config file: one experiment template run under several methods and
/// seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    /// Defaults to `[experiment.method]`.
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    /// Defaults to `[experiment.seed]`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Used when no `--out` is given.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(experiment: ExperimentConfig) -> Self {
        Self { experiment, methods: None, seeds: None, output_dir: None }
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses and validates JSON text.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config { path: "<config>".into(), message: e.to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| vec![self.experiment.method])
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| vec![self.experiment.seed])
    }

    /// The experiment for one (method, seed) cell.
    pub fn experiment_for(&self, method: Method, seed: u64) -> ExperimentConfig {
        let mut cfg = if method == self.experiment.method {
            self.experiment.clone()
        } else {
            self.experiment.with_method(method)
        };
        cfg.seed = seed;
        cfg
    }

    /// Every (method, seed) cell must validate.
    pub fn validate(&self) -> Result<()> {
        if self.methods.as_ref().is_some_and(Vec::is_empty) {
            return Err(HarnessError::Argument("methods must not be empty".into()));
        }
        if self.seeds.as_ref().is_some_and(Vec::is_empty) {
            return Err(HarnessError::Argument("seeds must not be empty".into()));
        }
        let seed = self.seeds()[0];
        for method in self.methods() {
            self.experiment_for(method, seed).validate().map_err(HarnessError::run(method, seed))?;
        }
        Ok(())
    }

    /// Applies a `FEDPH_SEED` value, if any.
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seeds = Some(parse_seed_list(v)?);
        }
        Ok(self)
    }

    /// Output directory from the command line or else the config.
    pub fn output_dir(&self, cli: Option<&Path>) -> Result<PathBuf> {
        cli.map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .ok_or_else(|| HarnessError::Argument("no output directory: pass --out or set output_dir".into()))
    }
}

pub fn parse_seed_list(text: &str) -> Result<Vec<u64>> {
    let seeds = text
        .split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| HarnessError::Argument(format!("seed {s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(seeds)
}

/// Parses `0.5,1,5,inf`; `inf` (or `∞`) means no noise.
pub fn parse_epsilons(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let s = s.trim();
            let eps = match s {
                "inf" | "infinity" | "∞" => f64::INFINITY,
                _ => s.parse::<f64>().map_err(|e| HarnessError::Argument(format!("epsilon {s:?}: {e}")))?,
            };
            if eps > 0.0 {
                Ok(eps)
            } else {
                Err(HarnessError::Argument(format!("epsilon must be positive, got {s}")))
            }
        })
        .collect()
}

/// Parses a comma-separated list of positive integers.
pub fn parse_dims(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| match s.trim().parse::<usize>() {
            Ok(d) if d > 0 => Ok(d),
            _ => Err(HarnessError::Argument(format!("dimension {s:?} must be a positive integer"))),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists() {
        assert_eq!(parse_seed_list("3, 1,2").unwrap(), vec![3, 1, 2]);
        assert!(parse_seed_list("1,,2").is_err());
        assert!(parse_seed_list("-1").is_err());
        let eps = parse_epsilons("0.5,1,inf").unwrap();
        assert_eq!(eps[..2], [0.5, 1.0]);
        assert!(eps[2].is_infinite());
        assert!(parse_epsilons("0").is_err());
        assert!(parse_epsilons("nan").is_err());
        assert_eq!(parse_dims("16,32").unwrap(), vec![16, 32]);
        assert!(parse_dims("0").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_cells_rejected() {
        let ok = r#"{"experiment": {"method": "fedph"}, "seeds": [1, 2]}"#;
        let cfg = RunConfig::parse(ok).unwrap();
        assert_eq!(cfg.seeds(), vec![1, 2]);
        assert_eq!(cfg.methods(), vec![Method::FedPh]);
        assert!(RunConfig::parse(r#"{"experiment": {"method": "fedph"}, "seed": [1]}"#).is_err());
        assert!(RunConfig::parse(r#"{"experiment": {"method": "fedph", "round": 3}}"#).is_err());
        assert!(RunConfig::parse(r#"{"experiment": {"method": "fedph"}, "seeds": []}"#).is_err());
        let mixed = r#"{"experiment": {"method": "fedph", "projection_depths": [1, 2, 1, 2, 1]},
                        "methods": ["fedph", "fedavg"]}"#;
        let err = RunConfig::parse(mixed).unwrap_err();
        assert_eq!(err.kind(), "model_heterogeneity");
        assert!(err.to_string().starts_with("fedavg seed 0"), "{err}");
    }

    #[test]
    fn seed_override() {
        let cfg = RunConfig::parse(r#"{"experiment": {"method": "solo"}, "seeds": [1]}"#).unwrap();
        assert_eq!(cfg.clone().with_seed_override(None).unwrap().seeds(), vec![1]);
        assert_eq!(cfg.with_seed_override(Some("7,8")).unwrap().seeds(), vec![7, 8]);
    }

    #[test]
    fn cells_keep_method_specific_fields() {
        let mut exp = ExperimentConfig::new(Method::FedProx);
        exp.fedprox_mu = Some(0.5);
        let cfg = RunConfig::new(exp);
        assert_eq!(cfg.experiment_for(Method::FedProx, 4).fedprox_mu, Some(0.5));
        assert_eq!(cfg.experiment_for(Method::FedProx, 4).seed, 4);
        assert_eq!(cfg.experiment_for(Method::FedAvg, 4).fedprox_mu, None);
    }
}
