//! Gaussian noise for prototypes. In split mode every client adds a share
//! of the noise scaled by `1/sqrt(t-1)`, so that any `t-1` honest clients
//! together contribute at least the full calibrated variance.

use serde::{Deserialize, Serialize};

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::mathcore::{standard_normal, RngStream, Vector};
use crate::prototype::PrototypeSet;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Split,
    Local,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Minimum number of honest clients.
    pub min_honest: usize,
    #[serde(default)]
    pub mode: NoiseMode,
}

impl DpConfig {
    pub fn validate(&self, clients: usize) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidParameter("epsilon must be finite and > 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
        }
        if self.min_honest < 2 || self.min_honest > clients {
            return Err(Error::InvalidParameter(format!(
                "min_honest must lie in [2, {clients}], got {}",
                self.min_honest
            )));
        }
        Ok(())
    }

    pub fn noise_spec(&self, bound: f64, n_min: usize, clients: usize) -> Result<NoiseSpec> {
        self.validate(clients)?;
        NoiseSpec::new(
            sensitivity(bound, n_min)?,
            calibrate_sigma(self.epsilon, self.delta)?,
            self.min_honest,
            clients,
        )
    }
}

/// Worst-case L2 change of a mean of at least `n_min` vectors of norm at
/// most `bound` when one of them is replaced.
pub fn sensitivity(bound: f64, n_min: usize) -> Result<f64> {
    if !(bound > 0.0) || !bound.is_finite() {
        return Err(Error::InvalidParameter("clip bound must be finite and > 0".into()));
    }
    if n_min == 0 {
        return Err(Error::InvalidParameter("n_min must be at least 1".into()));
    }
    Ok(2.0 * bound / n_min as f64)
}

/// Classical Gaussian-mechanism multiplier `sqrt(2 ln(1.25/delta)) / epsilon`.
/// The guarantee is only proven for `epsilon <= 1`; larger values use the
/// same formula.
pub fn calibrate_sigma(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidParameter("epsilon must be finite and > 0".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter("delta must lie in (0, 1)".into()));
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sensitivity: f64,
    sigma: f64,
    clients: usize,
    min_honest: usize,
}

impl NoiseSpec {
    pub fn new(sensitivity: f64, sigma: f64, min_honest: usize, clients: usize) -> Result<Self> {
        if !(sensitivity >= 0.0) || !(sigma >= 0.0) || !sensitivity.is_finite() || !sigma.is_finite() {
            return Err(Error::InvalidParameter("noise scale must be finite and >= 0".into()));
        }
        if min_honest < 2 || min_honest > clients {
            return Err(Error::InvalidParameter(format!(
                "min_honest must lie in [2, {clients}], got {min_honest}"
            )));
        }
        Ok(Self { sensitivity, sigma, clients, min_honest })
    }

    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Full calibrated standard deviation `S_f * sigma`.
    pub fn full_std(&self) -> f64 {
        self.sensitivity * self.sigma
    }

    /// `S_f * sigma / sqrt(t - 1)`.
    pub fn per_client_std(&self) -> f64 {
        self.full_std() / ((self.min_honest - 1) as f64).sqrt()
    }

    /// Standard deviation of the sum of all `m` split-noise shares.
    pub fn aggregate_std(&self) -> f64 {
        self.full_std() * (self.clients as f64 / (self.min_honest - 1) as f64).sqrt()
    }

    pub fn std_for(&self, mode: NoiseMode) -> f64 {
        match mode {
            NoiseMode::Split => self.per_client_std(),
            NoiseMode::Local => self.full_std(),
        }
    }
}

fn perturb<T: Real>(proto: &PrototypeSet<T>, std: f64, rng: &mut RngStream) -> Result<PrototypeSet<T>> {
    if std == 0.0 {
        return Ok(proto.clone());
    }
    proto.map_vectors(|_, v| {
        Vector::new(
            v.as_slice()
                .iter()
                .map(|&x| x + T::of(std * standard_normal(rng)))
                .collect(),
        )
    })
}

/// Adds i.i.d. `N(0, per_client_std^2)` to every coordinate.
pub fn perturb_split<T: Real>(
    proto: &PrototypeSet<T>,
    spec: &NoiseSpec,
    rng: &mut RngStream,
) -> Result<PrototypeSet<T>> {
    perturb(proto, spec.per_client_std(), rng)
}

/// Adds i.i.d. `N(0, (S_f sigma)^2)` to every coordinate.
pub fn perturb_local<T: Real>(
    proto: &PrototypeSet<T>,
    spec: &NoiseSpec,
    rng: &mut RngStream,
) -> Result<PrototypeSet<T>> {
    perturb(proto, spec.full_std(), rng)
}

pub fn perturb_mode<T: Real>(
    proto: &PrototypeSet<T>,
    spec: &NoiseSpec,
    mode: NoiseMode,
    rng: &mut RngStream,
) -> Result<PrototypeSet<T>> {
    perturb(proto, spec.std_for(mode), rng)
}

/// Smallest nonzero per-client class count in the training splits.
pub fn min_class_count<T>(clients: &[ClientDataset<T>]) -> Option<usize> {
    clients
        .iter()
        .flat_map(|c| c.class_counts.iter().copied())
        .filter(|&n| n > 0)
        .min()
}
