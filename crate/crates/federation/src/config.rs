use fedph_core::datagen::DataConfig;
use fedph_core::model::{HeadSpec, OptimConfig};
use fedph_core::objective::LossConfig;
use fedph_core::privacy::DpConfig;
use fedph_crypto::{DEFAULT_EXPONENT_BITS, DEFAULT_FRAC_BITS, DEFAULT_WINDOW};
use serde::{Deserialize, Serialize};

use crate::error::{FedError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Solo,
    FedAvg,
    FedProx,
    FedProto,
    FedPh,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Solo, Method::FedAvg, Method::FedProx, Method::FedProto, Method::FedPh];

    pub fn name(self) -> &'static str {
        match self {
            Method::Solo => "solo",
            Method::FedAvg => "fedavg",
            Method::FedProx => "fedprox",
            Method::FedProto => "fedproto",
            Method::FedPh => "fedph",
        }
    }

    pub fn shares_prototypes(self) -> bool {
        matches!(self, Method::FedProto | Method::FedPh)
    }

    pub fn averages_weights(self) -> bool {
        matches!(self, Method::FedAvg | Method::FedProx)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = FedError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| FedError::Config(format!("unknown method {s:?}")))
    }
}

/// How the server combines plaintext prototype updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Per class, weighted by the clients' sample counts.
    Weighted,
    /// Per class, the plain mean over all clients.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Memory,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CryptoConfig {
    pub bits: u64,
    pub frac_bits: u32,
    pub exponent_bits: u64,
    pub window: u32,
    /// Honest-client bound `t`; decryption needs `m - t + 1` shares. Taken
    /// from the privacy settings when absent there.
    pub min_honest: Option<usize>,
}

impl Default for CryptoConfig {
    fn default() -> Self {
        Self {
            bits: 512,
            frac_bits: DEFAULT_FRAC_BITS,
            exponent_bits: DEFAULT_EXPONENT_BITS,
            window: DEFAULT_WINDOW,
            min_honest: None,
        }
    }
}

/// Head widths shared by all clients; the backbone maps raw features to
/// `feature_dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { feature_dim: 512, hidden_dim: 128, embed_dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: usize,
    /// Number of clients; overrides `data.clients`.
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default)]
    pub dp: Option<DpConfig>,
    #[serde(default)]
    pub crypto: Option<CryptoConfig>,
    /// Plaintext aggregation rule; encrypted runs are always uniform.
    #[serde(default)]
    pub aggregation: Option<Aggregation>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_clip_bound")]
    pub clip_bound: f64,
    #[serde(default)]
    pub fedprox_mu: Option<f64>,
    #[serde(default)]
    pub fedproto_reg: Option<f64>,
    /// Projection depth (1 or 2) per client; all 1 when absent.
    #[serde(default)]
    pub projection_depths: Option<Vec<usize>>,
    #[serde(default = "default_transport")]
    pub transport: TransportKind,
    #[serde(default)]
    pub seed: u64,
}

fn default_rounds() -> usize {
    50
}

fn default_local_epochs() -> usize {
    1
}

fn default_clients() -> usize {
    5
}

fn default_clip_bound() -> f64 {
    5.0
}

fn default_transport() -> TransportKind {
    TransportKind::Memory
}

pub const DEFAULT_FEDPROX_MU: f64 = 0.01;
pub const DEFAULT_FEDPROTO_REG: f64 = 1.0;

impl ExperimentConfig {
    /// Defaults for `method` with its method-specific field filled in.
    pub fn new(method: Method) -> Self {
        Self {
            method,
            rounds: default_rounds(),
            local_epochs: default_local_epochs(),
            clients: default_clients(),
            dp: None,
            crypto: None,
            aggregation: None,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            clip_bound: default_clip_bound(),
            fedprox_mu: (method == Method::FedProx).then_some(DEFAULT_FEDPROX_MU),
            fedproto_reg: (method == Method::FedProto).then_some(DEFAULT_FEDPROTO_REG),
            projection_depths: None,
            transport: default_transport(),
            seed: 0,
        }
    }

    /// Same settings under another method, keeping shared fields.
    pub fn with_method(&self, method: Method) -> Self {
        let mut cfg = self.clone();
        cfg.method = method;
        cfg.fedprox_mu = (method == Method::FedProx).then(|| self.fedprox_mu.unwrap_or(DEFAULT_FEDPROX_MU));
        cfg.fedproto_reg = (method == Method::FedProto).then(|| self.fedproto_reg.unwrap_or(DEFAULT_FEDPROTO_REG));
        if !method.shares_prototypes() {
            cfg.dp = None;
            cfg.crypto = None;
            cfg.aggregation = None;
        }
        cfg
    }

    pub fn depths(&self) -> Vec<usize> {
        self.projection_depths.clone().unwrap_or_else(|| vec![1; self.clients])
    }

    pub fn head_spec(&self, client: usize) -> HeadSpec {
        HeadSpec {
            input_dim: self.model.feature_dim,
            hidden_dim: self.model.hidden_dim,
            embed_dim: self.model.embed_dim,
            classes: self.data.classes,
            depth: self.depths()[client],
        }
    }

    pub fn aggregation_rule(&self) -> Aggregation {
        if self.crypto.is_some() {
            Aggregation::Uniform
        } else {
            self.aggregation.unwrap_or(Aggregation::Weighted)
        }
    }

    /// `t` for threshold decryption.
    pub fn min_honest(&self) -> Option<usize> {
        self.dp
            .map(|d| d.min_honest)
            .or_else(|| self.crypto.and_then(|c| c.min_honest))
    }

    /// Shares needed to decrypt, `m - t + 1`.
    pub fn decryption_threshold(&self) -> Option<usize> {
        self.crypto?;
        Some(self.clients + 1 - self.min_honest().unwrap_or(2))
    }

    /// Data settings with the client count and class coverage this run needs.
    pub fn effective_data(&self) -> DataConfig {
        let mut data = self.data.clone();
        data.clients = self.clients;
        data.seed = self.seed;
        if self.method.shares_prototypes() && self.aggregation_rule() == Aggregation::Uniform {
            data.cover_all_classes = true;
        }
        data
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FedError::Config(msg));
        if self.clients == 0 {
            return bad("clients must be positive".into());
        }
        if !(self.clip_bound > 0.0) || !self.clip_bound.is_finite() {
            return bad(format!("clip_bound must be finite and > 0, got {}", self.clip_bound));
        }
        self.loss.validate()?;
        self.optim.validate()?;
        self.effective_data().validate()?;
        let m = self.model;
        if m.feature_dim == 0 || m.embed_dim == 0 || m.hidden_dim == 0 {
            return bad("model widths must be positive".into());
        }

        match (self.method, self.fedprox_mu) {
            (Method::FedProx, Some(mu)) if mu >= 0.0 && mu.is_finite() => {}
            (Method::FedProx, Some(mu)) => return bad(format!("fedprox_mu must be finite and >= 0, got {mu}")),
            (Method::FedProx, None) => return bad("fedprox requires fedprox_mu".into()),
            (_, Some(_)) => return bad(format!("fedprox_mu is only valid for fedprox, not {}", self.method)),
            (_, None) => {}
        }
        match (self.method, self.fedproto_reg) {
            (Method::FedProto, Some(w)) if w >= 0.0 && w.is_finite() => {}
            (Method::FedProto, Some(w)) => return bad(format!("fedproto_reg must be finite and >= 0, got {w}")),
            (Method::FedProto, None) => return bad("fedproto requires fedproto_reg".into()),
            (_, Some(_)) => return bad(format!("fedproto_reg is only valid for fedproto, not {}", self.method)),
            (_, None) => {}
        }
        if !self.method.shares_prototypes() {
            for (name, set) in [
                ("dp", self.dp.is_some()),
                ("crypto", self.crypto.is_some()),
                ("aggregation", self.aggregation.is_some()),
            ] {
                if set {
                    return bad(format!("{name} is only valid for prototype-sharing methods, not {}", self.method));
                }
            }
        }

        if let Some(depths) = &self.projection_depths {
            if depths.len() != self.clients {
                return bad(format!("projection_depths has {} entries for {} clients", depths.len(), self.clients));
            }
            if let Some(d) = depths.iter().find(|d| !(1..=2).contains(*d)) {
                return bad(format!("projection depth must be 1 or 2, got {d}"));
            }
            if self.method.averages_weights() && depths.iter().any(|&d| d != depths[0]) {
                return Err(FedError::ModelHeterogeneity(format!(
                    "{} averages head weights, but clients use projection depths {depths:?}",
                    self.method
                )));
            }
        }

        if let Some(dp) = &self.dp {
            dp.validate(self.clients)?;
        }
        if let Some(c) = &self.crypto {
            if let (Some(dp), Some(t)) = (self.dp, c.min_honest) {
                if dp.min_honest != t {
                    return bad(format!("crypto.min_honest {t} disagrees with dp.min_honest {}", dp.min_honest));
                }
            }
            let t = self.min_honest().unwrap_or(2);
            if self.clients < 3 || t < 2 || t >= self.clients {
                return bad(format!(
                    "threshold decryption needs at least 3 clients and 2 <= t < m, got t = {t}, m = {}",
                    self.clients
                ));
            }
            if c.frac_bits > 40 {
                return bad(format!("frac_bits must be at most 40, got {}", c.frac_bits));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_specific_fields() {
        let mut cfg = ExperimentConfig::new(Method::FedPh);
        cfg.validate().unwrap();
        cfg.fedprox_mu = Some(0.1);
        assert!(matches!(cfg.validate(), Err(FedError::Config(_))));

        let prox = ExperimentConfig::new(Method::FedProx);
        prox.validate().unwrap();
        let mut prox = prox;
        prox.fedprox_mu = None;
        assert!(prox.validate().is_err());

        let proto = ExperimentConfig::new(Method::FedPh).with_method(Method::FedProto);
        assert_eq!(proto.fedproto_reg, Some(DEFAULT_FEDPROTO_REG));
        proto.validate().unwrap();
    }

    #[test]
    fn heterogeneous_depths_rejected_for_averaging() {
        let mut cfg = ExperimentConfig::new(Method::FedPh);
        cfg.projection_depths = Some(vec![1, 2, 1, 2, 1]);
        cfg.validate().unwrap();
        let avg = cfg.with_method(Method::FedAvg);
        assert!(matches!(avg.validate(), Err(FedError::ModelHeterogeneity(_))));
        cfg.projection_depths = Some(vec![1, 3, 1, 1, 1]);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn threshold_from_privacy_settings() {
        let mut cfg = ExperimentConfig::new(Method::FedPh);
        cfg.crypto = Some(CryptoConfig::default());
        assert_eq!(cfg.decryption_threshold(), Some(4));
        cfg.dp = Some(DpConfig { epsilon: 1.0, delta: 1e-5, min_honest: 3, mode: Default::default() });
        assert_eq!(cfg.decryption_threshold(), Some(3));
        assert_eq!(cfg.aggregation_rule(), Aggregation::Uniform);
        assert!(cfg.effective_data().cover_all_classes);
        cfg.clients = 2;
        cfg.dp = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let ok: ExperimentConfig = serde_json::from_str(r#"{"method": "fedph", "rounds": 3}"#).unwrap();
        assert_eq!(ok.rounds, 3);
        assert_eq!(ok.local_epochs, 1);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"method": "fedph", "round": 3}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"method": "fedsgd"}"#).is_err());
    }
}
