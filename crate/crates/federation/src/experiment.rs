//! Round loop for every method, driven through a [`Transport`].

use std::time::Instant;

use fedph_core::datagen::generate;
use fedph_core::mathcore::{stream_id, RngStream};
use fedph_core::model::BackboneSpec;
use fedph_core::objective::{Objective, Regularizer};
use fedph_core::privacy::{min_class_count, NoiseMode, NoiseSpec};
use fedph_core::{ClientDataset64, HeadParams64, PrototypeSet64};
use fedph_crypto::{keygen, DecryptionShare, Encrypt, Encryptor, FixedPointCodec};

use crate::client::{ClientState, LocalOutcome, LocalPlan, LossMeans};
use crate::config::{ExperimentConfig, Method, TransportKind};
use crate::error::{FedError, Result};
use crate::message::RoundMessage;
use crate::metrics::{MetricsRow, MetricsTable};
use crate::server::ServerState;
use crate::transport::{MemoryTransport, Peer, TcpTransport, Transport};

/// Local-step settings borrowed field by field, so clients stay mutable.
macro_rules! plan {
    ($exp:expr) => {
        LocalPlan {
            objective: $exp.objective,
            optim: $exp.cfg.optim,
            epochs: $exp.cfg.local_epochs,
            proximal_mu: $exp.cfg.fedprox_mu,
            noise: $exp.noise,
            encryption: $exp.encryptor.as_ref().zip($exp.codec.as_ref()),
        }
    };
}

const PURPOSE_BACKBONE: u32 = 0xF001;
const PURPOSE_DEALER: u32 = 0xF007;

/// Noise allowance of the codec range, in standard deviations.
const CODEC_NOISE_SIGMAS: f64 = 40.0;

/// A configured run: clients, server and the shared crypto material.
pub struct Experiment {
    cfg: ExperimentConfig,
    backbone: BackboneSpec<f64>,
    clients: Vec<ClientState>,
    server: ServerState,
    encryptor: Option<Encryptor>,
    codec: Option<FixedPointCodec>,
    noise: Option<(NoiseSpec, NoiseMode)>,
    objective: Objective<f64>,
    record_releases: bool,
    releases: Vec<PrototypeSet64>,
}

impl std::fmt::Debug for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Experiment")
            .field("method", &self.cfg.method)
            .field("clients", &self.clients.len())
            .field("round", &self.server.round())
            .finish_non_exhaustive()
    }
}

impl Experiment {
    /// Validates `cfg` and generates its synthetic data.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let datasets = generate::<f64>(&cfg.effective_data())?;
        Self::with_datasets(cfg, datasets)
    }

    /// Uses the given client datasets (one per client, ids `0..m`).
    pub fn with_datasets(cfg: ExperimentConfig, datasets: Vec<ClientDataset64>) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.clients;
        if datasets.len() != m {
            return Err(FedError::Config(format!("{} datasets for {m} clients", datasets.len())));
        }
        if let Some((i, d)) = datasets.iter().enumerate().find(|(i, d)| d.client_id != *i) {
            return Err(FedError::Config(format!("dataset {i} belongs to client {}", d.client_id)));
        }
        let raw_dim = datasets.iter().map(ClientDataset64::dim).find(|&d| d > 0).unwrap_or(cfg.data.dim);
        let seed = cfg.seed;
        let mut backbone_rng = RngStream::new(seed, stream_id(PURPOSE_BACKBONE, 0));
        let backbone = BackboneSpec::<f64>::seeded(&mut backbone_rng, raw_dim, cfg.model.feature_dim)?;

        let noise = match &cfg.dp {
            Some(dp) => {
                let n_min = min_class_count(&datasets).ok_or(FedError::Config("no training samples".into()))?;
                Some((dp.noise_spec(cfg.clip_bound, n_min, m)?, dp.mode))
            }
            None => None,
        };

        let (mut shares, encryptor, codec) = match (&cfg.crypto, cfg.decryption_threshold()) {
            (Some(cc), Some(k)) => {
                let mut dealer = RngStream::new(seed, stream_id(PURPOSE_DEALER, 0));
                let (pk, shares) = keygen(cc.bits, m, k, &mut dealer)?;
                let encryptor = Encryptor::new(&pk, cc.exponent_bits, cc.window, &mut dealer)?;
                let std = noise.map_or(0.0, |(spec, mode)| spec.std_for(mode));
                let bound = cfg.clip_bound * (1.0 + 1e-9) + CODEC_NOISE_SIGMAS * std;
                let codec = FixedPointCodec::new(&pk, cc.frac_bits, bound, m)?;
                (shares.into_iter().map(Some).collect(), Some(encryptor), Some(codec))
            }
            _ => (vec![None; m], None, None),
        };

        let mut clients = Vec::with_capacity(m);
        for (i, dataset) in datasets.into_iter().enumerate() {
            let spec = cfg.head_spec(i);
            clients.push(ClientState::new(dataset, &backbone, &spec, seed, shares[i].take())?);
        }

        let encryption = encryptor.as_ref().zip(codec.clone()).map(|(e, c)| (e.public_key().clone(), c));
        let mut server = ServerState::new(
            m,
            cfg.data.classes,
            cfg.model.embed_dim,
            cfg.aggregation_rule(),
            encryption,
            seed,
        );
        if cfg.method.averages_weights() {
            let head = HeadParams64::init(&cfg.head_spec(0), server.rng())?;
            server.set_global_head(head);
        }

        let regularizer = match cfg.method {
            Method::FedPh => Regularizer::Contrastive,
            Method::FedProto => Regularizer::MeanSquared { weight: cfg.fedproto_reg.unwrap_or(0.0) },
            _ => Regularizer::None,
        };
        let objective = Objective { loss: cfg.loss, regularizer, clip_bound: cfg.clip_bound };
        Ok(Self {
            cfg,
            backbone,
            clients,
            server,
            encryptor,
            codec,
            noise,
            objective,
            record_releases: false,
            releases: Vec::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// The frozen feature map shared by all clients.
    pub fn backbone(&self) -> &BackboneSpec<f64> {
        &self.backbone
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn noise_spec(&self) -> Option<NoiseSpec> {
        self.noise.map(|(s, _)| s)
    }

    pub fn codec(&self) -> Option<&FixedPointCodec> {
        self.codec.as_ref()
    }

    /// Keep each round's perturbed client prototypes (before encryption)
    /// for inspection.
    pub fn record_releases(&mut self, on: bool) {
        self.record_releases = on;
    }

    /// Perturbed prototypes of the last round in client-id order, if recorded.
    pub fn last_releases(&self) -> &[PrototypeSet64] {
        &self.releases
    }

    fn accuracies(&self) -> Vec<f64> {
        let bound = self.cfg.clip_bound;
        match self.server.global_head() {
            Some(head) => self.clients.iter().map(|c| c.accuracy_of(head, bound)).collect(),
            None => self.clients.iter().map(|c| c.accuracy(bound)).collect(),
        }
    }

    /// Evaluation before any training.
    pub fn initial_row(&self) -> MetricsRow {
        MetricsRow::new(&self.cfg, 0, self.accuracies())
    }

    /// Runs every round, returning the round-0 row plus one row per round.
    pub fn run(&mut self, transport: &mut dyn Transport) -> Result<MetricsTable> {
        let mut rows = vec![self.initial_row()];
        for _ in 0..self.cfg.rounds {
            rows.push(self.step(transport)?);
        }
        Ok(MetricsTable { rows })
    }

    /// One communication round.
    /// [`Experiment::run`] over the transport named in the config.
    pub fn run_configured(&mut self) -> Result<MetricsTable> {
        match self.cfg.transport {
            TransportKind::Memory => self.run(&mut MemoryTransport::new()),
            TransportKind::Tcp => self.run(&mut TcpTransport::new()),
        }
    }

    pub fn step(&mut self, transport: &mut dyn Transport) -> Result<MetricsRow> {
        let start = Instant::now();
        let round = self.server.begin_round();
        transport.set_public_key(self.server.public_key().cloned());
        let before = traffic_snapshot(transport, self.clients.len());
        let outcomes = match self.cfg.method {
            Method::Solo => self.solo_round(round)?,
            Method::FedAvg | Method::FedProx => self.weight_round(round, transport)?,
            Method::FedProto | Method::FedPh => self.prototype_round(round, transport)?,
        };
        let after = traffic_snapshot(transport, self.clients.len());

        let mut row = MetricsRow::new(&self.cfg, round, self.accuracies());
        let losses: Vec<LossMeans> = outcomes.iter().filter_map(|o| o.losses).collect();
        if !losses.is_empty() {
            let n = losses.len() as f64;
            row.supervised_loss = Some(losses.iter().map(|l| l.supervised).sum::<f64>() / n);
            row.regularizer_loss = Some(losses.iter().map(|l| l.regularizer).sum::<f64>() / n);
        }
        let m = self.clients.len() as f64;
        if self.cfg.method != Method::Solo {
            row.uplink_values = outcomes.iter().map(|o| o.message.payload_values() as f64).sum::<f64>() / m;
        }
        row.uplink_bytes = after.iter().zip(&before).map(|(a, b)| (a.0 - b.0) as f64).sum::<f64>() / m;
        row.downlink_bytes = after.iter().zip(&before).map(|(a, b)| (a.1 - b.1) as f64).sum::<f64>() / m;
        if self.encryptor.is_some() {
            row.encrypt_ms = Some(outcomes.iter().map(|o| o.encrypt_seconds).sum::<f64>() * 1e3 / m);
        }
        row.round_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(row)
    }

    fn solo_round(&mut self, round: u32) -> Result<Vec<LocalOutcome>> {
        let plan = LocalPlan { noise: None, encryption: None, ..plan!(self) };
        let mut out = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            let losses = c.train(&plan, None).map_err(FedError::in_round(round, format!("client {}", c.id())))?;
            out.push(LocalOutcome {
                message: RoundMessage::HeadWeights { round, client: c.id(), samples: 0, weights: Vec::new() },
                losses,
                released: None,
                encrypt_seconds: 0.0,
            });
        }
        Ok(out)
    }

    fn weight_round(&mut self, round: u32, transport: &mut dyn Transport) -> Result<Vec<LocalOutcome>> {
        let global = self
            .server
            .global_head()
            .ok_or_else(|| FedError::Protocol("no global head".into()))?
            .to_flat();
        for c in &self.clients {
            let msg = RoundMessage::HeadWeights { round, client: c.id(), samples: 0, weights: global.clone() };
            transport.send(Peer::Server, Peer::Client(c.id()), &msg)?;
        }
        let plan = plan!(self);
        let mut outcomes = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            let ctx = FedError::in_round(round, format!("client {}", c.id()));
            let outcome = (|| {
                let weights = match transport.recv(Peer::Server, Peer::Client(c.id()))? {
                    RoundMessage::HeadWeights { round: r, weights, .. } if r == round => weights,
                    other => return Err(unexpected(&other, "HeadWeights", round)),
                };
                let outcome = c.weight_training(round, &weights, &plan)?;
                transport.send(Peer::Client(c.id()), Peer::Server, &outcome.message)?;
                Ok(outcome)
            })()
            .map_err(ctx)?;
            outcomes.push(outcome);
        }
        let mut updates = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            match self.collect(transport, round, c.id())? {
                RoundMessage::HeadWeights { client, samples, weights, .. } if client == c.id() => {
                    updates.push((samples, weights))
                }
                other => return Err(unexpected(&other, "HeadWeights", round)),
            }
        }
        self.server
            .aggregate_weights(&updates)
            .map_err(FedError::in_round(round, "server"))?;
        Ok(outcomes)
    }

    fn prototype_round(&mut self, round: u32, transport: &mut dyn Transport) -> Result<Vec<LocalOutcome>> {
        let broadcast = RoundMessage::GlobalPrototypes { round, prototypes: self.server.globals().clone() };
        for c in &self.clients {
            transport.send(Peer::Server, Peer::Client(c.id()), &broadcast)?;
        }
        let plan = plan!(self);
        let mut outcomes = Vec::with_capacity(self.clients.len());
        for c in &mut self.clients {
            let ctx = FedError::in_round(round, format!("client {}", c.id()));
            let outcome = (|| {
                match transport.recv(Peer::Server, Peer::Client(c.id()))? {
                    RoundMessage::GlobalPrototypes { round: r, prototypes } if r == round => {
                        if prototypes.is_initialized() {
                            c.receive_globals(prototypes)?;
                        }
                    }
                    other => return Err(unexpected(&other, "GlobalPrototypes", round)),
                }
                let outcome = c.local_training(round, &plan)?;
                transport.send(Peer::Client(c.id()), Peer::Server, &outcome.message)?;
                Ok(outcome)
            })()
            .map_err(ctx)?;
            outcomes.push(outcome);
        }
        if self.record_releases {
            self.releases = outcomes.iter().filter_map(|o| o.released.clone()).collect();
        }

        let server_ctx = FedError::in_round(round, "server");
        if self.encryptor.is_none() {
            let mut locals = Vec::with_capacity(self.clients.len());
            for c in &self.clients {
                match self.collect(transport, round, c.id())? {
                    RoundMessage::PlainUpdate { client, prototypes, .. } if client == c.id() => locals.push(prototypes),
                    other => return Err(unexpected(&other, "PlainUpdate", round)),
                }
            }
            self.server.aggregate_plain(&locals).map_err(server_ctx)?;
            return Ok(outcomes);
        }

        let mut updates = Vec::with_capacity(self.clients.len());
        for c in &self.clients {
            match self.collect(transport, round, c.id())? {
                RoundMessage::EncryptedUpdate { client, ciphertexts, .. } if client == c.id() => updates.push(ciphertexts),
                other => return Err(unexpected(&other, "EncryptedUpdate", round)),
            }
        }
        let folded = self.server.fold_encrypted(&updates).map_err(FedError::in_round(round, "server"))?;
        let chosen = self
            .server
            .select_decryption_set()
            .map_err(FedError::in_round(round, "server"))?
            .to_vec();
        let request = RoundMessage::ShareRequest { round, ciphertexts: folded };
        for &id in &chosen {
            transport.send(Peer::Server, Peer::Client(id), &request)?;
        }
        let pk = self.server.public_key().cloned().expect("encrypted runs have a key");
        for &id in &chosen {
            let c = &self.clients[id as usize];
            let reply = (|| {
                let cts = match transport.recv(Peer::Server, Peer::Client(id))? {
                    RoundMessage::ShareRequest { round: r, ciphertexts } if r == round => ciphertexts,
                    other => return Err(unexpected(&other, "ShareRequest", round)),
                };
                let shares = c.decryption_shares(&pk, &cts)?;
                transport.send(Peer::Client(id), Peer::Server, &RoundMessage::ShareResponse { round, client: id, shares })
            })();
            reply.map_err(FedError::in_round(round, format!("client {id}")))?;
        }
        let mut by_party: Vec<Vec<DecryptionShare>> = Vec::with_capacity(chosen.len());
        for &id in &chosen {
            match self.collect(transport, round, id)? {
                RoundMessage::ShareResponse { client, shares, .. } if client == id => by_party.push(shares),
                other => return Err(unexpected(&other, "ShareResponse", round)),
            }
        }
        self.server
            .finish_decryption(&by_party)
            .map_err(FedError::in_round(round, "server"))?;
        Ok(outcomes)
    }

    /// Next message from `client` to the server; a missing one aborts the round.
    fn collect(&self, transport: &mut dyn Transport, round: u32, client: u32) -> Result<RoundMessage> {
        let msg = transport.recv(Peer::Client(client), Peer::Server).map_err(|e| match e {
            FedError::Transport(_) => FedError::MissingUpdate { round, client },
            e => FedError::in_round(round, "server")(e),
        })?;
        if msg.round() != round {
            return Err(unexpected(&msg, "a current-round message", round));
        }
        Ok(msg)
    }
}

fn unexpected(msg: &RoundMessage, wanted: &str, round: u32) -> FedError {
    FedError::Protocol(format!(
        "expected {wanted} for round {round}, got {} for round {}",
        msg.kind(),
        msg.round()
    ))
}

/// `(bytes sent, bytes received)` per client.
fn traffic_snapshot(transport: &dyn Transport, clients: usize) -> Vec<(u64, u64)> {
    (0..clients)
        .map(|i| {
            let t = transport.meter().peer(Peer::Client(i as u32));
            (t.bytes_sent, t.bytes_received)
        })
        .collect()
}

/// Generates data, runs every round over the configured transport and
/// returns the metrics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    Experiment::new(cfg.clone())?.run_configured()
}
