use std::time::Instant;

use fedph_core::datagen::ClientDataset;
use fedph_core::mathcore::{stream_id, RngStream, Vector};
use fedph_core::model::{sgd_step, BackboneSpec, HeadSpec, OptimConfig};
use fedph_core::objective::Objective;
use fedph_core::privacy::{perturb_mode, NoiseMode, NoiseSpec};
use fedph_core::prototype::prototypes_from_encoded;
use fedph_core::{ClientDataset64, Encoded64, HeadParams64, PrototypeSet64};
use fedph_crypto::{encrypt_vector, partial_decrypt_vector, Ciphertext, DecryptionShare, Encryptor, FixedPointCodec, KeyShare, PublicKey};
use rand::seq::SliceRandom;

use crate::error::{FedError, Result};
use crate::message::RoundMessage;

pub(crate) const PURPOSE_HEAD_INIT: u32 = 0xF002;
pub(crate) const PURPOSE_BATCHING: u32 = 0xF003;
pub(crate) const PURPOSE_NOISE: u32 = 0xF004;
pub(crate) const PURPOSE_ENCRYPT: u32 = 0xF005;

/// Settings shared by every client's local step in one run.
#[derive(Debug, Clone, Copy)]
pub struct LocalPlan<'a> {
    pub objective: Objective<f64>,
    pub optim: OptimConfig,
    pub epochs: usize,
    /// FedProx coefficient.
    pub proximal_mu: Option<f64>,
    pub noise: Option<(NoiseSpec, NoiseMode)>,
    pub encryption: Option<(&'a Encryptor, &'a FixedPointCodec)>,
}

/// Mean losses over every batch of a local step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossMeans {
    pub supervised: f64,
    pub regularizer: f64,
}

#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub message: RoundMessage,
    /// `None` when no batch was evaluated.
    pub losses: Option<LossMeans>,
    /// The perturbed prototypes before encryption.
    pub released: Option<PrototypeSet64>,
    pub encrypt_seconds: f64,
}

/// Everything a client keeps private: its data, head and key share.
pub struct ClientState {
    id: u32,
    dataset: ClientDataset64,
    train: Vec<Encoded64>,
    test: Vec<Encoded64>,
    params: HeadParams64,
    batching: RngStream,
    noise: RngStream,
    crypto: RngStream,
    key_share: Option<KeyShare>,
    globals: Option<PrototypeSet64>,
}

impl std::fmt::Debug for ClientState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientState")
            .field("id", &self.id)
            .field("train", &self.train.len())
            .field("test", &self.test.len())
            .field("depth", &self.params.depth())
            .finish_non_exhaustive()
    }
}

impl ClientState {
    pub fn new(
        dataset: ClientDataset64,
        backbone: &BackboneSpec<f64>,
        spec: &HeadSpec,
        seed: u64,
        key_share: Option<KeyShare>,
    ) -> Result<Self> {
        let id = u32::try_from(dataset.client_id).map_err(|_| FedError::Config("client id exceeds u32".into()))?;
        // every client of a given depth starts from the same head
        let mut init = RngStream::new(seed, stream_id(PURPOSE_HEAD_INIT, spec.depth as u32));
        let params = HeadParams64::init(spec, &mut init)?;
        let train = backbone.encode(&dataset.train)?;
        let test = backbone.encode(&dataset.test)?;
        Ok(Self {
            id,
            train,
            test,
            params,
            batching: RngStream::new(seed, stream_id(PURPOSE_BATCHING, id)),
            noise: RngStream::new(seed, stream_id(PURPOSE_NOISE, id)),
            crypto: RngStream::new(seed, stream_id(PURPOSE_ENCRYPT, id)),
            key_share,
            globals: None,
            dataset,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn dataset(&self) -> &ClientDataset<f64> {
        &self.dataset
    }

    pub fn params(&self) -> &HeadParams64 {
        &self.params
    }

    pub fn train_len(&self) -> usize {
        self.train.len()
    }

    pub fn cached_globals(&self) -> Option<&PrototypeSet64> {
        self.globals.as_ref()
    }

    /// Personalized accuracy on the client's test split.
    pub fn accuracy(&self, clip_bound: f64) -> f64 {
        self.params.accuracy(&self.test, clip_bound)
    }

    /// Accuracy of another head (a global model) on this client's test split.
    pub fn accuracy_of(&self, params: &HeadParams64, clip_bound: f64) -> f64 {
        params.accuracy(&self.test, clip_bound)
    }

    pub fn receive_globals(&mut self, globals: PrototypeSet64) -> Result<()> {
        if globals.dim() != self.params.embed_dim() {
            return Err(FedError::Protocol(format!(
                "global prototypes of dim {} for an embedding of dim {}",
                globals.dim(),
                self.params.embed_dim()
            )));
        }
        self.globals = Some(globals);
        Ok(())
    }

    pub fn receive_weights(&mut self, flat: &[f64]) -> Result<()> {
        Ok(self.params.set_flat(flat)?)
    }

    /// `epochs` passes of shuffled mini-batch SGD.
    pub fn train(&mut self, plan: &LocalPlan<'_>, anchor: Option<&[f64]>) -> Result<Option<LossMeans>> {
        let placeholder;
        let globals = match &self.globals {
            Some(g) => g,
            None => {
                placeholder = PrototypeSet64::placeholder(self.params.embed_dim(), self.params.classes());
                &placeholder
            }
        };
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let (mut sup, mut reg, mut batches) = (0.0, 0.0, 0usize);
        for _ in 0..plan.epochs {
            order.shuffle(&mut self.batching);
            for chunk in order.chunks(plan.optim.batch_size) {
                let batch: Vec<Encoded64> = chunk.iter().map(|&i| self.train[i].clone()).collect();
                let (loss, mut grads) = plan.objective.loss_and_grads(&self.params, &batch, globals)?;
                if let (Some(mu), Some(anchor)) = (plan.proximal_mu, anchor) {
                    grads.add_proximal(&self.params, anchor, mu)?;
                }
                sgd_step(&mut self.params, &grads, &plan.optim)?;
                sup += loss.supervised;
                reg += loss.regularizer;
                batches += 1;
            }
        }
        Ok((batches > 0).then(|| LossMeans {
            supervised: sup / batches as f64,
            regularizer: reg / batches as f64,
        }))
    }

    /// Class means of clipped embeddings of the training split.
    pub fn local_prototypes(&self, clip_bound: f64) -> Result<PrototypeSet64> {
        Ok(prototypes_from_encoded(&self.train, &self.params, clip_bound)?)
    }

    /// Local training, prototype computation, perturbation and (optionally)
    /// encryption for one prototype-sharing round.
    pub fn local_training(&mut self, round: u32, plan: &LocalPlan<'_>) -> Result<LocalOutcome> {
        let losses = self.train(plan, None)?;
        let mut locals = self.local_prototypes(plan.objective.clip_bound)?;
        // absent classes travel as zero vectors with count 0, so every
        // update has the same size
        for j in 0..self.params.classes() {
            if locals.get(j).is_none() {
                locals.insert(j, Vector::zeros(locals.dim()), 0)?;
            }
        }
        let released = match plan.noise {
            Some((spec, mode)) => perturb_mode(&locals, &spec, mode, &mut self.noise)?,
            None => locals,
        };
        let (message, encrypt_seconds) = match plan.encryption {
            None => (
                RoundMessage::PlainUpdate { round, client: self.id, prototypes: released.clone() },
                0.0,
            ),
            Some((enc, codec)) => {
                let flat = class_major(&released, self.params.classes())?;
                let start = Instant::now();
                let ciphertexts = encrypt_vector(enc, &flat, codec, &mut self.crypto)?;
                let secs = start.elapsed().as_secs_f64();
                (RoundMessage::EncryptedUpdate { round, client: self.id, ciphertexts }, secs)
            }
        };
        Ok(LocalOutcome { message, losses, released: Some(released), encrypt_seconds })
    }

    /// Local step of weight-averaging methods starting from `global`.
    pub fn weight_training(&mut self, round: u32, global: &[f64], plan: &LocalPlan<'_>) -> Result<LocalOutcome> {
        self.receive_weights(global)?;
        let losses = self.train(plan, plan.proximal_mu.map(|_| global))?;
        let message = RoundMessage::HeadWeights {
            round,
            client: self.id,
            samples: self.train.len() as u64,
            weights: self.params.to_flat(),
        };
        Ok(LocalOutcome { message, losses, released: None, encrypt_seconds: 0.0 })
    }

    pub fn decryption_shares(&self, pk: &PublicKey, ciphertexts: &[Ciphertext]) -> Result<Vec<DecryptionShare>> {
        let share = self
            .key_share
            .as_ref()
            .ok_or_else(|| FedError::Protocol(format!("client {} holds no key share", self.id)))?;
        Ok(partial_decrypt_vector(pk, ciphertexts, share)?)
    }
}

/// Prototype vectors of classes `0..classes` concatenated; every class must
/// be present.
pub fn class_major(set: &PrototypeSet64, classes: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(classes * set.dim());
    for j in 0..classes {
        flat.extend_from_slice(set.vector(j)?.as_slice());
    }
    Ok(flat)
}
