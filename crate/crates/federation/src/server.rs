use fedph_core::mathcore::{stream_id, RngStream, Vector};
use fedph_core::prototype::{aggregate_uniform, aggregate_weighted};
use fedph_core::{HeadParams64, PrototypeSet64};
use fedph_crypto::{combine_vector, decode_vector, sum_vectors, Ciphertext, DecryptionShare, FixedPointCodec, PublicKey};
use rand::seq::index::sample;

use crate::config::Aggregation;
use crate::error::{FedError, Result};

pub(crate) const PURPOSE_SERVER: u32 = 0xF006;

/// Aggregator state. It holds the public key but never a key share or any
/// client data.
#[derive(Debug)]
pub struct ServerState {
    round: u32,
    clients: usize,
    classes: usize,
    globals: PrototypeSet64,
    aggregation: Aggregation,
    public_key: Option<PublicKey>,
    codec: Option<FixedPointCodec>,
    decryption_set: Vec<u32>,
    /// Global head of weight-averaging methods.
    head: Option<HeadParams64>,
    rng: RngStream,
}

impl ServerState {
    pub fn new(
        clients: usize,
        classes: usize,
        embed_dim: usize,
        aggregation: Aggregation,
        encryption: Option<(PublicKey, FixedPointCodec)>,
        seed: u64,
    ) -> Self {
        let (public_key, codec) = encryption.map_or((None, None), |(k, c)| (Some(k), Some(c)));
        Self {
            round: 0,
            clients,
            classes,
            globals: PrototypeSet64::placeholder(embed_dim, classes),
            aggregation,
            public_key,
            codec,
            decryption_set: Vec::new(),
            head: None,
            rng: RngStream::new(seed, stream_id(PURPOSE_SERVER, 0)),
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn globals(&self) -> &PrototypeSet64 {
        &self.globals
    }

    pub fn public_key(&self) -> Option<&PublicKey> {
        self.public_key.as_ref()
    }

    /// Client ids asked for decryption shares in the current round.
    pub fn decryption_set(&self) -> &[u32] {
        &self.decryption_set
    }

    pub(crate) fn rng(&mut self) -> &mut RngStream {
        &mut self.rng
    }

    pub fn global_head(&self) -> Option<&HeadParams64> {
        self.head.as_ref()
    }

    pub fn set_global_head(&mut self, head: HeadParams64) {
        self.head = Some(head);
    }

    /// Replaces the global head with the weighted mean of client heads.
    pub fn aggregate_weights(&mut self, updates: &[(u64, Vec<f64>)]) -> Result<&HeadParams64> {
        let avg = average_weights(updates)?;
        let head = self
            .head
            .as_mut()
            .ok_or_else(|| FedError::Protocol("no global head to update".into()))?;
        head.set_flat(&avg)?;
        Ok(head)
    }

    pub fn begin_round(&mut self) -> u32 {
        self.round += 1;
        self.round
    }

    /// Combines plaintext updates, given in client-id order.
    pub fn aggregate_plain(&mut self, locals: &[PrototypeSet64]) -> Result<&PrototypeSet64> {
        self.globals = match self.aggregation {
            Aggregation::Weighted => aggregate_weighted(locals)?,
            Aggregation::Uniform => aggregate_uniform(locals, self.clients)?,
        };
        Ok(&self.globals)
    }

    /// Homomorphic sum of the clients' ciphertext vectors in client-id order.
    pub fn fold_encrypted(&self, updates: &[Vec<Ciphertext>]) -> Result<Vec<Ciphertext>> {
        let pk = self.key()?;
        let expected = self.classes * self.globals.dim();
        if let Some(bad) = updates.iter().find(|u| u.len() != expected) {
            return Err(FedError::Protocol(format!("{} ciphertexts where {expected} were expected", bad.len())));
        }
        if updates.len() != self.clients {
            return Err(FedError::Protocol(format!("{} updates for {} clients", updates.len(), self.clients)));
        }
        Ok(sum_vectors(pk, updates)?)
    }

    /// Draws a fresh set of `threshold` distinct clients.
    pub fn select_decryption_set(&mut self) -> Result<&[u32]> {
        let k = self.key()?.threshold();
        let mut chosen: Vec<u32> = sample(&mut self.rng, self.clients, k).into_iter().map(|i| i as u32).collect();
        chosen.sort_unstable();
        self.decryption_set = chosen;
        Ok(&self.decryption_set)
    }

    /// Combines the share vectors of the decryption set, decodes the sum of
    /// `m` encodings and stores `sum / m` as the new globals.
    pub fn finish_decryption(&mut self, by_party: &[Vec<DecryptionShare>]) -> Result<&PrototypeSet64> {
        let pk = self.key()?;
        let codec = self.codec.as_ref().ok_or_else(|| FedError::Protocol("no codec configured".into()))?;
        let plains = combine_vector(pk, by_party)?;
        let sums = decode_vector(codec, &plains, self.clients)?;
        let dim = self.globals.dim();
        let inv = 1.0 / self.clients as f64;
        let mut globals = PrototypeSet64::new(dim);
        for (j, chunk) in sums.chunks_exact(dim).enumerate() {
            let mean = Vector::new(chunk.iter().map(|&s| s * inv).collect())?;
            globals.insert(j, mean, self.clients as u64)?;
        }
        self.globals = globals;
        Ok(&self.globals)
    }

    fn key(&self) -> Result<&PublicKey> {
        self.public_key
            .as_ref()
            .ok_or_else(|| FedError::Protocol("encrypted update without a public key".into()))
    }
}

/// Sample-count weighted mean of flattened head parameters.
pub fn average_weights(updates: &[(u64, Vec<f64>)]) -> Result<Vec<f64>> {
    let (_, first) = updates
        .first()
        .ok_or_else(|| FedError::Protocol("no head weights to average".into()))?;
    let total: u64 = updates.iter().map(|(n, _)| n).sum();
    if total == 0 {
        return Err(FedError::Protocol("head weights carry no samples".into()));
    }
    let mut acc = vec![0.0; first.len()];
    for (n, w) in updates {
        if w.len() != acc.len() {
            return Err(FedError::ModelHeterogeneity(format!(
                "head weight vectors of length {} and {}",
                acc.len(),
                w.len()
            )));
        }
        let share = *n as f64 / total as f64;
        acc.iter_mut().zip(w).for_each(|(a, &x)| *a += share * x);
    }
    Ok(acc)
}
