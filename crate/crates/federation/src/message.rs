//! Round messages and their frame encoding.
//!
//! A frame is a big-endian `u32` payload length followed by the payload:
//! protocol version, message tag, then the fields in declaration order.
//! Integers are big-endian, reals are IEEE 754 binary64, vectors and big
//! integers carry a `u32` count prefix.

use std::collections::BTreeMap;

use fedph_core::mathcore::Vector;
use fedph_core::prototype::{ClassPrototype, PrototypeSet};
use fedph_crypto::wire::{put_biguint, put_f64, put_len, put_u32, put_u64, put_u8, Reader};
use fedph_crypto::{Ciphertext, CryptoError, DecryptionShare, PublicKey};

use crate::error::{FedError, Result};

pub const PROTOCOL_VERSION: u8 = 0x01;
/// Frames above this size are rejected before allocation.
pub const MAX_FRAME: usize = 1 << 30;

const TAG_GLOBAL_PROTOTYPES: u8 = 0x01;
const TAG_ENCRYPTED_UPDATE: u8 = 0x02;
const TAG_PLAIN_UPDATE: u8 = 0x03;
const TAG_SHARE_REQUEST: u8 = 0x04;
const TAG_SHARE_RESPONSE: u8 = 0x05;
const TAG_HEAD_WEIGHTS: u8 = 0x06;

/// Everything that crosses the wire. No variant can hold a sample.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    GlobalPrototypes {
        round: u32,
        prototypes: PrototypeSet<f64>,
    },
    /// Class-major ciphertexts of the client's prototype vectors.
    EncryptedUpdate {
        round: u32,
        client: u32,
        ciphertexts: Vec<Ciphertext>,
    },
    PlainUpdate {
        round: u32,
        client: u32,
        prototypes: PrototypeSet<f64>,
    },
    ShareRequest {
        round: u32,
        ciphertexts: Vec<Ciphertext>,
    },
    ShareResponse {
        round: u32,
        client: u32,
        shares: Vec<DecryptionShare>,
    },
    /// Flattened head parameters. `client` is the sender or recipient;
    /// `samples` weights the average and is zero on broadcasts.
    HeadWeights {
        round: u32,
        client: u32,
        samples: u64,
        weights: Vec<f64>,
    },
}

impl RoundMessage {
    pub fn round(&self) -> u32 {
        match self {
            Self::GlobalPrototypes { round, .. }
            | Self::EncryptedUpdate { round, .. }
            | Self::PlainUpdate { round, .. }
            | Self::ShareRequest { round, .. }
            | Self::ShareResponse { round, .. }
            | Self::HeadWeights { round, .. } => *round,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::GlobalPrototypes { .. } => "GlobalPrototypes",
            Self::EncryptedUpdate { .. } => "EncryptedUpdate",
            Self::PlainUpdate { .. } => "PlainUpdate",
            Self::ShareRequest { .. } => "ShareRequest",
            Self::ShareResponse { .. } => "ShareResponse",
            Self::HeadWeights { .. } => "HeadWeights",
        }
    }

    /// Number of model-related values carried (prototype coordinates,
    /// ciphertexts or parameters).
    pub fn payload_values(&self) -> usize {
        match self {
            Self::GlobalPrototypes { prototypes, .. } | Self::PlainUpdate { prototypes, .. } => {
                prototypes.len() * prototypes.dim()
            }
            Self::EncryptedUpdate { ciphertexts, .. } | Self::ShareRequest { ciphertexts, .. } => {
                ciphertexts.len()
            }
            Self::ShareResponse { shares, .. } => shares.len(),
            Self::HeadWeights { weights, .. } => weights.len(),
        }
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; 4];
        put_u8(&mut buf, PROTOCOL_VERSION);
        match self {
            Self::GlobalPrototypes { round, prototypes } => {
                put_u8(&mut buf, TAG_GLOBAL_PROTOTYPES);
                put_u32(&mut buf, *round);
                put_prototypes(&mut buf, prototypes);
            }
            Self::EncryptedUpdate { round, client, ciphertexts } => {
                put_u8(&mut buf, TAG_ENCRYPTED_UPDATE);
                put_u32(&mut buf, *round);
                put_u32(&mut buf, *client);
                put_ciphertexts(&mut buf, ciphertexts);
            }
            Self::PlainUpdate { round, client, prototypes } => {
                put_u8(&mut buf, TAG_PLAIN_UPDATE);
                put_u32(&mut buf, *round);
                put_u32(&mut buf, *client);
                put_prototypes(&mut buf, prototypes);
            }
            Self::ShareRequest { round, ciphertexts } => {
                put_u8(&mut buf, TAG_SHARE_REQUEST);
                put_u32(&mut buf, *round);
                put_ciphertexts(&mut buf, ciphertexts);
            }
            Self::ShareResponse { round, client, shares } => {
                put_u8(&mut buf, TAG_SHARE_RESPONSE);
                put_u32(&mut buf, *round);
                put_u32(&mut buf, *client);
                put_len(&mut buf, shares.len());
                shares.iter().for_each(|s| s.write(&mut buf));
            }
            Self::HeadWeights { round, client, samples, weights } => {
                put_u8(&mut buf, TAG_HEAD_WEIGHTS);
                put_u32(&mut buf, *round);
                put_u32(&mut buf, *client);
                put_u64(&mut buf, *samples);
                put_len(&mut buf, weights.len());
                weights.iter().for_each(|&w| put_f64(&mut buf, w));
            }
        }
        let len = u32::try_from(buf.len() - 4).expect("frame below 4 GiB");
        buf[..4].copy_from_slice(&len.to_be_bytes());
        buf
    }

    /// Decodes one complete frame. Ciphertexts are checked against `key`,
    /// which must be present for ciphertext-carrying messages.
    pub fn decode(frame: &[u8], key: Option<&PublicKey>) -> Result<Self> {
        let mut r = Reader::new(frame);
        let len = r.u32().map_err(codec)? as usize;
        if len != r.remaining() {
            return Err(FedError::Codec(format!(
                "frame announces {len} payload bytes, {} present",
                r.remaining()
            )));
        }
        Self::decode_payload(&frame[4..], key)
    }

    pub fn decode_payload(payload: &[u8], key: Option<&PublicKey>) -> Result<Self> {
        let mut r = Reader::new(payload);
        let version = r.u8().map_err(codec)?;
        if version != PROTOCOL_VERSION {
            return Err(FedError::Codec(format!("unsupported protocol version {version:#04x}")));
        }
        let tag = r.u8().map_err(codec)?;
        let round = r.u32().map_err(codec)?;
        let msg = match tag {
            TAG_GLOBAL_PROTOTYPES => Self::GlobalPrototypes { round, prototypes: read_prototypes(&mut r)? },
            TAG_ENCRYPTED_UPDATE => Self::EncryptedUpdate {
                round,
                client: r.u32().map_err(codec)?,
                ciphertexts: read_ciphertexts(&mut r, key)?,
            },
            TAG_PLAIN_UPDATE => Self::PlainUpdate {
                round,
                client: r.u32().map_err(codec)?,
                prototypes: read_prototypes(&mut r)?,
            },
            TAG_SHARE_REQUEST => Self::ShareRequest { round, ciphertexts: read_ciphertexts(&mut r, key)? },
            TAG_SHARE_RESPONSE => {
                let client = r.u32().map_err(codec)?;
                let n = r.len(6).map_err(codec)?;
                let shares = (0..n)
                    .map(|_| DecryptionShare::read(&mut r))
                    .collect::<Result<_, CryptoError>>()
                    .map_err(codec)?;
                Self::ShareResponse { round, client, shares }
            }
            TAG_HEAD_WEIGHTS => {
                let client = r.u32().map_err(codec)?;
                let samples = r.u64().map_err(codec)?;
                let n = r.len(8).map_err(codec)?;
                let weights = read_reals(&mut r, n)?;
                Self::HeadWeights { round, client, samples, weights }
            }
            other => return Err(FedError::Codec(format!("unknown message tag {other:#04x}"))),
        };
        r.finish().map_err(codec)?;
        Ok(msg)
    }
}

fn codec(e: CryptoError) -> FedError {
    FedError::Codec(e.to_string())
}

fn put_prototypes(buf: &mut Vec<u8>, p: &PrototypeSet<f64>) {
    put_u8(buf, u8::from(p.is_initialized()));
    put_len(buf, p.dim());
    put_len(buf, p.len());
    for (class, proto) in p.iter() {
        put_len(buf, class);
        put_u64(buf, proto.count);
        put_len(buf, proto.vector.dim());
        proto.vector.as_slice().iter().for_each(|&v| put_f64(buf, v));
    }
}

fn read_reals(r: &mut Reader<'_>, n: usize) -> Result<Vec<f64>> {
    let out = (0..n).map(|_| r.f64()).collect::<Result<Vec<f64>, _>>().map_err(codec)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(FedError::Codec("non-finite real".into()));
    }
    Ok(out)
}

fn read_prototypes(r: &mut Reader<'_>) -> Result<PrototypeSet<f64>> {
    let flags = r.u8().map_err(codec)?;
    if flags > 1 {
        return Err(FedError::Codec(format!("unknown prototype flags {flags:#04x}")));
    }
    let dim = r.u32().map_err(codec)? as usize;
    let n = r.len(16).map_err(codec)?;
    let mut entries = BTreeMap::new();
    for _ in 0..n {
        let class = r.u32().map_err(codec)? as usize;
        let count = r.u64().map_err(codec)?;
        let len = r.len(8).map_err(codec)?;
        if len != dim {
            return Err(FedError::Codec(format!("prototype of length {len} in a set of dim {dim}")));
        }
        let vector = Vector::new(read_reals(r, len)?)?;
        if entries.insert(class, ClassPrototype { vector, count }).is_some() {
            return Err(FedError::Codec(format!("class {class} repeated")));
        }
    }
    Ok(PrototypeSet::from_parts(dim, entries, flags == 1)?)
}

fn put_ciphertexts(buf: &mut Vec<u8>, cts: &[Ciphertext]) {
    put_len(buf, cts.len());
    cts.iter().for_each(|c| put_biguint(buf, c.value()));
}

fn read_ciphertexts(r: &mut Reader<'_>, key: Option<&PublicKey>) -> Result<Vec<Ciphertext>> {
    let key = key.ok_or_else(|| FedError::Codec("ciphertexts received without a public key".into()))?;
    let n = r.len(4).map_err(codec)?;
    (0..n)
        .map(|_| Ciphertext::read(r, key).map_err(codec))
        .collect()
}
