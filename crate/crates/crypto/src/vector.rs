//! Coordinate-wise encryption of real vectors.

use num_bigint::BigUint;
use rand::RngCore;

use crate::cipher::{add, combine, partial_decrypt, Ciphertext, DecryptionShare, Encrypt};
use crate::codec::FixedPointCodec;
use crate::error::{CryptoError, Result};
use crate::keys::{KeyShare, PublicKey};

pub fn encrypt_vector<E: Encrypt, R: RngCore + ?Sized>(
    enc: &E,
    v: &[f64],
    codec: &FixedPointCodec,
    rng: &mut R,
) -> Result<Vec<Ciphertext>> {
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            codec
                .encode(x)
                .and_then(|m| enc.encrypt(&m, rng))
                .map_err(CryptoError::at(i))
        })
        .collect()
}

/// Coordinate-wise homomorphic sum of equally long ciphertext vectors.
pub fn sum_vectors(pk: &PublicKey, vectors: &[Vec<Ciphertext>]) -> Result<Vec<Ciphertext>> {
    let (first, rest) = vectors
        .split_first()
        .ok_or_else(|| CryptoError::InvalidParameter("no vectors to sum".into()))?;
    let mut acc = first.clone();
    for v in rest {
        if v.len() != acc.len() {
            return Err(CryptoError::InvalidParameter(format!(
                "vector lengths differ: {} vs {}",
                acc.len(),
                v.len()
            )));
        }
        for (a, c) in acc.iter_mut().zip(v) {
            *a = add(pk, a, c);
        }
    }
    Ok(acc)
}

pub fn partial_decrypt_vector(
    pk: &PublicKey,
    cts: &[Ciphertext],
    share: &KeyShare,
) -> Result<Vec<DecryptionShare>> {
    cts.iter()
        .enumerate()
        .map(|(i, c)| partial_decrypt(pk, c, share).map_err(CryptoError::at(i)))
        .collect()
}

/// Combines per-party share vectors (`by_party[p][i]` is party `p`'s share
/// of coordinate `i`) into plaintexts.
pub fn combine_vector(pk: &PublicKey, by_party: &[Vec<DecryptionShare>]) -> Result<Vec<BigUint>> {
    let len = by_party.first().map_or(0, Vec::len);
    if by_party.iter().any(|p| p.len() != len) {
        return Err(CryptoError::InvalidParameter("share vectors differ in length".into()));
    }
    (0..len)
        .map(|i| {
            let column: Vec<DecryptionShare> = by_party.iter().map(|p| p[i].clone()).collect();
            combine(pk, &column).map_err(CryptoError::at(i))
        })
        .collect()
}

pub fn decode_vector(codec: &FixedPointCodec, plains: &[BigUint], summands: usize) -> Result<Vec<f64>> {
    plains
        .iter()
        .enumerate()
        .map(|(i, p)| codec.decode(p, summands).map_err(CryptoError::at(i)))
        .collect()
}

/// Threshold decryption of a vector that is the sum of `summands`
/// encrypted encodings.
pub fn decrypt_vector(
    pk: &PublicKey,
    cts: &[Ciphertext],
    shares: &[&KeyShare],
    codec: &FixedPointCodec,
    summands: usize,
) -> Result<Vec<f64>> {
    let by_party = shares
        .iter()
        .map(|s| partial_decrypt_vector(pk, cts, s))
        .collect::<Result<Vec<_>>>()?;
    decode_vector(codec, &combine_vector(pk, &by_party)?, summands)
}
