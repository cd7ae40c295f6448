//! Trusted-dealer key generation for threshold Paillier.
//!
//! The modulus is `N = pq` with safe primes `p = 2p' + 1`, `q = 2q' + 1`.
//! The secret exponent `d` satisfies `d = 0 (mod p'q')` and `d = 1 (mod N)`
//! and is Shamir-shared over `Z_{N p' q'}` with a polynomial of degree
//! `threshold - 1`.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, ToPrimitive};
use rand::RngCore;

use crate::error::{CryptoError, Result};
use crate::prime::safe_prime;
use crate::random::random_below;

pub const MIN_MODULUS_BITS: u64 = 256;
pub const MAX_MODULUS_BITS: u64 = 4096;
const MAX_PRIME_WINDOWS: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    parties: usize,
    threshold: usize,
    /// `parties!`
    delta: BigUint,
    /// `(4 delta^2)^-1 mod N`
    combine_factor: BigUint,
}

impl PublicKey {
    /// Rebuilds a key from its modulus and sharing parameters.
    pub fn new(n: BigUint, parties: usize, threshold: usize) -> Result<Self> {
        validate_sharing(parties, threshold)?;
        if n.bits() < MIN_MODULUS_BITS || n.is_even() {
            return Err(CryptoError::InvalidParameter("modulus must be odd and at least 256 bits".into()));
        }
        let delta: BigUint = (1..=parties as u64).map(BigUint::from).product();
        let four_delta_sq = (&delta * &delta * 4u32) % &n;
        let combine_factor = four_delta_sq
            .modinv(&n)
            .ok_or_else(|| CryptoError::InvalidParameter("4 * parties!^2 is not invertible mod N".into()))?;
        Ok(Self {
            n_squared: &n * &n,
            n,
            parties,
            threshold,
            delta,
            combine_factor,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    /// Number of distinct shares needed to decrypt.
    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub(crate) fn delta(&self) -> &BigUint {
        &self.delta
    }

    pub(crate) fn combine_factor(&self) -> &BigUint {
        &self.combine_factor
    }

    /// Short identifier tying shares to this key.
    pub fn key_id(&self) -> u64 {
        self.n.iter_u64_digits().next().unwrap_or(0) ^ self.n.bits()
    }
}

/// One party's share of the decryption exponent.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyShare {
    pub(crate) key_id: u64,
    /// 1-based party index.
    pub(crate) index: usize,
    pub(crate) value: BigUint,
}

impl KeyShare {
    pub fn from_parts(key_id: u64, index: usize, value: BigUint) -> Result<Self> {
        if index == 0 {
            return Err(CryptoError::InvalidParameter("party indices start at 1".into()));
        }
        Ok(Self { key_id, index, value })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

impl std::fmt::Debug for KeyShare {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyShare")
            .field("key_id", &self.key_id)
            .field("index", &self.index)
            .finish_non_exhaustive()
    }
}

fn validate_sharing(parties: usize, threshold: usize) -> Result<()> {
    if threshold < 2 || threshold > parties {
        return Err(CryptoError::InvalidParameter(format!(
            "need 2 <= threshold <= parties, got threshold {threshold} with {parties} parties"
        )));
    }
    if parties > 255 {
        return Err(CryptoError::InvalidParameter("at most 255 parties".into()));
    }
    Ok(())
}

/// Generates a `bits`-bit key and `parties` shares, any `threshold` of which
/// decrypt.
pub fn keygen<R: RngCore + ?Sized>(
    bits: u64,
    parties: usize,
    threshold: usize,
    rng: &mut R,
) -> Result<(PublicKey, Vec<KeyShare>)> {
    validate_sharing(parties, threshold)?;
    if !(MIN_MODULUS_BITS..=MAX_MODULUS_BITS).contains(&bits) || !bits.is_multiple_of(2) {
        return Err(CryptoError::InvalidParameter(format!(
            "modulus bits must be even and within [{MIN_MODULUS_BITS}, {MAX_MODULUS_BITS}], got {bits}"
        )));
    }
    let p = safe_prime(bits / 2, MAX_PRIME_WINDOWS, rng)?;
    let q = loop {
        let q = safe_prime(bits / 2, MAX_PRIME_WINDOWS, rng)?;
        if q != p {
            break q;
        }
    };
    let n = &p * &q;
    debug_assert_eq!(n.bits(), bits);
    let pk = PublicKey::new(n, parties, threshold)?;
    let n = pk.modulus();

    let m_small = (&p >> 1u8) * (&q >> 1u8);
    let inv = m_small
        .modinv(n)
        .ok_or_else(|| CryptoError::InvalidParameter("p'q' not invertible mod N".into()))?;
    let d = &m_small * inv;
    let share_modulus = n * &m_small;

    let mut coeffs = vec![d % &share_modulus];
    coeffs.extend((1..threshold).map(|_| random_below(rng, &share_modulus)));
    let key_id = pk.key_id();
    let shares = (1..=parties)
        .map(|i| {
            let x = BigUint::from(i);
            // Horner evaluation
            let value = coeffs
                .iter()
                .rev()
                .fold(BigUint::ZERO, |acc, c| (acc * &x + c) % &share_modulus);
            KeyShare { key_id, index: i, value }
        })
        .collect();
    Ok((pk, shares))
}

/// `delta * prod_{j != i} j / (j - i)` over `indices`; always an integer.
pub(crate) fn lagrange_at_zero(delta: &BigUint, indices: &[usize], i: usize) -> BigInt {
    let mut num = BigInt::from(delta.clone());
    let mut den = BigInt::one();
    for &j in indices.iter().filter(|&&j| j != i) {
        num *= j as i64;
        den *= j as i64 - i as i64;
    }
    let (quot, rem) = num.div_rem(&den);
    debug_assert!(rem.to_i64() == Some(0));
    quot
}
