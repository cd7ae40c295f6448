//! Encryption, homomorphic addition and threshold decryption.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::RngCore;

use crate::error::{CryptoError, Result};
use crate::keys::{lagrange_at_zero, KeyShare, PublicKey};
use crate::random::{random_bits, random_unit};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext(BigUint);

impl Ciphertext {
    /// Accepts any nonzero value below `N^2`.
    pub fn from_value(pk: &PublicKey, value: BigUint) -> Result<Self> {
        if value.is_zero() || &value >= pk.modulus_squared() {
            return Err(CryptoError::InvalidCiphertext);
        }
        Ok(Self(value))
    }

    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

/// `(1 + N)^m * rn mod N^2` for a precomputed `N`-th power `rn`, using
/// `(1 + N)^m = 1 + mN (mod N^2)`.
fn blind(pk: &PublicKey, m: &BigUint, rn: BigUint) -> Result<Ciphertext> {
    let n = pk.modulus();
    if m >= n {
        return Err(CryptoError::PlaintextOutOfRange);
    }
    let shift = (m * (&rn % n)) % n;
    Ok(Ciphertext((rn + shift * n) % pk.modulus_squared()))
}

/// Anything that can produce randomized ciphertexts under a key.
pub trait Encrypt {
    fn public_key(&self) -> &PublicKey;

    fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &BigUint, rng: &mut R) -> Result<Ciphertext>;
}

/// Textbook encryption with a fresh `r^N` per ciphertext.
impl Encrypt for PublicKey {
    fn public_key(&self) -> &PublicKey {
        self
    }

    fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        encrypt(self, plaintext, rng)
    }
}

pub fn encrypt<R: RngCore + ?Sized>(pk: &PublicKey, plaintext: &BigUint, rng: &mut R) -> Result<Ciphertext> {
    if plaintext >= pk.modulus() {
        return Err(CryptoError::PlaintextOutOfRange);
    }
    let r = random_unit(rng, pk.modulus());
    blind(pk, plaintext, r.modpow(pk.modulus(), pk.modulus_squared()))
}

pub const DEFAULT_EXPONENT_BITS: u64 = 256;
pub const DEFAULT_WINDOW: u32 = 12;

/// Fast encryptor in the Damgard-Jurik-Nielsen style: the blinding factor
/// is `hs^a` for a fixed `hs = h^N mod N^2` (`h = -x^2 mod N`) and a short
/// random exponent `a`, evaluated with a fixed-base comb table. The result
/// is still an `N`-th power, so ciphertexts decrypt as usual.
pub struct Encryptor {
    pk: PublicKey,
    exponent_bits: u64,
    window: u32,
    /// `table[i][v] = hs^(v * 2^(window * i))`
    table: Vec<Vec<BigUint>>,
}

impl std::fmt::Debug for Encryptor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Encryptor")
            .field("bits", &self.pk.bits())
            .field("exponent_bits", &self.exponent_bits)
            .field("window", &self.window)
            .finish()
    }
}

impl Encryptor {
    pub fn new<R: RngCore + ?Sized>(pk: &PublicKey, exponent_bits: u64, window: u32, rng: &mut R) -> Result<Self> {
        if !(64..=4096).contains(&exponent_bits) {
            return Err(CryptoError::InvalidParameter("exponent_bits must lie in [64, 4096]".into()));
        }
        if !(1..=16).contains(&window) {
            return Err(CryptoError::InvalidParameter("window must lie in [1, 16]".into()));
        }
        let (n, n2) = (pk.modulus(), pk.modulus_squared());
        let x = random_unit(rng, n);
        let h = n - (&x * &x) % n;
        let hs = h.modpow(n, n2);
        let chunks = exponent_bits.div_ceil(u64::from(window)) as usize;
        let size = 1usize << window;
        let mut table = Vec::with_capacity(chunks);
        let mut base = hs;
        for _ in 0..chunks {
            let mut row = Vec::with_capacity(size);
            row.push(BigUint::one());
            for v in 1..size {
                let next = (&row[v - 1] * &base) % n2;
                row.push(next);
            }
            base = (&row[size - 1] * &base) % n2;
            table.push(row);
        }
        Ok(Self { pk: pk.clone(), exponent_bits, window, table })
    }

    pub fn with_defaults<R: RngCore + ?Sized>(pk: &PublicKey, rng: &mut R) -> Result<Self> {
        Self::new(pk, DEFAULT_EXPONENT_BITS, DEFAULT_WINDOW, rng)
    }

    fn blinding<R: RngCore + ?Sized>(&self, rng: &mut R) -> BigUint {
        let a = random_bits(rng, self.exponent_bits);
        let n2 = self.pk.modulus_squared();
        let mask = (1u64 << self.window) - 1;
        let mut acc = BigUint::one();
        let mut digits = a.iter_u64_digits().flat_map(|d| (0..64).map(move |b| (d >> b) & 1));
        for row in &self.table {
            let mut v = 0u64;
            for b in 0..self.window {
                v |= digits.next().unwrap_or(0) << b;
            }
            let v = (v & mask) as usize;
            if v != 0 {
                acc = (acc * &row[v]) % n2;
            }
        }
        acc
    }
}

impl Encrypt for Encryptor {
    fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    fn encrypt<R: RngCore + ?Sized>(&self, plaintext: &BigUint, rng: &mut R) -> Result<Ciphertext> {
        if plaintext >= self.pk.modulus() {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        blind(&self.pk, plaintext, self.blinding(rng))
    }
}

/// Ciphertext of the sum of the two plaintexts mod `N`.
pub fn add(pk: &PublicKey, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    Ciphertext((&a.0 * &b.0) % pk.modulus_squared())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecryptionShare {
    /// 1-based party index.
    pub index: usize,
    pub value: BigUint,
}

/// `c^(2 delta s_i) mod N^2`.
pub fn partial_decrypt(pk: &PublicKey, c: &Ciphertext, share: &KeyShare) -> Result<DecryptionShare> {
    if share.key_id() != pk.key_id() || share.index() > pk.parties() {
        return Err(CryptoError::KeyMismatch);
    }
    let exp = share.value() * pk.delta() * 2u32;
    Ok(DecryptionShare {
        index: share.index(),
        value: c.value().modpow(&exp, pk.modulus_squared()),
    })
}

/// Recovers the plaintext from at least `threshold` shares of distinct
/// parties. The first `threshold` distinct parties in `shares` are used.
pub fn combine(pk: &PublicKey, shares: &[DecryptionShare]) -> Result<BigUint> {
    let mut used: Vec<&DecryptionShare> = Vec::with_capacity(pk.threshold());
    for s in shares {
        if s.index == 0 || s.index > pk.parties() {
            return Err(CryptoError::CombineFailed(format!("party index {} out of range", s.index)));
        }
        if used.len() < pk.threshold() && !used.iter().any(|u| u.index == s.index) {
            used.push(s);
        }
    }
    if used.len() < pk.threshold() {
        return Err(CryptoError::ThresholdUnmet { needed: pk.threshold(), got: used.len() });
    }
    let (n, n2) = (pk.modulus(), pk.modulus_squared());
    let indices: Vec<usize> = used.iter().map(|s| s.index).collect();
    let mut acc = BigUint::one();
    for s in &used {
        let mu: BigInt = lagrange_at_zero(pk.delta(), &indices, s.index) * 2u32;
        let (sign, mag) = mu.into_parts();
        let base = if sign == Sign::Minus {
            s.value
                .modinv(n2)
                .ok_or_else(|| CryptoError::CombineFailed("decryption share is not a unit".into()))?
        } else {
            s.value.clone()
        };
        acc = (acc * base.modpow(&mag, n2)) % n2;
    }
    if acc.is_zero() {
        return Err(CryptoError::CombineFailed("combined value is zero".into()));
    }
    let (l, rem) = (acc - 1u32).div_rem(n);
    if !rem.is_zero() {
        return Err(CryptoError::CombineFailed("combined value is not 1 mod N".into()));
    }
    Ok((l * pk.combine_factor()) % n)
}

/// Convenience wrapper: every share holder decrypts `c`, then the shares
/// are combined.
pub fn threshold_decrypt(pk: &PublicKey, c: &Ciphertext, shares: &[&KeyShare]) -> Result<BigUint> {
    let parts = shares
        .iter()
        .map(|s| partial_decrypt(pk, c, s))
        .collect::<Result<Vec<_>>>()?;
    combine(pk, &parts)
}

/// Signed value of a plaintext read as a residue in `(-N/2, N/2]`.
pub fn centered(pk: &PublicKey, m: &BigUint) -> BigInt {
    let n = pk.modulus();
    if m > &(n >> 1u8) {
        BigInt::from(m.clone()) - BigInt::from(n.clone())
    } else {
        BigInt::from(m.clone())
    }
}
