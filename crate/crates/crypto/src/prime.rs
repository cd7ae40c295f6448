//! Primality testing and safe-prime generation.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;

use crate::error::{CryptoError, Result};
use crate::random::{random_below, random_bits};

const SIEVE_LIMIT: u32 = 1 << 16;
/// Odd offsets examined per random starting point.
const WINDOW: usize = 1 << 16;
const MR_ROUNDS: usize = 32;

fn small_primes() -> &'static [u32] {
    static PRIMES: std::sync::OnceLock<Vec<u32>> = std::sync::OnceLock::new();
    PRIMES.get_or_init(|| {
        let n = SIEVE_LIMIT as usize;
        let mut composite = vec![false; n];
        let mut out = Vec::new();
        for i in 2..n {
            if !composite[i] {
                out.push(i as u32);
                (i * i..n).step_by(i).for_each(|j| composite[j] = true);
            }
        }
        out
    })
}

/// Miller-Rabin with `rounds` random bases. Exact for `n < 2^32` through
/// trial division.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    if let Some(small) = n.to_u64().filter(|&v| v < u64::from(SIEVE_LIMIT) * u64::from(SIEVE_LIMIT)) {
        if small < 2 {
            return false;
        }
        return small_primes()
            .iter()
            .map(|&p| u64::from(p))
            .take_while(|p| p * p <= small)
            .all(|p| small % p != 0);
    }
    if small_primes().iter().any(|&p| (n % p).is_zero()) {
        return false;
    }
    let one = BigUint::one();
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().expect("n > 1");
    let d = &n_minus_1 >> s;
    let two = BigUint::from(2u32);
    let span = n - 3u32;
    'witness: for _ in 0..rounds {
        let a = random_below(rng, &span) + &two;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// A prime `p = 2q + 1` of exactly `bits` bits with `q` prime and the two
/// top bits of `p` set, so a product of two such primes has exactly
/// `2 * bits` bits.
///
/// Starting points are drawn at random; each one is followed by a sieved
/// window of odd candidates. Gives up after `max_windows` windows.
pub fn safe_prime<R: RngCore + ?Sized>(bits: u64, max_windows: usize, rng: &mut R) -> Result<BigUint> {
    if bits < 16 {
        return Err(CryptoError::InvalidParameter(format!("safe prime of {bits} bits is too small")));
    }
    let primes = small_primes();
    let two = BigUint::from(2u32);
    let q_bits = bits - 1;
    let mut tested = 0;
    for _ in 0..max_windows {
        // q has its top two bits set and is odd
        let mut q = random_bits(rng, q_bits);
        q.set_bit(q_bits - 1, true);
        q.set_bit(q_bits - 2, true);
        q.set_bit(0, true);

        // alive[k] refers to q + 2k
        let mut alive = vec![true; WINDOW];
        for &p in &primes[1..] {
            let p = p as usize;
            let r = (&q % p as u32).to_usize().expect("residue below p");
            let inv2 = p.div_ceil(2);
            // q + 2k = 0 (mod p), or 2(q + 2k) + 1 = 0 (mod p)
            let first = ((p - r) % p) * inv2 % p;
            let second = (((p - 1) / 2 + p - r) % p) * inv2 % p;
            for start in [first, second] {
                (start..WINDOW).step_by(p).for_each(|k| alive[k] = false);
            }
        }
        for k in (0..WINDOW).filter(|&k| alive[k]) {
            let cand = &q + BigUint::from(2 * k);
            if cand.bits() != q_bits {
                break;
            }
            let p = (&cand << 1u8) + 1u32;
            if p <= BigUint::from(SIEVE_LIMIT) {
                continue;
            }
            tested += 1;
            // Fermat base 2 on p, then q prime makes p prime (Pocklington
            // with the factor q > sqrt(p) and gcd(2^2 - 1, p) = 1).
            if two.modpow(&(&p - 1u32), &p).is_one() && is_probable_prime(&cand, MR_ROUNDS, rng) {
                return Ok(p);
            }
        }
    }
    Err(CryptoError::PrimeTimeout { bits, candidates: tested })
}
