//! Fixed-point encoding of reals into Paillier plaintexts.

use num_bigint::BigUint;
use num_traits::{FromPrimitive, ToPrimitive};

use crate::error::{CryptoError, Result};
use crate::keys::PublicKey;

pub const DEFAULT_FRAC_BITS: u32 = 24;

/// Maps `v` to `round(v * 2^f)`, negatives to `N - |.|`.
///
/// Sums of up to `max_summands` encoded values of magnitude at most
/// `value_bound` never wrap around `N/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointCodec {
    frac_bits: u32,
    value_bound: f64,
    max_summands: usize,
    modulus: BigUint,
    half: BigUint,
}

impl FixedPointCodec {
    pub fn new(pk: &PublicKey, frac_bits: u32, value_bound: f64, max_summands: usize) -> Result<Self> {
        if frac_bits > 52 {
            return Err(CryptoError::InvalidParameter("at most 52 fractional bits".into()));
        }
        if !(value_bound > 0.0) || !value_bound.is_finite() {
            return Err(CryptoError::InvalidParameter("value bound must be finite and > 0".into()));
        }
        if max_summands == 0 {
            return Err(CryptoError::InvalidParameter("max_summands must be positive".into()));
        }
        let scaled = value_bound * (frac_bits as f64).exp2();
        // every decoded magnitude must also be exact as an f64
        if scaled * max_summands as f64 >= 2f64.powi(53) {
            return Err(CryptoError::InvalidParameter(
                "value_bound * max_summands * 2^frac_bits must stay below 2^53".into(),
            ));
        }
        let modulus = pk.modulus().clone();
        let half = &modulus >> 1u8;
        let worst = BigUint::from_f64((scaled + 1.0).ceil() * max_summands as f64)
            .expect("finite positive value");
        if worst >= half {
            return Err(CryptoError::InvalidParameter("codec range exceeds N/2".into()));
        }
        Ok(Self { frac_bits, value_bound, max_summands, modulus, half })
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn value_bound(&self) -> f64 {
        self.value_bound
    }

    pub fn max_summands(&self) -> usize {
        self.max_summands
    }

    /// Quantization step `2^-f`.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }

    pub fn encode(&self, v: f64) -> Result<BigUint> {
        if !v.is_finite() || v.abs() > self.value_bound {
            return Err(CryptoError::ValueOutOfRange { value: v, bound: self.value_bound });
        }
        let k = (v * (self.frac_bits as f64).exp2()).round();
        let mag = BigUint::from_f64(k.abs()).expect("finite");
        Ok(if k < 0.0 { &self.modulus - mag } else { mag })
    }

    /// Decodes a plaintext that is the sum of at most `summands` encodings.
    pub fn decode(&self, p: &BigUint, summands: usize) -> Result<f64> {
        if p >= &self.modulus {
            return Err(CryptoError::PlaintextOutOfRange);
        }
        if summands == 0 || summands > self.max_summands {
            return Err(CryptoError::InvalidParameter(format!(
                "summands must lie in [1, {}], got {summands}",
                self.max_summands
            )));
        }
        let (negative, mag) = if p > &self.half {
            (true, &self.modulus - p)
        } else {
            (false, p.clone())
        };
        let scale = (self.frac_bits as f64).exp2();
        let magnitude = mag.to_f64().unwrap_or(f64::INFINITY);
        let bound = summands as f64 * (self.value_bound * scale + 0.5);
        if magnitude > bound {
            return Err(CryptoError::Wraparound { magnitude, bound });
        }
        let v = magnitude / scale;
        Ok(if negative { -v } else { v })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> PublicKey {
        // 2^255 + 95 is odd; only the modulus matters for the codec
        let n = (BigUint::from(1u32) << 255u8) + 95u32;
        PublicKey::new(n, 3, 2).unwrap()
    }

    #[test]
    fn dyadic_examples() {
        let pk = key();
        let c = FixedPointCodec::new(&pk, 24, 10.0, 5).unwrap();
        let e = c.encode(1.5).unwrap();
        assert_eq!(e, BigUint::from(3u64 << 23));
        assert_eq!(c.decode(&e, 1).unwrap(), 1.5);
        let e = c.encode(-1.5).unwrap();
        assert_eq!(e, pk.modulus() - BigUint::from(3u64 << 23));
        assert_eq!(c.decode(&e, 1).unwrap(), -1.5);
        assert_eq!(c.decode(&c.encode(0.0).unwrap(), 1).unwrap(), 0.0);
    }

    #[test]
    fn bounds_enforced() {
        let pk = key();
        let c = FixedPointCodec::new(&pk, 24, 2.0, 3).unwrap();
        assert!(matches!(c.encode(2.5), Err(CryptoError::ValueOutOfRange { .. })));
        assert!(c.encode(f64::NAN).is_err());
        // a value twice the single-summand bound looks like wraparound
        let big = BigUint::from(5u64 << 24);
        assert!(matches!(c.decode(&big, 1), Err(CryptoError::Wraparound { .. })));
        assert!(c.decode(&big, 3).is_ok());
        // a random-looking residue is rejected
        let junk = pk.modulus() >> 2u8;
        assert!(matches!(c.decode(&junk, 3), Err(CryptoError::Wraparound { .. })));
        assert!(c.decode(&big, 4).is_err());
        assert!(FixedPointCodec::new(&pk, 24, 1e12, 5).is_err());
        assert!(FixedPointCodec::new(&pk, 24, 0.0, 5).is_err());
    }
}
