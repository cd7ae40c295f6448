use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::One;
use rand::RngCore;

/// Uniform integer with at most `bits` bits.
pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    let len = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; len];
    rng.fill_bytes(&mut buf);
    let extra = (len as u64 * 8 - bits) as u32;
    if extra > 0 {
        buf[0] &= 0xff >> extra;
    }
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[0, bound)` by rejection.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(bound.bits() > 0, "empty range");
    loop {
        let x = random_bits(rng, bound.bits());
        if &x < bound {
            return x;
        }
    }
}

/// Uniform unit of `Z_n`.
pub fn random_unit<R: RngCore + ?Sized>(rng: &mut R, n: &BigUint) -> BigUint {
    loop {
        let x = random_below(rng, n);
        if x.bits() > 0 && x.gcd(n).is_one() {
            return x;
        }
    }
}
