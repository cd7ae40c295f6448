//! Big-endian byte encoding. Big integers are a `u32` byte count followed
//! by the magnitude; key material starts with a one-byte type tag.

use num_bigint::BigUint;

use crate::cipher::{Ciphertext, DecryptionShare};
use crate::error::{CryptoError, Result};
use crate::keys::{KeyShare, PublicKey};

pub const TAG_PUBLIC_KEY: u8 = 0x50;
pub const TAG_KEY_SHARE: u8 = 0x51;
pub const TAG_DECRYPTION_SHARE: u8 = 0x52;

pub fn put_u8(buf: &mut Vec<u8>, v: u8) {
    buf.push(v);
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_be_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_be_bytes());
}

pub fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_be_bytes());
}

/// Count-prefixed length that must fit in a `u32`.
pub fn put_len(buf: &mut Vec<u8>, len: usize) {
    put_u32(buf, u32::try_from(len).expect("length fits in u32"));
}

pub fn put_biguint(buf: &mut Vec<u8>, v: &BigUint) {
    let bytes = if v.bits() == 0 { Vec::new() } else { v.to_bytes_be() };
    put_len(buf, bytes.len());
    buf.extend_from_slice(&bytes);
}

/// Cursor over an input buffer; every read checks the remaining length.
#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(CryptoError::Decode(format!(
                "need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        self.array().map(u32::from_be_bytes)
    }

    pub fn u64(&mut self) -> Result<u64> {
        self.array().map(u64::from_be_bytes)
    }

    pub fn f64(&mut self) -> Result<f64> {
        self.array().map(f64::from_be_bytes)
    }

    /// A count prefix, rejected when `count * min_item_bytes` exceeds what
    /// is left (so corrupt counts cannot trigger huge allocations).
    pub fn len(&mut self, min_item_bytes: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item_bytes) > self.remaining() {
            return Err(CryptoError::Decode(format!("count {n} exceeds the remaining input")));
        }
        Ok(n)
    }

    pub fn biguint(&mut self) -> Result<BigUint> {
        let n = self.len(1)?;
        Ok(BigUint::from_bytes_be(self.take(n)?))
    }

    pub fn expect_tag(&mut self, tag: u8) -> Result<()> {
        let got = self.u8()?;
        if got != tag {
            return Err(CryptoError::Decode(format!("expected tag {tag:#04x}, found {got:#04x}")));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(CryptoError::Decode(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

impl Ciphertext {
    pub fn write(&self, buf: &mut Vec<u8>) {
        put_biguint(buf, self.value());
    }

    pub fn read(r: &mut Reader<'_>, pk: &PublicKey) -> Result<Self> {
        Ciphertext::from_value(pk, r.biguint()?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf);
        buf
    }

    pub fn from_bytes(bytes: &[u8], pk: &PublicKey) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let c = Self::read(&mut r, pk)?;
        r.finish()?;
        Ok(c)
    }
}

impl PublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![TAG_PUBLIC_KEY];
        put_len(&mut buf, self.parties());
        put_len(&mut buf, self.threshold());
        put_biguint(&mut buf, self.modulus());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_tag(TAG_PUBLIC_KEY)?;
        let parties = r.u32()? as usize;
        let threshold = r.u32()? as usize;
        let n = r.biguint()?;
        r.finish()?;
        PublicKey::new(n, parties, threshold)
    }
}

impl KeyShare {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = vec![TAG_KEY_SHARE];
        put_u64(&mut buf, self.key_id());
        put_len(&mut buf, self.index());
        put_biguint(&mut buf, self.value());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_tag(TAG_KEY_SHARE)?;
        let key_id = r.u64()?;
        let index = r.u32()? as usize;
        let value = r.biguint()?;
        r.finish()?;
        KeyShare::from_parts(key_id, index, value)
    }
}

impl DecryptionShare {
    pub fn write(&self, buf: &mut Vec<u8>) {
        put_u8(buf, TAG_DECRYPTION_SHARE);
        put_len(buf, self.index);
        put_biguint(buf, &self.value);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self> {
        r.expect_tag(TAG_DECRYPTION_SHARE)?;
        let index = r.u32()? as usize;
        Ok(Self { index, value: r.biguint()? })
    }
}
