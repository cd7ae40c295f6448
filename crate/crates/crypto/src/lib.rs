//! Threshold Paillier encryption (`s = 1`, trusted dealer) with a
//! fixed-point codec for real vectors.
//!
//! Arithmetic is not constant time and decryption shares carry no
//! correctness proofs. This crate is for simulation, not for protecting
//! real data.

mod cipher;
mod codec;
mod error;
mod keys;
mod prime;
mod random;
mod vector;
pub mod wire;

pub use cipher::{
    add, centered, combine, encrypt, partial_decrypt, threshold_decrypt, Ciphertext,
    DecryptionShare, Encrypt, Encryptor, DEFAULT_EXPONENT_BITS, DEFAULT_WINDOW,
};
pub use codec::{FixedPointCodec, DEFAULT_FRAC_BITS};
pub use error::{CryptoError, Result};
pub use keys::{keygen, KeyShare, PublicKey, MAX_MODULUS_BITS, MIN_MODULUS_BITS};
pub use prime::{is_probable_prime, safe_prime};
pub use random::{random_below, random_bits};
pub use vector::{
    combine_vector, decode_vector, decrypt_vector, encrypt_vector, partial_decrypt_vector,
    sum_vectors,
};
