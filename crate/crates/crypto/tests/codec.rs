use std::sync::OnceLock;

use fedph_core::mathcore::{standard_normal, uniform, RngStream};
use fedph_crypto::{
    decrypt_vector, encrypt_vector, keygen, sum_vectors, CryptoError, Encryptor,
    FixedPointCodec, KeyShare, PublicKey,
};

const RES: f64 = 1.0 / (1u64 << 24) as f64;

struct Fixture {
    pk: PublicKey,
    shares: Vec<KeyShare>,
    fast: Encryptor,
}

fn fixture() -> &'static Fixture {
    static KEY: OnceLock<Fixture> = OnceLock::new();
    KEY.get_or_init(|| {
        let mut rng = RngStream::new(1, 1);
        let (pk, shares) = keygen(512, 5, 3, &mut rng).unwrap();
        let fast = Encryptor::with_defaults(&pk, &mut rng).unwrap();
        Fixture { pk, shares, fast }
    })
}

/// A random vector of L2 norm at most `bound`.
fn clipped(rng: &mut RngStream, dim: usize, bound: f64) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r = bound * uniform(rng, 0.0, 1.0);
    v.into_iter().map(|x| x / n * r).collect()
}

#[test]
fn quantization_error_is_bounded() {
    let f = fixture();
    let codec = FixedPointCodec::new(&f.pk, 24, 3.0, 5).unwrap();
    let mut rng = RngStream::new(2, 0);
    for _ in 0..10_000 {
        let v = uniform(&mut rng, -3.0, 3.0);
        let back = codec.decode(&codec.encode(v).unwrap(), 1).unwrap();
        assert!((back - v).abs() <= RES, "{v} -> {back}");
    }
}

#[test]
fn vector_roundtrip_384() {
    let f = fixture();
    let codec = FixedPointCodec::new(&f.pk, 24, 1.0, 5).unwrap();
    let mut rng = RngStream::new(3, 0);
    let refs: Vec<&KeyShare> = f.shares.iter().skip(1).take(3).collect();
    let v = clipped(&mut rng, 384, 1.0);
    let cts = encrypt_vector(&f.fast, &v, &codec, &mut rng).unwrap();
    assert_eq!(cts.len(), 384);
    let back = decrypt_vector(&f.pk, &cts, &refs, &codec, 1).unwrap();
    for (a, b) in v.iter().zip(&back) {
        assert!((a - b).abs() <= RES);
    }

    let zero = vec![0.0; 16];
    let cts = encrypt_vector(&f.fast, &zero, &codec, &mut rng).unwrap();
    assert_eq!(decrypt_vector(&f.pk, &cts, &refs, &codec, 1).unwrap(), zero);
}

#[test]
fn homomorphic_vector_sum() {
    let f = fixture();
    let bound = 1.0;
    let codec = FixedPointCodec::new(&f.pk, 24, bound, 5).unwrap();
    let mut rng = RngStream::new(4, 0);
    let refs: Vec<&KeyShare> = f.shares.iter().take(3).collect();
    for _ in 0..3 {
        let vs: Vec<Vec<f64>> = (0..5).map(|_| clipped(&mut rng, 64, bound)).collect();
        let cts: Vec<_> = vs
            .iter()
            .map(|v| encrypt_vector(&f.fast, v, &codec, &mut rng).unwrap())
            .collect();
        let sum = sum_vectors(&f.pk, &cts).unwrap();
        let got = decrypt_vector(&f.pk, &sum, &refs, &codec, 5).unwrap();
        for k in 0..64 {
            let want: f64 = vs.iter().map(|v| v[k]).sum();
            assert!((got[k] - want).abs() <= 5.0 * RES);
        }
    }
}

#[test]
fn coordinate_errors_carry_the_index() {
    let f = fixture();
    let codec = FixedPointCodec::new(&f.pk, 24, 1.0, 5).unwrap();
    let mut rng = RngStream::new(5, 0);
    let err = encrypt_vector(&f.fast, &[0.5, -0.25, 7.0], &codec, &mut rng).unwrap_err();
    match err {
        CryptoError::Coordinate { index, source } => {
            assert_eq!(index, 2);
            assert!(matches!(*source, CryptoError::ValueOutOfRange { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
    let a = encrypt_vector(&f.fast, &[0.5], &codec, &mut rng).unwrap();
    let b = encrypt_vector(&f.fast, &[0.5, 0.5], &codec, &mut rng).unwrap();
    assert!(sum_vectors(&f.pk, &[a, b]).is_err());
}
