use std::collections::BTreeMap;
use std::net::{TcpListener, TcpStream};

use fedph_core::mathcore::Vector;
use fedph_core::prototype::{ClassPrototype, PrototypeSet};
use fedph_crypto::{encrypt, keygen, partial_decrypt, Ciphertext, PublicKey};
use fedph_federation::transport::{read_frame, write_frame};
use fedph_federation::{FedError, MemoryTransport, Peer, RoundMessage, TcpTransport, Transport};
use num_bigint::BigUint;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn prototypes(initialized: bool) -> PrototypeSet<f64> {
    let mut entries = BTreeMap::new();
    entries.insert(0, ClassPrototype { vector: Vector::new(vec![0.5, -1.25, 3.0]).unwrap(), count: 7 });
    entries.insert(4, ClassPrototype { vector: Vector::new(vec![-0.0, 1e-300, -2.5]).unwrap(), count: 0 });
    PrototypeSet::from_parts(3, entries, initialized).unwrap()
}

fn key_and_ciphertexts() -> (PublicKey, Vec<Ciphertext>, fedph_crypto::DecryptionShare) {
    let mut rng = StdRng::seed_from_u64(11);
    let (pk, shares) = keygen(256, 3, 2, &mut rng).unwrap();
    let cts: Vec<Ciphertext> = (0..4u32)
        .map(|m| encrypt(&pk, &BigUint::from(m * 1000), &mut rng).unwrap())
        .collect();
    let share = partial_decrypt(&pk, &cts[0], &shares[1]).unwrap();
    (pk, cts, share)
}

fn every_variant() -> (PublicKey, Vec<RoundMessage>) {
    let (pk, cts, share) = key_and_ciphertexts();
    let msgs = vec![
        RoundMessage::GlobalPrototypes { round: 1, prototypes: prototypes(false) },
        RoundMessage::GlobalPrototypes { round: 2, prototypes: prototypes(true) },
        RoundMessage::EncryptedUpdate { round: 3, client: 2, ciphertexts: cts.clone() },
        RoundMessage::PlainUpdate { round: 4, client: 0, prototypes: prototypes(true) },
        RoundMessage::ShareRequest { round: 5, ciphertexts: cts },
        RoundMessage::ShareResponse { round: 6, client: 1, shares: vec![share.clone(), share] },
        RoundMessage::HeadWeights { round: 7, client: 4, samples: 160, weights: vec![0.1, -7.5, 1e10] },
        RoundMessage::HeadWeights { round: 0, client: 0, samples: 0, weights: Vec::new() },
    ];
    (pk, msgs)
}

#[test]
fn every_variant_roundtrips() {
    let (pk, msgs) = every_variant();
    for msg in &msgs {
        let frame = msg.encode();
        assert_eq!(frame[4], 0x01, "version byte");
        let back = RoundMessage::decode(&frame, Some(&pk)).unwrap();
        assert_eq!(&back, msg);
        // the sign of -0.0 survives
        if let RoundMessage::PlainUpdate { prototypes, .. } = &back {
            assert!(prototypes.vector(4).unwrap()[0].is_sign_negative());
        }
    }
}

#[test]
fn frame_layout_is_big_endian() {
    let msg = RoundMessage::HeadWeights { round: 0x0102_0304, client: 9, samples: 2, weights: vec![1.0] };
    let frame = msg.encode();
    let expected: Vec<u8> = [
        &[0u8, 0, 0, 30][..],
        &[0x01, 0x06],
        &[1, 2, 3, 4],
        &[0, 0, 0, 9],
        &[0, 0, 0, 0, 0, 0, 0, 2],
        &[0, 0, 0, 1],
        &1.0f64.to_be_bytes(),
    ]
    .concat();
    assert_eq!(frame, expected);
}

#[test]
fn every_truncation_is_an_error() {
    let (pk, msgs) = every_variant();
    for msg in &msgs {
        let frame = msg.encode();
        for cut in 0..frame.len() {
            assert!(RoundMessage::decode(&frame[..cut], Some(&pk)).is_err(), "{} cut at {cut}", msg.kind());
        }
        // a consistent length prefix over a short payload also fails
        for cut in 6..frame.len() {
            let mut short = frame[..cut].to_vec();
            let len = (cut - 4) as u32;
            short[..4].copy_from_slice(&len.to_be_bytes());
            assert!(matches!(RoundMessage::decode(&short, Some(&pk)), Err(FedError::Codec(_))));
        }
    }
}

#[test]
fn malformed_headers_rejected() {
    let msg = RoundMessage::HeadWeights { round: 1, client: 0, samples: 1, weights: vec![2.0] };
    let frame = msg.encode();

    let mut bad_version = frame.clone();
    bad_version[4] = 0x02;
    assert!(matches!(RoundMessage::decode(&bad_version, None), Err(FedError::Codec(m)) if m.contains("version")));

    let mut bad_tag = frame.clone();
    bad_tag[5] = 0x7f;
    assert!(matches!(RoundMessage::decode(&bad_tag, None), Err(FedError::Codec(m)) if m.contains("tag")));

    let mut trailing = frame.clone();
    trailing.push(0);
    let len = (trailing.len() - 4) as u32;
    trailing[..4].copy_from_slice(&len.to_be_bytes());
    assert!(RoundMessage::decode(&trailing, None).is_err());

    let mut nan = frame;
    let at = nan.len() - 8;
    nan[at..].copy_from_slice(&f64::NAN.to_be_bytes());
    assert!(RoundMessage::decode(&nan, None).is_err());
}

#[test]
fn ciphertexts_need_a_matching_key() {
    let (pk, cts, _) = key_and_ciphertexts();
    let frame = RoundMessage::ShareRequest { round: 1, ciphertexts: cts }.encode();
    assert!(RoundMessage::decode(&frame, None).is_err());
    assert!(RoundMessage::decode(&frame, Some(&pk)).is_ok());
    // zero and values at or above N^2 are not ciphertexts
    for value in [BigUint::ZERO, pk.modulus_squared().clone()] {
        let mut payload = vec![0x01, 0x04, 0, 0, 0, 1, 0, 0, 0, 1];
        fedph_crypto::wire::put_biguint(&mut payload, &value);
        let mut frame = (payload.len() as u32).to_be_bytes().to_vec();
        frame.extend_from_slice(&payload);
        assert!(matches!(RoundMessage::decode(&frame, Some(&pk)), Err(FedError::Codec(_))));
    }
}

#[test]
fn memory_transport_counts_frame_bytes() {
    let (pk, msgs) = every_variant();
    let mut t = MemoryTransport::capturing();
    t.set_public_key(Some(pk));
    let mut expected_sent = 0u64;
    for (i, msg) in msgs.iter().enumerate() {
        let n = t.send(Peer::Client(1), Peer::Server, msg).unwrap();
        assert_eq!(n, msg.encode().len(), "message {i}");
        expected_sent += n as u64;
    }
    assert_eq!(t.meter().peer(Peer::Client(1)).bytes_sent, expected_sent);
    assert_eq!(t.meter().peer(Peer::Server).bytes_received, 0);
    for msg in &msgs {
        assert_eq!(&t.recv(Peer::Client(1), Peer::Server).unwrap(), msg);
    }
    let server = t.meter().peer(Peer::Server);
    assert_eq!(server.bytes_received, expected_sent);
    assert_eq!(server.frames_received, msgs.len() as u64);
    let captured: usize = t.meter().frames().unwrap().iter().map(Vec::len).sum();
    assert_eq!(captured as u64, expected_sent);
    assert!(matches!(t.recv(Peer::Client(1), Peer::Server), Err(FedError::Transport(_))));
}

#[test]
fn tcp_transport_preserves_order_per_pair() {
    let (pk, msgs) = every_variant();
    let mut t = TcpTransport::new();
    t.set_public_key(Some(pk));
    for msg in &msgs {
        t.send(Peer::Server, Peer::Client(0), msg).unwrap();
        t.send(Peer::Server, Peer::Client(1), msg).unwrap();
    }
    // a frame far larger than a socket buffer does not block the sender
    let big = RoundMessage::HeadWeights { round: 9, client: 3, samples: 1, weights: vec![0.25; 1 << 20] };
    t.send(Peer::Client(3), Peer::Server, &big).unwrap();
    for msg in &msgs {
        assert_eq!(&t.recv(Peer::Server, Peer::Client(1)).unwrap(), msg);
    }
    for msg in &msgs {
        assert_eq!(&t.recv(Peer::Server, Peer::Client(0)).unwrap(), msg);
    }
    assert_eq!(t.recv(Peer::Client(3), Peer::Server).unwrap(), big);
    let sent = t.meter().peer(Peer::Server).bytes_sent;
    let received = t.meter().peer(Peer::Client(0)).bytes_received + t.meter().peer(Peer::Client(1)).bytes_received;
    assert_eq!(sent, received);
}

#[test]
fn frames_over_a_raw_socket() {
    let (pk, msgs) = every_variant();
    let listener = TcpListener::bind(("127.0.0.1", 0)).unwrap();
    let addr = listener.local_addr().unwrap();
    let count = msgs.len();
    let peer = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        (0..count).map(|_| read_frame(&mut s).unwrap()).collect::<Vec<_>>()
    });
    let mut stream = TcpStream::connect(addr).unwrap();
    let written: usize = msgs.iter().map(|m| write_frame(&mut stream, m).unwrap()).sum();
    drop(stream);
    let frames = peer.join().unwrap();
    assert_eq!(frames.iter().map(Vec::len).sum::<usize>(), written);
    for (frame, msg) in frames.iter().zip(&msgs) {
        assert_eq!(&RoundMessage::decode(frame, Some(&pk)).unwrap(), msg);
    }
}

#[test]
fn connection_loss_is_an_error() {
    let listener = TcpListener::bind(("127.0.0.1", 0)).unwrap();
    let addr = listener.local_addr().unwrap();
    let peer = std::thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        read_frame(&mut s)
    });
    let mut stream = TcpStream::connect(addr).unwrap();
    let frame = RoundMessage::HeadWeights { round: 1, client: 0, samples: 1, weights: vec![1.0; 8] }.encode();
    std::io::Write::write_all(&mut stream, &frame[..frame.len() / 2]).unwrap();
    drop(stream);
    assert!(matches!(peer.join().unwrap(), Err(FedError::Transport(_))));
}
