use fedph_core::datagen::generate;
use fedph_core::privacy::{DpConfig, NoiseMode};
use fedph_core::prototype::{aggregate_uniform, local_prototypes};
use fedph_core::PrototypeSet64;
use fedph_crypto::PublicKey;
use fedph_federation::{
    run_experiment, Aggregation, CryptoConfig, Experiment, ExperimentConfig, FedError, MemoryTransport, Method,
    Meter, Peer, RoundMessage, TcpTransport, TransportKind, Transport,
};

fn small(method: Method) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(method);
    cfg.rounds = 3;
    cfg.seed = 5;
    cfg.clip_bound = 2.0;
    cfg.data.samples_per_client = 60;
    cfg.model.feature_dim = 96;
    cfg
}

fn dp(mode: NoiseMode) -> DpConfig {
    DpConfig { epsilon: 1.0, delta: 1e-5, min_honest: 3, mode }
}

/// Present classes of `a` match `b` bit for bit, and `a` has nothing else
/// except zero-count padding.
fn assert_same_present(a: &PrototypeSet64, b: &PrototypeSet64) {
    for (j, p) in a.iter() {
        match b.get(j) {
            Some(q) => {
                assert_eq!(p.count, q.count, "class {j}");
                assert_eq!(p.vector.as_slice(), q.vector.as_slice(), "class {j}");
            }
            None => assert_eq!(p.count, 0, "class {j} only in the update"),
        }
    }
    assert!(b.classes().all(|j| a.get(j).is_some()));
}

fn encrypted_replay(dp: Option<DpConfig>) {
    let mut cfg = small(Method::FedPh);
    cfg.rounds = 5;
    cfg.dp = dp;
    cfg.crypto = Some(CryptoConfig { min_honest: Some(3), ..CryptoConfig::default() });
    let mut exp = Experiment::new(cfg).unwrap();
    exp.record_releases(true);
    let mut t = MemoryTransport::new();
    let tolerance = 5.0 * (-24f64).exp2();
    for round in 1..=5 {
        let row = exp.step(&mut t).unwrap();
        assert_eq!(row.round, round);
        assert_eq!(row.uplink_values, 6.0 * 64.0);
        let oracle = aggregate_uniform(exp.last_releases(), 5).unwrap();
        let globals = exp.server().globals();
        assert_eq!(globals.len(), 6);
        let diff = globals.max_abs_diff(&oracle).unwrap();
        assert!(diff <= tolerance, "round {round}: {diff}");
        assert!(globals.iter().all(|(_, p)| p.count == 5));
        assert_eq!(exp.server().decryption_set().len(), 3);
    }
}

#[test]
fn encrypted_globals_match_plaintext_uniform_mean() {
    encrypted_replay(None);
}

#[test]
fn encrypted_globals_match_replayed_noisy_releases() {
    encrypted_replay(Some(dp(NoiseMode::Split)));
}

#[test]
fn decryption_sets_are_redrawn() {
    let mut cfg = small(Method::FedPh);
    cfg.rounds = 0;
    cfg.local_epochs = 0;
    cfg.crypto = Some(CryptoConfig::default());
    let mut exp = Experiment::new(cfg).unwrap();
    let mut t = MemoryTransport::new();
    let sets: Vec<Vec<u32>> = (0..6)
        .map(|_| {
            exp.step(&mut t).unwrap();
            exp.server().decryption_set().to_vec()
        })
        .collect();
    // m = 5, t = 2 by default, so 4 shares per round
    assert!(sets.iter().all(|s| s.len() == 4));
    assert!(sets.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn runs_are_deterministic() {
    let mut plain = small(Method::FedPh);
    plain.dp = Some(dp(NoiseMode::Split));
    let mut enc = plain.clone();
    enc.rounds = 2;
    enc.crypto = Some(CryptoConfig::default());
    for cfg in [plain, enc, small(Method::FedProx), small(Method::Solo)] {
        let a = run_experiment(&cfg).unwrap().without_timing();
        let b = run_experiment(&cfg).unwrap().without_timing();
        assert_eq!(a, b, "{}", cfg.method);
    }
}

#[test]
fn seeds_change_the_run() {
    let cfg = small(Method::FedPh);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(
        run_experiment(&cfg).unwrap().accuracy_trajectory(),
        run_experiment(&other).unwrap().accuracy_trajectory()
    );
}

#[test]
fn tcp_and_memory_transports_agree() {
    let mut cfg = small(Method::FedPh);
    cfg.rounds = 2;
    cfg.crypto = Some(CryptoConfig::default());
    let mem = run_experiment(&cfg).unwrap().without_timing();
    cfg.transport = TransportKind::Tcp;
    let tcp = run_experiment(&cfg).unwrap().without_timing();
    assert_eq!(mem, tcp);
}

fn same_trajectory(a: &ExperimentConfig, b: &ExperimentConfig) {
    let ta = run_experiment(a).unwrap();
    let tb = run_experiment(b).unwrap();
    assert_eq!(ta.rows.len(), tb.rows.len());
    for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
        assert_eq!(ra.client_accuracies, rb.client_accuracies, "round {}", ra.round);
        assert_eq!(ra.supervised_loss, rb.supervised_loss, "round {}", ra.round);
        assert_eq!(ra.uplink_bytes, rb.uplink_bytes);
    }
}

#[test]
fn fedprox_without_proximal_term_is_fedavg() {
    let avg = small(Method::FedAvg);
    let mut prox = avg.with_method(Method::FedProx);
    prox.fedprox_mu = Some(0.0);
    same_trajectory(&avg, &prox);
    // and a positive coefficient does change it
    prox.fedprox_mu = Some(1.0);
    let a = run_experiment(&avg).unwrap();
    let p = run_experiment(&prox).unwrap();
    assert_ne!(a.rows.last().unwrap().supervised_loss, p.rows.last().unwrap().supervised_loss);
}

#[test]
fn fedph_without_regularizer_is_fedproto_without_regularizer() {
    let mut ph = small(Method::FedPh);
    ph.loss.lambda = 0.0;
    ph.aggregation = Some(Aggregation::Uniform);
    let mut proto = ph.with_method(Method::FedProto);
    proto.fedproto_reg = Some(0.0);
    same_trajectory(&ph, &proto);
}

#[test]
fn zero_epochs_release_untrained_prototypes() {
    let mut cfg = small(Method::FedPh);
    cfg.local_epochs = 0;
    let mut exp = Experiment::new(cfg).unwrap();
    exp.record_releases(true);
    let before: Vec<Vec<f64>> = exp.clients().iter().map(|c| c.params().to_flat()).collect();
    let row = exp.step(&mut MemoryTransport::new()).unwrap();
    assert_eq!(row.supervised_loss, None);
    assert_eq!(row.regularizer_loss, None);
    for (c, (flat, released)) in exp.clients().iter().zip(before.iter().zip(exp.last_releases())) {
        assert_eq!(&c.params().to_flat(), flat);
        let oracle = local_prototypes(c.dataset(), c.params(), exp.backbone(), 2.0).unwrap();
        assert_same_present(released, &oracle);
    }
}

#[test]
fn plain_updates_equal_standalone_local_prototypes() {
    let mut exp = Experiment::new(small(Method::FedPh)).unwrap();
    exp.record_releases(true);
    let mut t = MemoryTransport::new();
    for _ in 0..2 {
        exp.step(&mut t).unwrap();
        for (c, released) in exp.clients().iter().zip(exp.last_releases()) {
            let oracle = local_prototypes(c.dataset(), c.params(), exp.backbone(), 2.0).unwrap();
            assert_same_present(released, &oracle);
            // padded to all six classes
            assert_eq!(released.len(), 6);
        }
    }
}

#[test]
fn zero_rounds_give_only_the_initial_row() {
    let mut cfg = small(Method::FedPh);
    cfg.rounds = 0;
    let table = run_experiment(&cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].round, 0);
    assert_eq!(table.rows[0].uplink_bytes, 0.0);
}

#[test]
fn row_per_round_with_bounded_accuracies() {
    for method in Method::ALL {
        let table = run_experiment(&small(method).with_method(method)).unwrap();
        assert_eq!(table.rows.len(), 4, "{method}");
        for (i, row) in table.rows.iter().enumerate() {
            assert_eq!(row.round as usize, i);
            assert_eq!(row.client_accuracies.len(), 5);
            assert!(row.client_accuracies.iter().all(|a| (0.0..=1.0).contains(a)));
            let mean = row.client_accuracies.iter().sum::<f64>() / 5.0;
            assert!((row.mean_accuracy - mean).abs() < 1e-15);
        }
    }
}

#[test]
fn single_client_globals_are_its_own_prototypes() {
    let mut cfg = small(Method::FedPh);
    cfg.clients = 1;
    let mut exp = Experiment::new(cfg).unwrap();
    exp.record_releases(true);
    exp.step(&mut MemoryTransport::new()).unwrap();
    let released = &exp.last_releases()[0];
    let globals = exp.server().globals();
    let present: Vec<usize> = released.iter().filter(|(_, p)| p.count > 0).map(|(j, _)| j).collect();
    assert_eq!(globals.classes().collect::<Vec<_>>(), present);
    for j in present {
        assert_eq!(globals.get(j), released.get(j));
    }
}

#[test]
fn single_client_fedavg_keeps_its_weights() {
    let mut cfg = small(Method::FedAvg);
    cfg.clients = 1;
    let mut exp = Experiment::new(cfg).unwrap();
    let initial = exp.server().global_head().unwrap().to_flat();
    exp.step(&mut MemoryTransport::new()).unwrap();
    let global = exp.server().global_head().unwrap().to_flat();
    assert_eq!(global, exp.clients()[0].params().to_flat());
    assert_ne!(global, initial);
}

#[test]
fn uplink_sizes_at_default_widths() {
    let mut ph = ExperimentConfig::new(Method::FedPh);
    ph.rounds = 1;
    let ph_row = run_experiment(&ph).unwrap().rows[1].clone();
    assert_eq!(ph_row.uplink_values, 384.0);
    let avg = ph.with_method(Method::FedAvg);
    let avg_row = run_experiment(&avg).unwrap().rows[1].clone();
    assert_eq!(avg_row.uplink_values, 33_222.0);
    assert!(avg_row.uplink_values / ph_row.uplink_values >= 80.0);
    assert!(avg_row.uplink_bytes / ph_row.uplink_bytes >= 80.0);

    let mut enc = ph.clone();
    enc.crypto = Some(CryptoConfig::default());
    let enc_row = run_experiment(&enc).unwrap().rows[1].clone();
    assert_eq!(enc_row.uplink_values, 384.0);
    assert!(enc_row.encrypt_ms.unwrap() > 0.0);
}

#[test]
fn mixed_depths_block_weight_averaging_only() {
    let mut ph = small(Method::FedPh);
    ph.projection_depths = Some(vec![1, 2, 1, 2, 2]);
    let table = run_experiment(&ph).unwrap();
    assert_eq!(table.rows.len(), 4);
    for method in [Method::FedAvg, Method::FedProx] {
        let err = run_experiment(&ph.with_method(method)).unwrap_err();
        assert!(matches!(err, FedError::ModelHeterogeneity(_)), "{err}");
    }
    run_experiment(&ph.with_method(Method::FedProto)).unwrap();
    run_experiment(&ph.with_method(Method::Solo)).unwrap();
}

/// Delivers everything except the uploads of one client.
struct Lossy {
    inner: MemoryTransport,
    drop_from: u32,
}

impl Transport for Lossy {
    fn send(&mut self, from: Peer, to: Peer, msg: &RoundMessage) -> fedph_federation::Result<usize> {
        if from == Peer::Client(self.drop_from) && to == Peer::Server {
            return Ok(msg.encode().len());
        }
        self.inner.send(from, to, msg)
    }

    fn recv(&mut self, from: Peer, to: Peer) -> fedph_federation::Result<RoundMessage> {
        self.inner.recv(from, to)
    }

    fn set_public_key(&mut self, key: Option<PublicKey>) {
        self.inner.set_public_key(key)
    }

    fn meter(&self) -> &Meter {
        self.inner.meter()
    }
}

#[test]
fn missing_update_aborts_the_round() {
    for method in [Method::FedPh, Method::FedAvg] {
        let mut exp = Experiment::new(small(method)).unwrap();
        let before = exp.server().globals().clone();
        let mut t = Lossy { inner: MemoryTransport::new(), drop_from: 2 };
        let err = exp.step(&mut t).unwrap_err();
        assert!(matches!(err, FedError::MissingUpdate { round: 1, client: 2 }), "{err}");
        // no partial aggregation
        assert_eq!(exp.server().globals(), &before);
    }
}

#[test]
fn divergence_is_reported_with_context() {
    let mut cfg = small(Method::FedPh);
    cfg.optim.learning_rate = 1e300;
    cfg.optim.momentum = 0.0;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, FedError::Round { .. }), "{err}");
    assert!(matches!(err.root(), FedError::Core(fedph_core::Error::Divergence(_))), "{err}");
    assert!(err.to_string().contains("client"));
}

#[test]
fn raw_features_never_leave_a_client() {
    let mut cfg = small(Method::FedPh);
    cfg.rounds = 2;
    let mut datasets = generate::<f64>(&cfg.effective_data()).unwrap();
    let mut canaries = Vec::new();
    for (i, d) in datasets.iter_mut().enumerate() {
        for (k, s) in d.train.iter_mut().chain(d.test.iter_mut()).enumerate() {
            let v = 1234.5678 + (i * 1000 + k) as f64 / 4096.0;
            let mut x = s.x.as_slice().to_vec();
            let at = k % x.len();
            x[at] = v;
            s.x = fedph_core::mathcore::Vector::new(x).unwrap();
            canaries.push(v.to_be_bytes());
        }
    }
    for method in [Method::FedPh, Method::FedAvg] {
        let mut exp = Experiment::with_datasets(cfg.with_method(method), datasets.clone()).unwrap();
        let mut t = MemoryTransport::capturing();
        exp.run(&mut t).unwrap();
        let frames = t.meter().frames().unwrap();
        assert!(!frames.is_empty());
        for frame in frames {
            for c in &canaries {
                assert!(!frame.windows(8).any(|w| w == c), "{method}: canary in a frame");
            }
        }
    }
}

#[test]
fn message_variants_cannot_hold_samples() {
    let src = include_str!("../src/message.rs");
    for forbidden in ["Sample", "ClientDataset", "Encoded", "KeyShare"] {
        assert!(!src.contains(forbidden), "message module mentions {forbidden}");
    }
    let server = include_str!("../src/server.rs");
    let fields = server.split("pub struct ServerState").nth(1).unwrap().split('}').next().unwrap();
    for forbidden in ["KeyShare", "ClientDataset", "Sample", "Encoded"] {
        assert!(!fields.contains(forbidden), "server state holds {forbidden}");
    }
}

#[test]
fn tcp_transport_runs_weight_averaging() {
    let mut cfg = small(Method::FedAvg);
    cfg.rounds = 1;
    let mut exp = Experiment::new(cfg.clone()).unwrap();
    let tcp = exp.run(&mut TcpTransport::new()).unwrap().without_timing();
    assert_eq!(tcp, run_experiment(&cfg).unwrap().without_timing());
}
