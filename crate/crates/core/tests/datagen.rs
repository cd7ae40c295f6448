use std::fs;

use fedph_core::datagen::{
    generate, load_dataset_dir, load_features_csv, write_dataset_dir, write_features_csv,
    ClientDataset, DataConfig,
};
use fedph_core::Error;

fn class_mean(ds: &ClientDataset<f64>, j: usize) -> Option<Vec<f64>> {
    let xs: Vec<_> = ds.train.iter().chain(&ds.test).filter(|s| s.y == j).collect();
    if xs.is_empty() {
        return None;
    }
    let d = xs[0].x.dim();
    let mut m = vec![0.0; d];
    for s in &xs {
        for (a, b) in m.iter_mut().zip(s.x.as_slice()) {
            *a += b / xs.len() as f64;
        }
    }
    Some(m)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn totals_and_histograms_are_consistent() {
    let cfg = DataConfig { clients: 7, samples_per_client: 130, ..Default::default() };
    let data = generate::<f64>(&cfg).unwrap();
    let total: usize = data.iter().map(ClientDataset::len).sum();
    assert_eq!(total, 7 * 130);
    for ds in &data {
        assert_eq!(ds.class_counts.iter().sum::<usize>(), ds.train.len());
        let mut hist = vec![0; cfg.classes];
        ds.train.iter().for_each(|s| hist[s.y] += 1);
        assert_eq!(hist, ds.class_counts);
        assert_eq!(ds.condition, ds.client_id % cfg.conditions);
        assert!(ds.train.iter().chain(&ds.test).all(|s| s.condition == ds.condition && s.x.dim() == cfg.dim));
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = DataConfig { seed: 99, ..Default::default() };
    assert_eq!(generate::<f64>(&cfg).unwrap(), generate::<f64>(&cfg).unwrap());
    let other = DataConfig { seed: 100, ..cfg.clone() };
    assert_ne!(generate::<f64>(&cfg).unwrap(), generate::<f64>(&other).unwrap());
}

#[test]
fn iid_setting_gives_matching_class_means() {
    let cfg = DataConfig {
        clients: 2,
        classes: 2,
        conditions: 2,
        dim: 4,
        samples_per_client: 4000,
        alpha: 1e6,
        condition_shift: 0.0,
        noise_std: 1.0,
        ..Default::default()
    };
    let data = generate::<f64>(&cfg).unwrap();
    for j in 0..2 {
        let a = class_mean(&data[0], j).unwrap();
        let b = class_mean(&data[1], j).unwrap();
        // each mean has per-coordinate std ~ 1/sqrt(2000)
        assert!(l2(&a, &b) < 0.2, "class {j}: {}", l2(&a, &b));
    }
}

#[test]
fn condition_shift_separates_clients() {
    let cfg = DataConfig {
        clients: 2,
        classes: 3,
        conditions: 2,
        samples_per_client: 600,
        alpha: 1e6,
        condition_shift: 2.0,
        ..Default::default()
    };
    let data = generate::<f64>(&cfg).unwrap();
    assert_ne!(data[0].condition, data[1].condition);
    for j in 0..3 {
        let a = class_mean(&data[0], j).unwrap();
        let b = class_mean(&data[1], j).unwrap();
        assert!(l2(&a, &b) > 1.0, "class {j}: {}", l2(&a, &b));
    }
}

#[test]
fn csv_roundtrip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    let cfg = DataConfig { clients: 3, samples_per_client: 50, dim: 7, ..Default::default() };
    let data = generate::<f64>(&cfg).unwrap();
    write_features_csv(&path, &data).unwrap();
    let back = load_features_csv::<f64>(&path).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.client_id, b.client_id);
        assert_eq!(a.train.len(), b.train.len());
        assert_eq!(a.test.len(), b.test.len());
        for (s, t) in a.train.iter().chain(&a.test).zip(b.train.iter().chain(&b.test)) {
            assert_eq!((s.y, s.condition), (t.y, t.condition));
            for (x, y) in s.x.as_slice().iter().zip(t.x.as_slice()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    let out = dir.path().join("set");
    write_dataset_dir(&out, &cfg, &data).unwrap();
    let again = load_dataset_dir::<f64>(&out).unwrap();
    assert_eq!(again.len(), 3);
    assert_eq!(again[2].class_counts, data[2].class_counts);
}

#[test]
fn small_fixture_parses_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    fs::write(
        &path,
        "client_id,condition,y,x0,x1\n0,1,0,0.5,-1.25\n0,1,1,2,3e-2\n0,1,0,-0.0,7\n",
    )
    .unwrap();
    let data = load_features_csv::<f64>(&path).unwrap();
    assert_eq!(data.len(), 1);
    let all: Vec<_> = data[0].train.iter().chain(&data[0].test).collect();
    assert_eq!(all.len(), 3);
    let mut xs: Vec<(usize, Vec<f64>)> = all.iter().map(|s| (s.y, s.x.as_slice().to_vec())).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert_eq!(xs[0], (0, vec![-0.0, 7.0]));
    assert_eq!(xs[1], (0, vec![0.5, -1.25]));
    assert_eq!(xs[2], (1, vec![2.0, 0.03]));
    assert!(all.iter().all(|s| s.condition == 1));
}

#[test]
fn malformed_files_report_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    fs::write(&path, "").unwrap();
    assert!(matches!(load_features_csv::<f64>(&path), Err(Error::Empty(_))));

    fs::write(&path, "client_id,condition,y,x0,x1\n0,0,0,1,2\n0,0,1,1\n").unwrap();
    match load_features_csv::<f64>(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
    fs::write(&path, "client_id,condition,y,x0\n0,0,0,abc\n").unwrap();
    assert!(matches!(load_features_csv::<f64>(&path), Err(Error::Parse { line: 2, .. })));
}
