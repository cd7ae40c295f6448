//! Monte-Carlo checks of the prototype noise.

use fedph_core::mathcore::{uniform, RngStream, Vector};
use fedph_core::privacy::{perturb_local, perturb_split, sensitivity, NoiseSpec};
use fedph_core::prototype::PrototypeSet;

fn zero_set(dim: usize) -> PrototypeSet<f64> {
    let mut p = PrototypeSet::new(dim);
    p.insert(0, Vector::zeros(dim), 1).unwrap();
    p
}

/// Noise coordinates from repeated perturbation of a zero prototype.
fn draws(spec: &NoiseSpec, local: bool, n: usize, seed: u64) -> Vec<f64> {
    let dim = 1000;
    let mut rng = RngStream::new(seed, 0);
    let zero = zero_set(dim);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = if local {
            perturb_local(&zero, spec, &mut rng).unwrap()
        } else {
            perturb_split(&zero, spec, &mut rng).unwrap()
        };
        out.extend_from_slice(p.vector(0).unwrap().as_slice());
    }
    out.truncate(n);
    out
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn split_noise_variance() {
    let spec = NoiseSpec::new(1.0, 1.0, 3, 5).unwrap();
    let x = draws(&spec, false, 1_000_000, 1);
    let (m, v) = mean_var(&x);
    assert!((v - 0.5).abs() < 0.005, "variance {v}");
    assert!(m.abs() < 3.0 * (0.5f64 / 1e6).sqrt(), "mean {m}");
}

#[test]
fn summed_split_noise_matches_aggregate_variance() {
    let spec = NoiseSpec::new(1.0, 1.0, 3, 5).unwrap();
    let n = 200_000;
    let parts: Vec<Vec<f64>> = (0..5).map(|i| draws(&spec, false, n, 10 + i)).collect();
    let sum: Vec<f64> = (0..n).map(|k| parts.iter().map(|p| p[k]).sum()).collect();
    let (_, v) = mean_var(&sum);
    assert!((v - 2.5).abs() < 0.02 * 2.5, "variance {v}");
    assert!((spec.aggregate_std().powi(2) - 2.5).abs() < 1e-12);
}

#[test]
fn local_to_split_variance_ratio() {
    let spec = NoiseSpec::new(0.4, 2.0, 4, 6).unwrap();
    let n = 500_000;
    let (ml, vl) = mean_var(&draws(&spec, true, n, 20));
    let (_, vs) = mean_var(&draws(&spec, false, n, 21));
    let ratio = vl / vs;
    assert!((ratio - 3.0).abs() < 0.03 * 3.0, "ratio {ratio}");
    let se = (vl / n as f64).sqrt();
    assert!(ml.abs() < 3.0 * se);
}

#[test]
fn noise_is_uncorrelated_across_coordinates_and_clients() {
    let spec = NoiseSpec::new(1.0, 1.0, 2, 2).unwrap();
    let n = 1_000_000;
    let a = draws(&spec, false, n + 1, 30);
    let b = draws(&spec, false, n, 31);
    let corr = |x: &[f64], y: &[f64]| {
        let (mx, vx) = mean_var(x);
        let (my, vy) = mean_var(y);
        let c: f64 = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / (x.len() as f64 - 1.0);
        c / (vx * vy).sqrt()
    };
    // adjacent coordinates of one stream, and two client streams
    assert!(corr(&a[..n], &a[1..]).abs() < 0.01);
    assert!(corr(&a[..n], &b).abs() < 0.01);
}

#[test]
fn replacing_one_vector_moves_mean_at_most_sensitivity() {
    let mut rng = RngStream::new(5, 5);
    let bound = 1.0;
    let s = sensitivity(bound, 10).unwrap();
    let ball = |rng: &mut RngStream| {
        let v: Vec<f64> = (0..3).map(|_| uniform(rng, -1.0, 1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = uniform(rng, 0.0, 1.0);
        v.into_iter().map(|x| x / n * r * bound).collect::<Vec<f64>>()
    };
    let mut worst = 0.0f64;
    for _ in 0..20_000 {
        let set: Vec<Vec<f64>> = (0..10).map(|_| ball(&mut rng)).collect();
        let i = (uniform(&mut rng, 0.0, 10.0) as usize).min(9);
        let replacement = ball(&mut rng);
        let shift: f64 = (0..3)
            .map(|k| ((replacement[k] - set[i][k]) / 10.0).powi(2))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(shift);
    }
    // antipodal extreme attains the bound exactly
    let extreme = (2.0 * bound) / 10.0;
    assert!(worst <= s + 1e-15);
    assert!((extreme - s).abs() < 1e-15);
}
