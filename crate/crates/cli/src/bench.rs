use std::path::Path;
use std::time::Instant;

use fedph_core::model::HeadSpec;
use fedph_crypto::{encrypt_vector, keygen, Encryptor, FixedPointCodec};
use fedph_federation::{CryptoConfig, ExperimentConfig, Method};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{HarnessError, Result};
use crate::run::mean_std;

pub const BENCH_HEADER: [&str; 10] = [
    "bits",
    "embed_dim",
    "prototype_values",
    "param_values",
    "reps",
    "prototype_mean_s",
    "prototype_std_s",
    "param_mean_s",
    "param_std_s",
    "ratio",
];

pub const DEFAULT_REPS: usize = 20;
const BENCH_SEED: u64 = 0xBE7C;

/// Encryption timings of both payloads at one embedding width.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub bits: u64,
    pub embed_dim: usize,
    pub prototype_values: usize,
    pub param_values: usize,
    pub reps: usize,
    pub prototype: Timing,
    pub params: Timing,
}

impl BenchRow {
    /// Mean parameter-payload time over mean prototype-payload time.
    pub fn ratio(&self) -> f64 {
        self.params.mean / self.prototype.mean
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean: f64,
    pub std: f64,
}

/// Payload sizes at embedding width `embed_dim` and otherwise default widths:
/// (`K * embed_dim`, head parameter count).
pub fn payload_sizes(embed_dim: usize) -> (usize, usize) {
    let cfg = ExperimentConfig::new(Method::FedPh);
    let spec = HeadSpec { embed_dim, ..cfg.head_spec(0) };
    (spec.classes * embed_dim, spec.param_count())
}

fn time_payload(enc: &Encryptor, codec: &FixedPointCodec, values: usize, reps: usize, rng: &mut StdRng) -> Result<Timing> {
    let mut secs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let payload: Vec<f64> = (0..values).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let start = Instant::now();
        let cts = encrypt_vector(enc, &payload, codec, rng)?;
        secs.push(start.elapsed().as_secs_f64());
        std::hint::black_box(cts);
    }
    let (mean, std) = mean_std(&secs);
    Ok(Timing { mean, std })
}

/// Times encryption of a prototype payload and a head-parameter payload for
/// each embedding width in `dims`.
pub fn bench_crypto(bits: u64, dims: &[usize], reps: usize) -> Result<Vec<BenchRow>> {
    if dims.is_empty() || reps == 0 {
        return Err(HarnessError::Argument("need at least one dimension and one repetition".into()));
    }
    let mut rng = StdRng::seed_from_u64(BENCH_SEED);
    let mut defaults = ExperimentConfig::new(Method::FedPh);
    let crypto = CryptoConfig { bits, ..CryptoConfig::default() };
    defaults.crypto = Some(crypto);
    let m = defaults.clients;
    let k = defaults.decryption_threshold().unwrap_or(m);
    let (pk, _shares) = keygen(bits, m, k, &mut rng)?;
    let enc = Encryptor::new(&pk, crypto.exponent_bits, crypto.window, &mut rng)?;
    // payload values lie in [-1, 1]
    let codec = FixedPointCodec::new(&pk, crypto.frac_bits, 1.0, m)?;
    dims.iter()
        .map(|&d| {
            let (prototype_values, param_values) = payload_sizes(d);
            let prototype = time_payload(&enc, &codec, prototype_values, reps, &mut rng)?;
            let params = time_payload(&enc, &codec, param_values, reps, &mut rng)?;
            Ok(BenchRow { bits, embed_dim: d, prototype_values, param_values, reps, prototype, params })
        })
        .collect()
}

pub fn write_bench(path: &Path, rows: &[BenchRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.write_record([
            r.bits.to_string(),
            r.embed_dim.to_string(),
            r.prototype_values.to_string(),
            r.param_values.to_string(),
            r.reps.to_string(),
            r.prototype.mean.to_string(),
            r.prototype.std.to_string(),
            r.params.mean.to_string(),
            r.params.std.to_string(),
            r.ratio().to_string(),
        ])?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

/// `bench-crypto --bits <n> --dims <k[,k...]> --out <file>`
pub fn cmd_bench_crypto(bits: u64, dims: &[usize], reps: usize, out: &Path) -> Result<Vec<BenchRow>> {
    let rows = bench_crypto(bits, dims, reps)?;
    write_bench(out, &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_payloads() {
        assert_eq!(payload_sizes(64), (384, 33_222));
        assert_eq!(payload_sizes(32), (192, 512 * 32 + 32 + 32 * 6 + 6));
    }
}
