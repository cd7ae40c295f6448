use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use fedph_federation::{run_experiment, Method, MetricsRow, MetricsTable};

use crate::config::RunConfig;
use crate::error::{HarnessError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

pub const METRICS_HEADER: [&str; 12] = [
    "method",
    "seed",
    "round",
    "mean_accuracy",
    "client_accuracies",
    "supervised_loss",
    "regularizer_loss",
    "uplink_values",
    "uplink_bytes",
    "downlink_bytes",
    "round_ms",
    "encrypt_ms",
];

/// Columns holding wall-clock measurements.
pub const TIMING_COLUMNS: [&str; 2] = ["round_ms", "encrypt_ms"];

pub const SUMMARY_HEADER: [&str; 5] = ["method", "seeds", "mean_final_accuracy", "std_final_accuracy", "summary"];

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Final-round accuracy of one method over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: usize,
    /// Fractions in [0, 1].
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

impl MethodSummary {
    pub fn from_finals(method: Method, finals: &[f64]) -> Self {
        let (mean, std) = mean_std(finals);
        Self { method, seeds: finals.len(), mean, std }
    }

    /// Percentages as `92.1% ± 0.24%`.
    pub fn formatted(&self) -> String {
        format!("{:.1}% ± {:.2}%", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    /// One table per (method, seed), methods outermost.
    pub tables: Vec<MetricsTable>,
    pub summaries: Vec<MethodSummary>,
    pub metrics_path: Option<PathBuf>,
    pub summary_path: Option<PathBuf>,
}

/// Runs `f` over `jobs` on up to `available_parallelism` threads, keeping
/// the input order.
pub fn parallel_map<T: Sync, R: Send>(jobs: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                results.lock().expect("result slot lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("result slot lock").into_iter().map(|r| r.expect("job finished")).collect()
}

/// Every (method, seed) experiment of `cfg`, in parallel.
pub fn run_grid(cfg: &RunConfig) -> Result<Vec<MetricsTable>> {
    let cells: Vec<(Method, u64)> =
        cfg.methods().into_iter().flat_map(|m| cfg.seeds().into_iter().map(move |s| (m, s))).collect();
    parallel_map(&cells, |&(method, seed)| {
        run_experiment(&cfg.experiment_for(method, seed)).map_err(HarnessError::run(method, seed))
    })
    .into_iter()
    .collect()
}

pub fn summarize(cfg: &RunConfig, tables: &[MetricsTable]) -> Vec<MethodSummary> {
    cfg.methods()
        .into_iter()
        .map(|method| {
            let finals: Vec<f64> = tables
                .iter()
                .filter(|t| t.last().is_some_and(|r| r.method == method))
                .filter_map(MetricsTable::final_accuracy)
                .collect();
            MethodSummary::from_finals(method, &finals)
        })
        .collect()
}

/// Runs the grid and writes `metrics.csv` and `summary.csv` into `out` when
/// given.
pub fn cmd_run_config(cfg: &RunConfig, out: Option<&Path>) -> Result<RunReport> {
    cfg.validate()?;
    let tables = run_grid(cfg)?;
    let summaries = summarize(cfg, &tables);
    let (mut metrics_path, mut summary_path) = (None, None);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let path = dir.join(METRICS_FILE);
        write_metrics(&path, tables.iter().flat_map(|t| &t.rows))?;
        metrics_path = Some(path);
        let path = dir.join(SUMMARY_FILE);
        write_summary(&path, &summaries)?;
        summary_path = Some(path);
    }
    Ok(RunReport { tables, summaries, metrics_path, summary_path })
}

/// `run --config <path> --out <dir>`
pub fn cmd_run(config: &Path, out: Option<&Path>, seed_env: Option<&str>) -> Result<RunReport> {
    let cfg = RunConfig::load(config)?.with_seed_override(seed_env)?;
    let dir = cfg.output_dir(out)?;
    cmd_run_config(&cfg, Some(&dir))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn metrics_record(row: &MetricsRow) -> [String; 12] {
    let accs: Vec<String> = row.client_accuracies.iter().map(f64::to_string).collect();
    [
        row.method.name().to_string(),
        row.seed.to_string(),
        row.round.to_string(),
        row.mean_accuracy.to_string(),
        accs.join(";"),
        opt(row.supervised_loss),
        opt(row.regularizer_loss),
        row.uplink_values.to_string(),
        row.uplink_bytes.to_string(),
        row.downlink_bytes.to_string(),
        row.round_ms.to_string(),
        opt(row.encrypt_ms),
    ]
}

pub fn write_metrics<'a>(path: &Path, rows: impl IntoIterator<Item = &'a MetricsRow>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.write_record(metrics_record(row))?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

pub fn write_summary(path: &Path, summaries: &[MethodSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        w.write_record([
            s.method.name().to_string(),
            s.seeds.to_string(),
            s.mean.to_string(),
            s.std.to_string(),
            s.formatted(),
        ])?;
    }
    w.flush().map_err(HarnessError::io(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let one = MethodSummary::from_finals(Method::FedPh, &[0.921]);
        assert_eq!(one.std, 0.0);
        assert_eq!(one.formatted(), "92.1% ± 0.00%");
        let two = MethodSummary::from_finals(Method::Solo, &[0.5, 0.7]);
        assert!((two.mean - 0.6).abs() < 1e-15);
        assert!((two.std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(two.formatted(), "60.0% ± 14.14%");
    }

    #[test]
    fn parallel_map_keeps_order() {
        let jobs: Vec<u64> = (0..37).collect();
        assert_eq!(parallel_map(&jobs, |x| x * x), jobs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(parallel_map(&[] as &[u8], |x| *x).is_empty());
    }
}
