//! Synthetic Non-IID client datasets.
//!
//! Two heterogeneity axes are modelled. Label shift: every class's samples
//! are apportioned across clients by a Dirichlet draw. Feature shift: each
//! client is bound to one acquisition condition, and a condition applies
//! its own orthogonal rotation and offset to the class means.
//!
//! Datasets can also be written to and read back from a plain CSV format
//! (`client_id,condition,y,x0,...,x{d-1}`).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::{
    sample_dirichlet, standard_normal, stream_id, uniform, RngStream, Vector,
};
use crate::scalar::Real;

/// Fraction of each client's per-class samples held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

const MAX_PARTITION_RETRIES: usize = 100;

const PURPOSE_PARTITION: u32 = 0x0D01;
const PURPOSE_CONDITION: u32 = 0x0D02;
const PURPOSE_SAMPLES: u32 = 0x0D03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub clients: usize,
    pub classes: usize,
    pub conditions: usize,
    pub dim: usize,
    pub samples_per_client: usize,
    pub alpha: f64,
    pub class_separation: f64,
    pub condition_shift: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Require at least one training sample of every class on every client.
    pub cover_all_classes: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clients: 5,
            classes: 6,
            conditions: 5,
            dim: 64,
            samples_per_client: 200,
            alpha: 0.5,
            class_separation: 4.0,
            condition_shift: 1.0,
            noise_std: 1.0,
            seed: 0,
            cover_all_classes: false,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("clients", self.clients),
            ("classes", self.classes),
            ("conditions", self.conditions),
            ("dim", self.dim),
            ("samples_per_client", self.samples_per_client),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if self.classes > self.dim {
            return Err(Error::InvalidParameter(format!(
                "classes ({}) cannot exceed dim ({})",
                self.classes, self.dim
            )));
        }
        for (name, value) in [
            ("class_separation", self.class_separation),
            ("condition_shift", self.condition_shift),
            ("noise_std", self.noise_std),
        ] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and >= 0, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Per-class totals for the whole federation: `clients * samples_per_client`
    /// split as evenly as possible, remainder to the lowest class ids.
    pub fn class_totals(&self) -> Vec<usize> {
        let total = self.clients * self.samples_per_client;
        let base = total / self.classes;
        let extra = total % self.classes;
        (0..self.classes)
            .map(|j| base + usize::from(j < extra))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub x: Vector<T>,
    pub y: usize,
    pub condition: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<T> {
    pub client_id: usize,
    pub condition: usize,
    pub classes: usize,
    pub train: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
    /// Training-split label histogram.
    pub class_counts: Vec<usize>,
}

impl<T: Real> ClientDataset<T> {
    pub fn new(
        client_id: usize,
        condition: usize,
        classes: usize,
        train: Vec<Sample<T>>,
        test: Vec<Sample<T>>,
    ) -> Result<Self> {
        let mut class_counts = vec![0; classes];
        for s in train.iter().chain(&test) {
            if s.y >= classes {
                return Err(Error::InvalidParameter(format!(
                    "label {} out of range for {classes} classes",
                    s.y
                )));
            }
        }
        for s in &train {
            class_counts[s.y] += 1;
        }
        Ok(Self {
            client_id,
            condition,
            classes,
            train,
            test,
            class_counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.train
            .first()
            .or(self.test.first())
            .map_or(0, |s| s.x.dim())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Apportions `total` by the weights `p` with the largest-remainder method;
/// ties go to the lower index. The result always sums to `total`.
pub fn largest_remainder(total: usize, p: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = p.iter().map(|&w| w * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Splits each class total across `m` clients by a `Dirichlet(alpha * 1_m)`
/// draw. Returns a clients-by-classes count matrix whose column sums equal
/// `class_totals` exactly.
pub fn partition_labels(
    rng: &mut RngStream,
    alpha: f64,
    m: usize,
    class_totals: &[usize],
) -> Result<Vec<Vec<usize>>> {
    partition_labels_covering(rng, alpha, m, class_totals, 0)
}

/// Like [`partition_labels`], but redraws a class's Dirichlet row until every
/// client receives at least `min_count` samples of it.
pub fn partition_labels_covering(
    rng: &mut RngStream,
    alpha: f64,
    m: usize,
    class_totals: &[usize],
    min_count: usize,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(Error::InvalidParameter("client count must be positive".into()));
    }
    let mut matrix = vec![vec![0; class_totals.len()]; m];
    for (j, &total) in class_totals.iter().enumerate() {
        if total < m * min_count {
            return Err(Error::Partition(format!(
                "class {j} has {total} samples, fewer than {min_count} per client"
            )));
        }
        let mut column = None;
        for _ in 0..MAX_PARTITION_RETRIES {
            let p = sample_dirichlet(rng, &vec![alpha; m])?;
            let counts = largest_remainder(total, &p);
            if counts.iter().all(|&c| c >= min_count) {
                column = Some(counts);
                break;
            }
        }
        let column = column.ok_or_else(|| {
            Error::Partition(format!(
                "class {j}: no draw gave every client >= {min_count} samples \
                 in {MAX_PARTITION_RETRIES} attempts"
            ))
        })?;
        for (row, c) in matrix.iter_mut().zip(column) {
            row[j] = c;
        }
    }
    Ok(matrix)
}

/// Condition-specific feature shift: Givens rotations over a random pairing
/// of coordinates, then a fixed offset. Both scale with the shift magnitude,
/// so a zero magnitude is the identity.
#[derive(Debug, Clone)]
struct ConditionTransform {
    rotations: Vec<(usize, usize, f64, f64)>,
    offset: Vec<f64>,
}

impl ConditionTransform {
    fn draw(rng: &mut RngStream, dim: usize, magnitude: f64) -> Self {
        let mut perm: Vec<usize> = (0..dim).collect();
        for i in (1..dim).rev() {
            let j = (uniform(rng, 0.0, (i + 1) as f64) as usize).min(i);
            perm.swap(i, j);
        }
        let rotations = perm
            .chunks_exact(2)
            .map(|pair| {
                let angle = magnitude * uniform(rng, -0.5, 0.5);
                (pair[0], pair[1], angle.cos(), angle.sin())
            })
            .collect();
        let dir: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let offset = dir.iter().map(|v| magnitude * v / n).collect();
        Self { rotations, offset }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = x.to_vec();
        for &(a, b, c, s) in &self.rotations {
            let (xa, xb) = (out[a], out[b]);
            out[a] = c * xa - s * xb;
            out[b] = s * xa + c * xb;
        }
        for (o, v) in out.iter_mut().zip(&self.offset) {
            *o += v;
        }
        out
    }
}

/// Class means `(separation / sqrt 2) e_j`: pairwise distance is exactly
/// `separation`.
fn class_means(cfg: &DataConfig) -> Vec<Vec<f64>> {
    let scale = cfg.class_separation / std::f64::consts::SQRT_2;
    (0..cfg.classes)
        .map(|j| {
            let mut mu = vec![0.0; cfg.dim];
            mu[j] = scale;
            mu
        })
        .collect()
}

fn test_count(class_count: usize) -> usize {
    (class_count as f64 * TEST_FRACTION).round() as usize
}

/// Generates one dataset per client, fully determined by `cfg`.
pub fn generate<T: Real>(cfg: &DataConfig) -> Result<Vec<ClientDataset<T>>> {
    cfg.validate()?;
    let totals = cfg.class_totals();
    let mut partition_rng = RngStream::new(cfg.seed, stream_id(PURPOSE_PARTITION, 0));
    let counts = partition_labels_covering(
        &mut partition_rng,
        cfg.alpha,
        cfg.clients,
        &totals,
        usize::from(cfg.cover_all_classes),
    )?;

    let transforms: Vec<ConditionTransform> = (0..cfg.conditions)
        .map(|c| {
            let mut rng = RngStream::new(cfg.seed, stream_id(PURPOSE_CONDITION, c as u32));
            ConditionTransform::draw(&mut rng, cfg.dim, cfg.condition_shift)
        })
        .collect();
    let means = class_means(cfg);

    let mut datasets = Vec::with_capacity(cfg.clients);
    for (i, row) in counts.iter().enumerate() {
        let condition = i % cfg.conditions;
        let transform = &transforms[condition];
        let mut rng = RngStream::new(cfg.seed, stream_id(PURPOSE_SAMPLES, i as u32));
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (j, &count) in row.iter().enumerate() {
            let centre = transform.apply(&means[j]);
            let n_test = test_count(count);
            for k in 0..count {
                let x: Vec<T> = centre
                    .iter()
                    .map(|&c| T::of(c + cfg.noise_std * standard_normal(&mut rng)))
                    .collect();
                let sample = Sample {
                    x: Vector::new(x)?,
                    y: j,
                    condition,
                };
                if k < count - n_test {
                    train.push(sample);
                } else {
                    test.push(sample);
                }
            }
        }
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "client {i} received an empty train or test split; \
                 increase samples_per_client or alpha"
            )));
        }
        datasets.push(ClientDataset::new(i, condition, cfg.classes, train, test)?);
    }
    Ok(datasets)
}

fn csv_header(dim: usize) -> String {
    let mut header = String::from("client_id,condition,y");
    for k in 0..dim {
        header.push_str(&format!(",x{k}"));
    }
    header
}

/// Writes datasets in the feature CSV format: training rows first, then test
/// rows, per client. Floats use the shortest round-trip representation.
pub fn write_features_csv<T: Real>(path: &Path, datasets: &[ClientDataset<T>]) -> Result<()> {
    let dim = datasets.iter().map(|d| d.dim()).max().unwrap_or(0);
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", csv_header(dim))?;
    for ds in datasets {
        for s in ds.train.iter().chain(&ds.test) {
            write!(out, "{},{},{}", ds.client_id, s.condition, s.y)?;
            for v in s.x.as_slice() {
                write!(out, ",{}", v.as_f64())?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

struct CsvRow<T> {
    line: usize,
    client: usize,
    sample: Sample<T>,
}

fn parse_rows<T: Real>(text: &str) -> Result<(usize, Vec<CsvRow<T>>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Empty("feature CSV has no header"))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 4 || cols[..3] != ["client_id", "condition", "y"] {
        return Err(Error::Parse {
            line: 1,
            message: "header must start with client_id,condition,y,x0".into(),
        });
    }
    let dim = cols.len() - 3;
    for (k, c) in cols[3..].iter().enumerate() {
        if *c != format!("x{k}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column x{k}, found {c}"),
            });
        }
    }

    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let fields: Vec<&str> = raw.trim().split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", dim + 3, fields.len()),
            });
        }
        let int = |i: usize, name: &str| -> Result<usize> {
            fields[i].trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("bad {name} {:?}", fields[i]),
            })
        };
        let client = int(0, "client_id")?;
        let condition = int(1, "condition")?;
        let y = int(2, "label")?;
        let x = fields[3..]
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map(T::of).map_err(|_| Error::Parse {
                    line,
                    message: format!("bad feature value {f:?}"),
                })
            })
            .collect::<Result<Vec<T>>>()?;
        let x = Vector::new(x).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        rows.push(CsvRow {
            line,
            client,
            sample: Sample { x, y, condition },
        });
    }
    if rows.is_empty() {
        return Err(Error::Empty("feature CSV has no samples"));
    }
    Ok((dim, rows))
}

/// Rebuilds one client's split: the last `round(0.2 * n_j)` rows of each
/// class (in file order) are the test split, mirroring [`generate`].
fn assemble<T: Real>(client: usize, classes: usize, rows: Vec<CsvRow<T>>) -> Result<ClientDataset<T>> {
    let condition = rows[0].sample.condition;
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &rows {
        if r.sample.condition != condition {
            return Err(Error::Parse {
                line: r.line,
                message: format!(
                    "client {client} has condition {} but earlier rows use {condition}",
                    r.sample.condition
                ),
            });
        }
        if r.sample.y >= classes {
            return Err(Error::Parse {
                line: r.line,
                message: format!("label {} out of range for {classes} classes", r.sample.y),
            });
        }
        *per_class.entry(r.sample.y).or_default() += 1;
    }
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for r in rows {
        let total = per_class[&r.sample.y];
        let k = seen.entry(r.sample.y).or_default();
        if *k < total - test_count(total) {
            train.push(r.sample);
        } else {
            test.push(r.sample);
        }
        *k += 1;
    }
    ClientDataset::new(client, condition, classes, train, test)
}

fn group_clients<T: Real>(rows: Vec<CsvRow<T>>) -> Result<Vec<(usize, Vec<CsvRow<T>>)>> {
    let mut groups: Vec<(usize, Vec<CsvRow<T>>)> = Vec::new();
    for r in rows {
        match groups.last_mut() {
            Some((id, g)) if *id == r.client => g.push(r),
            _ => {
                if groups.iter().any(|(id, _)| *id == r.client) {
                    return Err(Error::Parse {
                        line: r.line,
                        message: format!("rows of client {} are not contiguous", r.client),
                    });
                }
                groups.push((r.client, vec![r]));
            }
        }
    }
    Ok(groups)
}

/// Parses a feature CSV holding one or more clients. The class count is
/// inferred as one past the largest label in the file.
pub fn load_features_csv<T: Real>(path: &Path) -> Result<Vec<ClientDataset<T>>> {
    let text = fs::read_to_string(path)?;
    let (_, rows) = parse_rows::<T>(&text)?;
    let classes = rows.iter().map(|r| r.sample.y).max().unwrap_or(0) + 1;
    group_clients(rows)?
        .into_iter()
        .map(|(id, rows)| assemble(id, classes, rows))
        .collect()
}

/// Index of a generated dataset directory: one CSV per client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub clients: usize,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub files: Vec<String>,
    pub config: DataConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn client_file_name(client: usize) -> String {
    format!("client_{client:03}.csv")
}

/// Writes `client_XXX.csv` per client plus `manifest.json` into `dir`.
pub fn write_dataset_dir<T: Real>(
    dir: &Path,
    cfg: &DataConfig,
    datasets: &[ClientDataset<T>],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut files = Vec::new();
    for ds in datasets {
        let name = client_file_name(ds.client_id);
        let path = dir.join(&name);
        write_features_csv(&path, std::slice::from_ref(ds))?;
        files.push(name);
        written.push(path);
    }
    let manifest = Manifest {
        clients: datasets.len(),
        classes: cfg.classes,
        dim: cfg.dim,
        seed: cfg.seed,
        files,
        config: cfg.clone(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    fs::write(&path, json + "\n")?;
    written.push(path);
    Ok(written)
}

/// Loads a directory written by [`write_dataset_dir`]. Each file must hold
/// exactly the client it is listed for; any other client id is rejected.
pub fn load_dataset_dir<T: Real>(dir: &Path) -> Result<Vec<ClientDataset<T>>> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut out = Vec::with_capacity(manifest.files.len());
    for (expected, file) in manifest.files.iter().enumerate() {
        let text = fs::read_to_string(dir.join(file))?;
        let (dim, rows) = parse_rows::<T>(&text)?;
        if dim != manifest.dim {
            return Err(Error::Parse {
                line: 1,
                message: format!("{file}: {dim} features, manifest says {}", manifest.dim),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.client != expected) {
            return Err(Error::Parse {
                line: r.line,
                message: format!("{file}: unknown client id {} (expected {expected})", r.client),
            });
        }
        out.push(assemble(expected, manifest.classes, rows)?);
    }
    Ok(out)
}
