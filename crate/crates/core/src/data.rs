//! Datasets: LIBSVM ingestion, synthetic logistic data, and client partitioning.
//!
//! Features are stored densely. The model dimensions this crate targets are
//! small (tens of features), so the Hessian algebra stays simple; the parser
//! still accepts the usual sparse `idx:val` text.

use std::io::BufRead;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed token `{token}`")]
    MalformedLine { line: usize, token: String },
    #[error("line {line}: feature indices must be 1-based and strictly increasing")]
    NonIncreasingIndex { line: usize },
    #[error("more than two distinct label values ({0:?}, ...)")]
    MoreThanTwoClasses(Vec<f64>),
    #[error("input contains no samples")]
    EmptyInput,
    #[error("feature index {index} exceeds the requested dimension {dim}")]
    IndexBeyondDimension { index: usize, dim: usize },
    #[error("label noise must lie in [0, 0.5), got {0}")]
    InvalidNoise(f64),
    #[error("cannot split {rows} rows across {clients} clients")]
    TooManyClients { clients: usize, rows: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Dense feature matrix (one row per sample) with labels in {-1, +1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(DataError::Invalid(
                "need at least one row and one feature".into(),
            ));
        }
        if features.nrows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Invalid("non-finite feature value".into()));
        }
        if labels.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(DataError::Invalid("labels must be -1 or +1".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.features.row(i).iter().copied().collect()
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(indices.iter());
        let labels = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.labels[i]));
        Self::new(features, labels)
    }

    /// Canonical little-endian byte image (dims, features row-major, labels),
    /// used for content hashing.
    pub fn content_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * (self.rows() * (self.dim() + 1)));
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        for i in 0..self.rows() {
            for j in 0..self.dim() {
                out.extend_from_slice(&self.features[(i, j)].to_le_bytes());
            }
        }
        for y in self.labels.iter() {
            out.extend_from_slice(&y.to_le_bytes());
        }
        out
    }

    /// LIBSVM text with `+1`/`-1` labels; zero entries are omitted and values
    /// use the shortest representation that parses back bit-identically.
    pub fn to_libsvm(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows() {
            out.push_str(if self.labels[i] > 0.0 { "+1" } else { "-1" });
            for j in 0..self.dim() {
                let v = self.features[(i, j)];
                if v != 0.0 {
                    out.push_str(&format!(" {}:{}", j + 1, v));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One simulated client's share of the global dataset.
#[derive(Clone, Debug)]
pub struct ClientDataset {
    pub client_id: usize,
    pub data: Dataset,
    /// n_j / N
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionKind {
    UniformRandom,
    /// Rows sorted by label, cut into 2m shards, two shards per client.
    SortedByLabelShards,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionScheme {
    pub kind: PartitionKind,
    pub seed: u64,
}

/// Parse LIBSVM text into a dense dataset.
///
/// The smaller of the (at most two) raw label values maps to -1 and the larger
/// to +1. A file with a single raw label maps it to +1 when positive and -1
/// otherwise. `dim_override` widens the feature dimension for files that omit
/// trailing all-zero features.
pub fn parse_libsvm<R: BufRead>(reader: R, dim_override: Option<usize>) -> Result<Dataset> {
    let mut raw_labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut max_index = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(label_tok) = tokens.next() else {
            continue;
        };
        let label: f64 = label_tok
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| DataError::MalformedLine {
                line: lineno,
                token: label_tok.to_string(),
            })?;

        let mut entries = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let malformed = || DataError::MalformedLine {
                line: lineno,
                token: tok.to_string(),
            };
            let (idx, val) = tok.split_once(':').ok_or_else(malformed)?;
            let idx: usize = idx.parse().map_err(|_| malformed())?;
            let val: f64 = val.parse().map_err(|_| malformed())?;
            if !val.is_finite() {
                return Err(malformed());
            }
            if idx == 0 || idx <= last {
                return Err(DataError::NonIncreasingIndex { line: lineno });
            }
            last = idx;
            entries.push((idx - 1, val));
        }
        max_index = max_index.max(last);
        raw_labels.push(label);
        rows.push(entries);
    }

    if rows.is_empty() {
        return Err(DataError::EmptyInput);
    }

    let dim = match dim_override {
        Some(d) if d < max_index => {
            return Err(DataError::IndexBeyondDimension {
                index: max_index,
                dim: d,
            })
        }
        Some(d) => d,
        None => max_index,
    };
    if dim == 0 {
        return Err(DataError::Invalid(
            "no features present and no dimension override".into(),
        ));
    }

    let labels = map_labels(&raw_labels)?;
    let mut features = DMatrix::zeros(rows.len(), dim);
    for (i, entries) in rows.iter().enumerate() {
        for &(j, v) in entries {
            features[(i, j)] = v;
        }
    }
    Dataset::new(features, DVector::from_vec(labels))
}

pub fn parse_libsvm_str(text: &str, dim_override: Option<usize>) -> Result<Dataset> {
    parse_libsvm(text.as_bytes(), dim_override)
}

fn map_labels(raw: &[f64]) -> Result<Vec<f64>> {
    let mut distinct: Vec<f64> = Vec::new();
    for &v in raw {
        if !distinct.contains(&v) {
            distinct.push(v);
            if distinct.len() > 2 {
                distinct.sort_by(f64::total_cmp);
                return Err(DataError::MoreThanTwoClasses(distinct));
            }
        }
    }
    distinct.sort_by(f64::total_cmp);
    let to_sign = |v: f64| -> f64 {
        match distinct.as_slice() {
            [single] => {
                if *single > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            [low, _] => {
                if v == *low {
                    -1.0
                } else {
                    1.0
                }
            }
            _ => unreachable!(),
        }
    };
    Ok(raw.iter().map(|&v| to_sign(v)).collect())
}

/// Synthetic logistic data together with the weight vector that generated it.
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub data: Dataset,
    pub w_true: DVector<f64>,
}

/// Standard-normal rows labelled by `sign(x·w_true)`, each label flipped with
/// probability `noise`. Bit-identical for identical arguments.
pub fn synth_logistic(n: usize, dim: usize, seed: u64, noise: f64) -> Result<Dataset> {
    synth_logistic_with_truth(n, dim, seed, noise).map(|s| s.data)
}

pub fn synth_logistic_with_truth(
    n: usize,
    dim: usize,
    seed: u64,
    noise: f64,
) -> Result<SyntheticData> {
    if !(0.0..0.5).contains(&noise) {
        return Err(DataError::InvalidNoise(noise));
    }
    if n == 0 || dim == 0 {
        return Err(DataError::Invalid("n and dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_true = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut features = DMatrix::zeros(n, dim);
    let mut labels = DVector::zeros(n);
    for i in 0..n {
        for j in 0..dim {
            features[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
        let margin = features.row(i).transpose().dot(&w_true);
        let clean = if margin >= 0.0 { 1.0 } else { -1.0 };
        let flip: f64 = rng.random();
        labels[i] = if flip < noise { -clean } else { clean };
    }
    Ok(SyntheticData {
        data: Dataset::new(features, labels)?,
        w_true,
    })
}

/// Split `data` across `m` clients. Client rows keep their global order.
pub fn partition(data: &Dataset, m: usize, scheme: PartitionScheme) -> Result<Vec<ClientDataset>> {
    let n = data.rows();
    if m == 0 || m > n {
        return Err(DataError::TooManyClients {
            clients: m,
            rows: n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scheme.seed);

    let assignments: Vec<Vec<usize>> = match scheme.kind {
        PartitionKind::UniformRandom => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            even_chunks(n, m).map(|r| order[r].to_vec()).collect()
        }
        PartitionKind::SortedByLabelShards => {
            // every shard must be non-empty so no client ends up empty
            if 2 * m > n {
                return Err(DataError::TooManyClients {
                    clients: m,
                    rows: n,
                });
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| data.labels[a].total_cmp(&data.labels[b]));
            let shards: Vec<&[usize]> = even_chunks(n, 2 * m).map(|r| &order[r]).collect();
            let mut shard_ids: Vec<usize> = (0..2 * m).collect();
            shard_ids.shuffle(&mut rng);
            shard_ids
                .chunks(2)
                .map(|pair| {
                    pair.iter()
                        .flat_map(|&s| shards[s].iter().copied())
                        .collect()
                })
                .collect()
        }
    };

    assignments
        .into_iter()
        .enumerate()
        .map(|(client_id, mut rows)| {
            rows.sort_unstable();
            Ok(ClientDataset {
                client_id,
                weight: rows.len() as f64 / n as f64,
                data: data.select_rows(&rows)?,
            })
        })
        .collect()
}

/// `parts` contiguous ranges covering `0..n`, sizes differing by at most one.
fn even_chunks(n: usize, parts: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).scan(0usize, move |start, p| {
        let len = base + usize::from(p < extra);
        let r = *start..*start + len;
        *start += len;
        Some(r)
    })
}

/// Stack client datasets back into one dataset, in client order.
pub fn concat_clients(clients: &[ClientDataset]) -> Result<Dataset> {
    let dim = clients
        .first()
        .map(|c| c.data.dim())
        .ok_or(DataError::EmptyInput)?;
    let n: usize = clients.iter().map(|c| c.data.rows()).sum();
    let mut features = DMatrix::zeros(n, dim);
    let mut labels = DVector::zeros(n);
    let mut offset = 0;
    for c in clients {
        let rows = c.data.rows();
        features.rows_mut(offset, rows).copy_from(c.data.features());
        labels.rows_mut(offset, rows).copy_from(c.data.labels());
        offset += rows;
    }
    Dataset::new(features, labels)
}
