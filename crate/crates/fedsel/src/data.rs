//! Synthetic data generation, CSV ingestion, normalization, and client
//! partitioning.
//!
//! Labels are binary `{0, 1}` throughout: the harness targets top-level
//! anomaly-detection workloads. Client heterogeneity comes from the
//! partitioner — IID round-robin dealing, or Dirichlet(α) label skew where
//! smaller α concentrates each class on fewer clients.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{seeded, Stream};

/// A dense, row-major feature matrix with binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<u8>,
    feature_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<u8>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Parameter("dataset needs at least one feature".into()));
        }
        if labels.is_empty() {
            return Err(Error::Parameter("dataset needs at least one sample".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Shape(format!(
                "feature buffer holds {} values, expected {} samples x {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Parameter(format!("label {bad} is not in {{0, 1}}")));
        }
        if !features.iter().all(|x| x.is_finite()) {
            return Err(Error::Parameter("non-finite feature value".into()));
        }
        if let Some(names) = &feature_names {
            if names.len() != n_features {
                return Err(Error::Shape(format!(
                    "{} feature names for {} features",
                    names.len(),
                    n_features
                )));
            }
        }
        Ok(Self { features, n_features, labels, feature_names })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Materialize the sub-dataset at `indices` (row order preserved).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            n_features: self.n_features,
            labels,
            feature_names: self.feature_names.clone(),
        }
    }
}

/// How samples are dealt to clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionStrategy {
    /// Seeded shuffle, then round-robin.
    Iid,
    /// Per-class client proportions drawn from Dirichlet(α); smaller α → more skew.
    Dirichlet { alpha: f64 },
}

/// Per-client sample assignments produced by [`partition`].
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub assignments: Vec<Vec<usize>>,
    pub strategy: PartitionStrategy,
    pub seed: u64,
}

/// Draw two class-conditional Gaussian clusters with per-feature means
/// `±class_sep/2` and unit variance. Labels alternate by index, so classes
/// are balanced within one sample.
pub fn generate_synthetic(
    n_samples: usize,
    n_features: usize,
    class_sep: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples < 2 {
        return Err(Error::Parameter(format!(
            "n_samples must be at least 2, got {n_samples}"
        )));
    }
    if n_features == 0 {
        return Err(Error::Parameter("n_features must be at least 1".into()));
    }
    if !(class_sep > 0.0) {
        return Err(Error::Parameter(format!(
            "class_sep must be positive, got {class_sep}"
        )));
    }
    let mut rng = seeded(seed, Stream::DataGen);
    let half = class_sep / 2.0;
    let mut features = Vec::with_capacity(n_samples * n_features);
    let mut labels = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let y = (i % 2) as u8;
        let mean = if y == 1 { half } else { -half };
        for _ in 0..n_features {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(mean + z);
        }
        labels.push(y);
    }
    Dataset::new(features, n_features, labels, None)
}

/// Load a headered CSV whose `label_column` holds `{0, 1}` and whose other
/// columns are numeric. Row order is preserved; the label column is removed
/// from the feature matrix.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Ingestion(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| {
            Error::Ingestion(format!(
                "label column \"{label_column}\" not found in header ({})",
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Ingestion(
            "csv has no feature columns besides the label".into(),
        ));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        // 1-based data row index for messages (header is row 0).
        let row = row_no + 1;
        let record = record.map_err(|e| Error::Ingestion(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::Ingestion(format!(
                "row {row}: has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for (col, cell) in record.iter().enumerate() {
            let name = &headers[col];
            if col == label_idx {
                match cell.trim() {
                    "0" => labels.push(0),
                    "1" => labels.push(1),
                    other => {
                        return Err(Error::Ingestion(format!(
                            "row {row}, column \"{name}\": label \"{other}\" is not 0 or 1"
                        )))
                    }
                }
            } else {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    Error::Ingestion(format!(
                        "row {row}, column \"{name}\": \"{cell}\" is not numeric"
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion(format!(
                        "row {row}, column \"{name}\": non-finite value"
                    )));
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Ingestion(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Dataset::new(features, feature_names.len(), labels, Some(feature_names))
}

/// Per-feature z-score normalization over the population statistics.
/// Zero-variance features map to all-zeros.
pub fn normalize(dataset: &Dataset) -> Dataset {
    let n = dataset.n_samples();
    let d = dataset.n_features();
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (j, x) in dataset.row(i).iter().enumerate() {
            means[j] += x;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut vars = vec![0.0; d];
    for i in 0..n {
        for (j, x) in dataset.row(i).iter().enumerate() {
            let dev = x - means[j];
            vars[j] += dev * dev;
        }
    }
    for v in &mut vars {
        *v /= n as f64;
    }
    let stds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();

    let mut features = Vec::with_capacity(n * d);
    for i in 0..n {
        for (j, x) in dataset.row(i).iter().enumerate() {
            if stds[j] > 1e-12 {
                features.push((x - means[j]) / stds[j]);
            } else {
                features.push(0.0);
            }
        }
    }
    Dataset {
        features,
        n_features: d,
        labels: dataset.labels.clone(),
        feature_names: dataset.feature_names.clone(),
    }
}

/// Split sample indices into (train, test) by a seeded shuffle.
pub fn train_test_split(
    dataset: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = dataset.n_samples();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = seeded(seed, Stream::Split);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let n_train = n_train.clamp(1, n - 1);
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Deal `dataset`'s samples to `n_clients` shards.
///
/// Shards are disjoint, cover the whole input, and every client receives at
/// least one sample. Identical inputs produce identical plans.
pub fn partition(
    dataset: &Dataset,
    n_clients: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<PartitionPlan> {
    if n_clients == 0 {
        return Err(Error::Parameter("n_clients must be at least 1".into()));
    }
    if n_clients > dataset.n_samples() {
        return Err(Error::Parameter(format!(
            "cannot split {} samples across {} clients",
            dataset.n_samples(),
            n_clients
        )));
    }
    let mut rng = seeded(seed, Stream::Partition);
    let assignments = match strategy {
        PartitionStrategy::Iid => {
            let mut idx: Vec<usize> = (0..dataset.n_samples()).collect();
            idx.shuffle(&mut rng);
            let mut shards = vec![Vec::new(); n_clients];
            for (pos, sample) in idx.into_iter().enumerate() {
                shards[pos % n_clients].push(sample);
            }
            shards
        }
        PartitionStrategy::Dirichlet { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::Parameter(format!(
                    "dirichlet alpha must be positive, got {alpha}"
                )));
            }
            dirichlet_assignments(dataset, n_clients, alpha, &mut rng)
        }
    };
    Ok(PartitionPlan { assignments, strategy, seed })
}

fn dirichlet_assignments(
    dataset: &Dataset,
    n_clients: usize,
    alpha: f64,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    let mut shards = vec![Vec::new(); n_clients];
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..dataset.n_samples())
            .filter(|&i| dataset.label(i) == class)
            .collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let props = dirichlet_sample(alpha, n_clients, rng);
        let counts = largest_remainder_counts(&props, members.len());
        let mut cursor = 0;
        for (client, &count) in counts.iter().enumerate() {
            shards[client].extend_from_slice(&members[cursor..cursor + count]);
            cursor += count;
        }
    }
    // Every client must hold at least one sample: move one from the largest
    // shard into each empty one (deterministic scan order).
    loop {
        let empty = match shards.iter().position(|s| s.is_empty()) {
            Some(i) => i,
            None => break,
        };
        let donor = shards
            .iter()
            .enumerate()
            .max_by_key(|(_, s)| s.len())
            .map(|(i, _)| i)
            .expect("at least one shard");
        let moved = shards[donor].pop().expect("donor has samples");
        shards[empty].push(moved);
    }
    shards
}

/// Standard Gamma(α, 1) construction of a Dirichlet(α, …, α) draw.
fn dirichlet_sample(alpha: f64, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        // All-zero underflow at tiny alpha: fall back to a uniform simplex point.
        return vec![1.0 / k as f64; k];
    }
    for d in &mut draws {
        *d /= total;
    }
    draws
}

/// Round proportions to integer counts summing exactly to `total`.
fn largest_remainder_counts(props: &[f64], total: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = props
        .iter()
        .map(|p| (p * total as f64).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = props
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p * total as f64 - counts[i] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}
