//! Datasets, non-IID partitioning and label-flip poisoning.

use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::FlError;
use crate::ids::WorkerId;
use crate::seed::{self, tag};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Row-major feature matrix with one class label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, FlError> {
        if n_features == 0 || n_classes == 0 {
            return Err(FlError::InvalidDims("zero features or classes".into()));
        }
        if features.len() != labels.len() * n_features {
            return Err(FlError::InvalidDims(format!(
                "{} feature values for {} rows of {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(FlError::InvalidDims(format!(
                "label {bad} outside {n_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_features: self.n_features,
            n_classes: self.n_classes,
        }
    }

    /// Splits off the first `n` rows.
    pub fn split_at(&self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let head: Vec<usize> = (0..n).collect();
        let tail: Vec<usize> = (n..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Dataset {
        assert_eq!(labels.len(), self.labels.len());
        Dataset {
            labels,
            ..self.clone()
        }
    }
}

/// Class-conditional Gaussian blobs with unit variance. Class `c` is centred
/// at `separation / sqrt(2) * e_c`, so every pair of class means lies exactly
/// `separation` apart. Labels are balanced to within one example per class.
pub fn gen_synthetic(
    n_examples: usize,
    n_classes: usize,
    n_features: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset, FlError> {
    if n_classes < 2 {
        return Err(FlError::InvalidDims(format!(
            "need at least 2 classes, got {n_classes}"
        )));
    }
    if n_features < n_classes {
        return Err(FlError::InvalidDims(format!(
            "{n_features} features cannot host {n_classes} orthogonal class means"
        )));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(FlError::InvalidDims(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = seed::rng(seed, &[tag::DATASET]);
    let mut labels: Vec<usize> = (0..n_examples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let offset = separation / std::f64::consts::SQRT_2;
    let mut features = Vec::with_capacity(n_examples * n_features);
    for &label in &labels {
        for j in 0..n_features {
            let noise: f64 = rng.sample(StandardNormal);
            features.push(if j == label { offset + noise } else { noise });
        }
    }
    Dataset::new(features, labels, n_features, n_classes)
}

fn read_u32(buf: &[u8], at: usize, what: &str) -> Result<u32, FlError> {
    buf.get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| FlError::TruncatedFile(format!("{what} header")))
}

fn read_file(path: &Path) -> Result<Vec<u8>, FlError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

/// Parses an IDX image/label pair. Pixels are scaled to `[0, 1]`; the class
/// count is one more than the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, FlError> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset, FlError> {
    let magic = read_u32(labels, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(FlError::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let magic = read_u32(images, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(FlError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32(labels, 4, "labels")? as usize;
    let n_images = read_u32(images, 4, "images")? as usize;
    let rows = read_u32(images, 8, "images")? as usize;
    let cols = read_u32(images, 12, "images")? as usize;
    if n_images != n_labels {
        return Err(FlError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }
    let pixels = rows * cols;
    let image_bytes = images
        .get(16..16 + n_images * pixels)
        .ok_or_else(|| FlError::TruncatedFile(format!("expected {n_images} images")))?;
    let label_bytes = labels
        .get(8..8 + n_labels)
        .ok_or_else(|| FlError::TruncatedFile(format!("expected {n_labels} labels")))?;

    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let features = image_bytes.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(features, labels, pixels, n_classes)
}

/// Fraction of examples per class.
pub fn label_distribution(ds: &Dataset) -> Vec<f64> {
    let mut counts = vec![0.0; ds.n_classes()];
    for &l in ds.labels() {
        counts[l] += 1.0;
    }
    let n = ds.len().max(1) as f64;
    counts.iter_mut().for_each(|c| *c /= n);
    counts
}

/// Label-distribution distance `sum_i |p_i - q_i|`, in `[0, 2]`.
pub fn emd(shard_dist: &[f64], global_dist: &[f64]) -> Result<f64, FlError> {
    if shard_dist.len() != global_dist.len() {
        return Err(FlError::LengthMismatch(shard_dist.len(), global_dist.len()));
    }
    Ok(shard_dist
        .iter()
        .zip(global_dist)
        .map(|(p, q)| (p - q).abs())
        .sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Behavior {
    Honest,
    /// Flips `attack_strength` of its labels.
    Poisoner {
        attack_strength: f64,
    },
    /// Holds data from only `classes_held` classes.
    Unreliable {
        classes_held: usize,
    },
    /// Trains on only `fraction_trained` of its shard.
    Lazy {
        fraction_trained: f64,
    },
}

impl Behavior {
    pub fn validate(&self, n_classes: usize) -> Result<(), FlError> {
        let ok = match *self {
            Behavior::Honest => true,
            Behavior::Poisoner { attack_strength } => (0.0..=1.0).contains(&attack_strength),
            Behavior::Unreliable { classes_held } => classes_held >= 1 && classes_held <= n_classes,
            Behavior::Lazy { fraction_trained } => fraction_trained > 0.0 && fraction_trained < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(FlError::InvalidDims(format!("invalid behavior {self:?}")))
        }
    }

    /// Share of the shard a worker actually trains on.
    pub fn coverage(&self) -> f64 {
        match *self {
            Behavior::Lazy { fraction_trained } => fraction_trained,
            _ => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerProfile {
    pub worker_id: WorkerId,
    pub behavior: Behavior,
    /// Training data as the worker will use it (already poisoned for
    /// poisoners).
    pub shard: Dataset,
}

fn per_class_quota(size: usize, classes: &[usize], n_classes: usize) -> Vec<usize> {
    let mut quota = vec![0; n_classes];
    let (base, extra) = (size / classes.len(), size % classes.len());
    for (i, &c) in classes.iter().enumerate() {
        quota[c] = base + usize::from(i < extra);
    }
    quota
}

/// Assigns disjoint shards. Honest, poisoning and lazy workers receive
/// stratified shards with the population's uniform class mix; each
/// `Unreliable(k)` worker receives equal parts of `k` randomly chosen classes.
/// Poisoners' shards are returned clean; see [`poison`].
///
/// `shard_size` defaults to an even split of the whole dataset (sizes differ by
/// at most one).
pub fn partition(
    ds: &Dataset,
    workers: &[(WorkerId, Behavior)],
    shard_size: Option<usize>,
    seed: u64,
) -> Result<Vec<WorkerProfile>, FlError> {
    if workers.is_empty() {
        return Err(FlError::InsufficientData(
            "no workers to partition for".into(),
        ));
    }
    let n_classes = ds.n_classes();
    for (_, b) in workers {
        b.validate(n_classes)?;
    }
    let sizes: Vec<usize> = match shard_size {
        Some(s) => vec![s; workers.len()],
        None => {
            let (base, extra) = (ds.len() / workers.len(), ds.len() % workers.len());
            (0..workers.len())
                .map(|i| base + usize::from(i < extra))
                .collect()
        }
    };
    let total: usize = sizes.iter().sum();
    if total > ds.len() {
        return Err(FlError::InsufficientData(format!(
            "{total} examples requested from a pool of {}",
            ds.len()
        )));
    }

    let mut rng = seed::rng(seed, &[tag::PARTITION]);
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in ds.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for p in &mut pools {
        p.shuffle(&mut rng);
    }

    // Stratified workers first so skewed workers draw from what remains.
    let mut order: Vec<usize> = (0..workers.len()).collect();
    order.sort_by_key(|&i| matches!(workers[i].1, Behavior::Unreliable { .. }));

    let mut shards: Vec<Option<Vec<usize>>> = vec![None; workers.len()];
    for i in order {
        let (id, behavior) = workers[i];
        let size = sizes[i];
        let quota = match behavior {
            Behavior::Unreliable { classes_held } => {
                let need = size.div_ceil(classes_held);
                let mut eligible: Vec<usize> =
                    (0..n_classes).filter(|&c| pools[c].len() >= need).collect();
                if eligible.len() < classes_held {
                    return Err(FlError::InsufficientData(format!(
                        "{id}: only {} classes still hold {need} examples",
                        eligible.len()
                    )));
                }
                eligible.shuffle(&mut rng);
                eligible.truncate(classes_held);
                eligible.sort_unstable();
                per_class_quota(size, &eligible, n_classes)
            }
            _ => {
                let mut classes: Vec<usize> = (0..n_classes).collect();
                // remainder examples go to the classes with the most left,
                // ties broken at random
                classes.shuffle(&mut rng);
                classes.sort_by_key(|&c| std::cmp::Reverse(pools[c].len()));
                per_class_quota(size, &classes, n_classes)
            }
        };
        let mut shard = Vec::with_capacity(size);
        for (c, &q) in quota.iter().enumerate() {
            if pools[c].len() < q {
                return Err(FlError::InsufficientData(format!(
                    "{id}: class {c} has {} examples left, needs {q}",
                    pools[c].len()
                )));
            }
            let at = pools[c].len() - q;
            shard.extend(pools[c].drain(at..));
        }
        shard.shuffle(&mut rng);
        shards[i] = Some(shard);
    }

    Ok(workers
        .iter()
        .zip(shards)
        .map(|(&(worker_id, behavior), idx)| WorkerProfile {
            worker_id,
            behavior,
            shard: ds.subset(&idx.expect("every worker assigned")),
        })
        .collect())
}

/// Remaps exactly `round(attack_strength * n)` labels, chosen uniformly
/// without replacement, each to a uniformly random *different* class.
pub fn poison(shard: &Dataset, attack_strength: f64, seed: u64) -> Dataset {
    let n = shard.len();
    let k = ((attack_strength.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let c = shard.n_classes();
    if k == 0 || c < 2 {
        return shard.clone();
    }
    let mut rng = seed::rng(seed, &[tag::POISON]);
    let mut labels = shard.labels().to_vec();
    for i in index::sample(&mut rng, n, k) {
        labels[i] = (labels[i] + 1 + rng.random_range(0..c - 1)) % c;
    }
    shard.with_labels(labels)
}
