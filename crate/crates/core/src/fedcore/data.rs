//! Synthetic Gaussian-blob classification data and client partitioning.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FedError;
use crate::domain::DeviceId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Shuffles with `seed` and holds out the trailing `test_fraction`.
    /// Both halves keep at least one sample.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset), FedError> {
        if !(0.0..1.0).contains(&test_fraction) || self.len() < 2 {
            return Err(FedError::InvalidShape(format!(
                "cannot hold out {test_fraction} of {} samples",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_test =
            ((self.len() as f64 * test_fraction).round() as usize).clamp(1, self.len() - 1);
        let n_train = self.len() - n_test;
        let pick = |range: &[usize]| Dataset {
            n_classes: self.n_classes,
            feature_dim: self.feature_dim,
            samples: range.iter().map(|&i| self.samples[i].clone()).collect(),
        };
        Ok((pick(&idx[..n_train]), pick(&idx[n_train..])))
    }
}

/// Shape and difficulty of a synthetic blob dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_samples: usize,
    pub feature_dim: usize,
    /// Scale of the class means (drawn from `separation * N(0, I)`); the
    /// within-class noise is unit variance.
    pub separation: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_samples: 10_000,
            feature_dim: 16,
            separation: 1.0,
        }
    }
}

/// Gaussian blobs with the default separation.
pub fn generate_synthetic_dataset(
    n_classes: usize,
    n_samples: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<Dataset, FedError> {
    generate_blobs(
        &SyntheticSpec {
            n_classes,
            n_samples,
            feature_dim,
            ..SyntheticSpec::default()
        },
        seed,
    )
}

pub fn generate_blobs(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, FedError> {
    let SyntheticSpec {
        n_classes,
        n_samples,
        feature_dim,
        separation,
    } = *spec;
    if n_classes < 2 || feature_dim == 0 || n_samples < n_classes {
        return Err(FedError::InvalidShape(format!(
            "need n_classes >= 2, feature_dim >= 1 and n_samples >= n_classes \
             (got {n_classes} classes, {n_samples} samples, dim {feature_dim})"
        )));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(FedError::InvalidShape(format!(
            "separation must be positive, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while means.len() < n_classes {
        let m: Vec<f64> = (0..feature_dim)
            .map(|_| {
                separation
                    * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        if !means.contains(&m) {
            means.push(m);
        }
    }
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let samples = labels
        .into_iter()
        .map(|label| {
            let features = means[label]
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + z
                })
                .collect();
            Sample { features, label }
        })
        .collect();
    Ok(Dataset {
        n_classes,
        feature_dim,
        samples,
    })
}

/// One device's local shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub owner: DeviceId,
    samples: Vec<Sample>,
    class_histogram: BTreeMap<usize, usize>,
}

impl ClientDataset {
    pub fn new(owner: DeviceId, samples: Vec<Sample>) -> Self {
        let mut class_histogram = BTreeMap::new();
        for s in &samples {
            *class_histogram.entry(s.label).or_insert(0) += 1;
        }
        Self {
            owner,
            samples,
            class_histogram,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_histogram(&self) -> &BTreeMap<usize, usize> {
        &self.class_histogram
    }

    /// Number of distinct classes present.
    pub fn classes_present(&self) -> usize {
        self.class_histogram.values().filter(|&&c| c > 0).count()
    }
}

pub type Partition = BTreeMap<DeviceId, ClientDataset>;

fn indices_by_class(dataset: &Dataset) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); dataset.n_classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    by_class
}

fn build_partition(dataset: &Dataset, assignment: Vec<Vec<usize>>) -> Partition {
    assignment
        .into_iter()
        .enumerate()
        .map(|(d, mut idx)| {
            idx.sort_unstable();
            let id = DeviceId(d as u32);
            let samples = idx
                .into_iter()
                .map(|i| dataset.samples[i].clone())
                .collect();
            (id, ClientDataset::new(id, samples))
        })
        .collect()
}

/// Deals every class round-robin across devices. The dealing pointer carries
/// over between classes, so per-class counts differ by at most one sample
/// between devices and so do totals.
pub fn partition_iid(
    dataset: &Dataset,
    n_devices: usize,
    seed: u64,
) -> Result<Partition, FedError> {
    if n_devices == 0 || n_devices > dataset.len() {
        return Err(FedError::TooManyDevices {
            devices: n_devices,
            samples: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Vec::new(); n_devices];
    let mut next = 0usize;
    for mut idx in indices_by_class(dataset) {
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[next % n_devices].push(i);
            next += 1;
        }
    }
    Ok(build_partition(dataset, assignment))
}

/// Splits `n` items according to `weights` (summing to 1) with the
/// largest-remainder rule; ties go to the lower index.
fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn symmetric_dirichlet(rng: &mut ChaCha8Rng, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        draws.iter().map(|d| d / total).collect()
    } else {
        // every gamma draw underflowed; fall back to uniform
        vec![1.0 / n as f64; n]
    }
}

/// Label-skewed split: for each class, device shares follow a symmetric
/// Dirichlet(`concentration`). Devices left empty are then given one sample
/// taken from the currently largest device.
pub fn partition_dirichlet(
    dataset: &Dataset,
    n_devices: usize,
    concentration: f64,
    seed: u64,
) -> Result<Partition, FedError> {
    if !(concentration > 0.0) || !concentration.is_finite() {
        return Err(FedError::DegenerateConcentration(concentration));
    }
    if n_devices == 0 || n_devices > dataset.len() {
        return Err(FedError::TooManyDevices {
            devices: n_devices,
            samples: dataset.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Vec::new(); n_devices];
    for mut idx in indices_by_class(dataset) {
        idx.shuffle(&mut rng);
        let shares = symmetric_dirichlet(&mut rng, n_devices, concentration);
        let counts = apportion(idx.len(), &shares);
        let mut cursor = 0;
        for (d, c) in counts.into_iter().enumerate() {
            assignment[d].extend_from_slice(&idx[cursor..cursor + c]);
            cursor += c;
        }
    }
    while let Some(empty) = assignment.iter().position(|a| a.is_empty()) {
        let donor = (0..n_devices)
            .max_by(|&a, &b| {
                assignment[a]
                    .len()
                    .cmp(&assignment[b].len())
                    .then(b.cmp(&a))
            })
            .expect("at least one device");
        let moved = assignment[donor].pop().expect("donor holds samples");
        assignment[empty].push(moved);
    }
    Ok(build_partition(dataset, assignment))
}

/// Pools every shard back into one sample list in ascending device order.
pub fn pool(partition: &Partition) -> Vec<Sample> {
    partition
        .values()
        .flat_map(|c| c.samples().iter().cloned())
        .collect()
}
