//! Federated datasets.
//!
//! A [`FederatedDataset`] holds one shard per device plus the device →
//! cluster map. Shards come from three places: the synthetic least-squares
//! task (whose optimum is known in closed form), a label-skewed partition of a
//! pooled classification set, or IDX files via [`load_idx`].

mod idx;

pub use idx::load_idx;

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::rng;
use crate::ModelVector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("class {class} is not assigned to any device")]
    UnassignedClass { class: usize },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { path: PathBuf, found: u32, expected: u32 },
    #[error("{images} holds {image_count} images but {labels} holds {label_count} labels")]
    CountMismatch { images: PathBuf, image_count: usize, labels: PathBuf, label_count: usize },
    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    TruncatedFile { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One data point. For classification `y` holds the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledPoint {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        LabeledPoint { x, y }
    }

    pub fn class(&self) -> usize {
        self.y as usize
    }
}

/// Per-device shards and the cluster partition of devices.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    shards: Vec<Vec<LabeledPoint>>,
    cluster_of: Vec<usize>,
    num_clusters: usize,
    /// Classes assigned to each device by a label-skew partition.
    pub labels_per_device: Option<Vec<Vec<usize>>>,
}

impl FederatedDataset {
    /// Validates that every shard is nonempty, feature dimensions agree and
    /// `cluster_of` maps onto `0..N` with every cluster nonempty.
    pub fn new(shards: Vec<Vec<LabeledPoint>>, cluster_of: Vec<usize>) -> Result<Self> {
        if shards.is_empty() {
            return Err(DataError::InvalidShape("no devices".into()));
        }
        if cluster_of.len() != shards.len() {
            return Err(DataError::InvalidShape(format!(
                "{} devices but {} cluster assignments",
                shards.len(),
                cluster_of.len()
            )));
        }
        if let Some(i) = shards.iter().position(Vec::is_empty) {
            return Err(DataError::InsufficientData(format!("device {i} holds no points")));
        }
        let dim = shards[0][0].x.len();
        if shards.iter().flatten().any(|p| p.x.len() != dim) {
            return Err(DataError::InvalidShape("feature dimension varies across points".into()));
        }
        let num_clusters = cluster_of.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; num_clusters];
        cluster_of.iter().for_each(|&c| sizes[c] += 1);
        if let Some(c) = sizes.iter().position(|&s| s == 0) {
            return Err(DataError::InvalidShape(format!("cluster {c} has no devices")));
        }
        Ok(FederatedDataset { shards, cluster_of, num_clusters, labels_per_device: None })
    }

    pub fn num_devices(&self) -> usize {
        self.shards.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn feature_dim(&self) -> usize {
        self.shards[0][0].x.len()
    }

    pub fn shard(&self, device: usize) -> &[LabeledPoint] {
        &self.shards[device]
    }

    pub fn shards(&self) -> &[Vec<LabeledPoint>] {
        &self.shards
    }

    pub fn cluster_of(&self, device: usize) -> usize {
        self.cluster_of[device]
    }

    /// Device ids of every cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters];
        for (i, &c) in self.cluster_of.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    /// `ϱ_c = s_c / I`.
    pub fn cluster_weights(&self) -> Vec<f64> {
        let n = self.num_devices() as f64;
        self.clusters().iter().map(|m| m.len() as f64 / n).collect()
    }

    /// All points of all devices, device-major.
    pub fn pooled(&self) -> impl Iterator<Item = &LabeledPoint> {
        self.shards.iter().flatten()
    }
}

/// Contiguous, balanced cluster map: device `i` joins cluster `⌊i·N/I⌋`.
pub fn contiguous_clusters(devices: usize, clusters: usize) -> Vec<usize> {
    (0..devices).map(|i| i * clusters / devices).collect()
}

/// Parameters of the synthetic regularized least-squares task.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    /// Model dimension, including the constant intercept coordinate.
    pub dim: usize,
    pub devices: usize,
    pub clusters: usize,
    pub points_per_device: usize,
    /// Scale of the per-cluster target shift.
    pub heterogeneity: f64,
    /// `λ_reg` of the loss the optimum is computed for.
    pub regularization: f64,
    /// Standard deviation of per-point observation noise.
    pub noise: f64,
}

impl Default for QuadraticTask {
    fn default() -> Self {
        QuadraticTask {
            dim: 5,
            devices: 25,
            clusters: 5,
            points_per_device: 20,
            heterogeneity: 1.0,
            regularization: 1.0,
            noise: 0.1,
        }
    }
}

/// Synthetic least-squares data with cluster-level heterogeneity and a
/// closed-form optimum.
///
/// Every cluster holds a copy of the same per-position device features
/// (coordinate 0 is a constant 1); targets are `aᵀw_true + noise + h·z_c`
/// with one standard normal `z_c` per cluster. Cluster losses then differ
/// only through the shift, so `∇F̂_c(w) - ∇F(w) = -h·(z_c - z̄)·ā` for every
/// `w`, with `ā` the mean feature vector, and the diversity is zero when
/// `h = 0`. Random draws do not depend on
/// `h`, so changing it with a fixed seed only rescales the shifts.
///
/// Returns the dataset and the minimizer of the pooled regularized objective.
pub fn synth_quadratic(task: &QuadraticTask, seed: u64) -> Result<(FederatedDataset, ModelVector)> {
    let QuadraticTask { dim, devices, clusters, points_per_device, heterogeneity, regularization, noise } =
        task.clone();
    if dim == 0 || devices == 0 || clusters == 0 || points_per_device == 0 {
        return Err(DataError::InvalidShape("dimensions and counts must be positive".into()));
    }
    if devices % clusters != 0 {
        return Err(DataError::InvalidShape(format!(
            "{devices} devices cannot be split evenly into {clusters} clusters"
        )));
    }
    if heterogeneity < 0.0 || regularization <= 0.0 {
        return Err(DataError::InvalidShape("heterogeneity must be ≥ 0 and regularization > 0".into()));
    }
    let per_cluster = devices / clusters;
    let mut rng = rng::stream(seed, &[rng::DATA_STREAM, 1]);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let w_true: Vec<f64> = (0..dim).map(|_| normal()).collect();
    let base: Vec<Vec<(Vec<f64>, f64)>> = (0..per_cluster)
        .map(|_| {
            (0..points_per_device)
                .map(|_| {
                    let mut a = Vec::with_capacity(dim);
                    a.push(1.0);
                    a.extend((1..dim).map(|_| normal()));
                    let clean: f64 = a.iter().zip(&w_true).map(|(x, w)| x * w).sum();
                    (a, clean + noise * normal())
                })
                .collect()
        })
        .collect();
    let shifts: Vec<f64> = (0..clusters).map(|_| normal()).collect();

    let cluster_of = contiguous_clusters(devices, clusters);
    let shards: Vec<Vec<LabeledPoint>> = (0..devices)
        .map(|i| {
            let shift = heterogeneity * shifts[cluster_of[i]];
            base[i % per_cluster].iter().map(|(a, y)| LabeledPoint::new(a.clone(), y + shift)).collect()
        })
        .collect();
    let dataset = FederatedDataset::new(shards, cluster_of)?;
    let optimum = least_squares_optimum(&dataset, regularization);
    Ok((dataset, optimum))
}

/// Minimizer of `Σ_i (1/I)(1/D_i) Σ ½(aᵀw - y)² + (λ/2)‖w‖²`; the product
/// `ϱ_c·(1/s_c)` is `1/I` for every cluster.
fn least_squares_optimum(dataset: &FederatedDataset, regularization: f64) -> ModelVector {
    let dim = dataset.feature_dim();
    let mut h = DMatrix::<f64>::identity(dim, dim) * regularization;
    let mut b = DVector::<f64>::zeros(dim);
    let weights = dataset.cluster_weights();
    let clusters = dataset.clusters();
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            let shard = dataset.shard(i);
            let scale = weights[c] / members.len() as f64 / shard.len() as f64;
            for p in shard {
                let a = DVector::from_column_slice(&p.x);
                h += &a * a.transpose() * scale;
                b += &a * (p.y * scale);
            }
        }
    }
    let solution = h.cholesky().expect("regularized Gram matrix is positive definite").solve(&b);
    ModelVector::from_raw(solution.iter().copied().collect())
}

/// Parameters of a Gaussian-mixture classification pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationTask {
    pub num_classes: usize,
    /// Raw feature dimension; an intercept coordinate is prepended.
    pub dim: usize,
    pub train_points: usize,
    pub test_points: usize,
    /// Standard deviation of the class means around the origin.
    pub separation: f64,
}

impl Default for ClassificationTask {
    fn default() -> Self {
        ClassificationTask { num_classes: 10, dim: 10, train_points: 2500, test_points: 500, separation: 1.5 }
    }
}

/// Train and test pools drawn from the same class-conditional Gaussians.
/// Classes are balanced (`class = index mod C`). Features are `[1, x]`.
pub fn synth_classification(task: &ClassificationTask, seed: u64) -> (Vec<LabeledPoint>, Vec<LabeledPoint>) {
    let mut rng = rng::stream(seed, &[rng::DATA_STREAM, 2]);
    let means: Vec<Vec<f64>> = (0..task.num_classes)
        .map(|_| {
            (0..task.dim)
                .map(|_| task.separation * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        })
        .collect();
    let draw = |count: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<LabeledPoint> {
        (0..count)
            .map(|i| {
                let class = i % task.num_classes;
                let mut x = Vec::with_capacity(task.dim + 1);
                x.push(1.0);
                x.extend(means[class].iter().map(|m| m + Distribution::<f64>::sample(&StandardNormal, rng)));
                LabeledPoint::new(x, class as f64)
            })
            .collect()
    };
    let train = draw(task.train_points, &mut rng);
    let test = draw(task.test_points, &mut rng);
    (train, test)
}

/// Prepends a constant 1 to every feature vector.
pub fn with_intercept(points: Vec<LabeledPoint>) -> Vec<LabeledPoint> {
    points
        .into_iter()
        .map(|p| {
            let mut x = Vec::with_capacity(p.x.len() + 1);
            x.push(1.0);
            x.extend(p.x);
            LabeledPoint::new(x, p.y)
        })
        .collect()
}

/// Seeded split of a pool into `(train, test)` with `test_fraction` of the
/// points held out.
pub fn train_test_split(mut pool: Vec<LabeledPoint>, test_fraction: f64, seed: u64) -> (Vec<LabeledPoint>, Vec<LabeledPoint>) {
    let mut rng = rng::stream(seed, &[rng::DATA_STREAM, 3]);
    pool.shuffle(&mut rng);
    let test_len = ((pool.len() as f64) * test_fraction).round() as usize;
    let train = pool.split_off(test_len);
    (train, pool)
}

/// Non-i.i.d. partition: each device receives `labels_per_device` classes.
///
/// Class windows are assigned round-robin: device `i` gets classes
/// `(r + i·L + j) mod C` for `j < L`, with the rotation `r` drawn from the
/// seed. The points of a class are shuffled (seeded) and split evenly over
/// the devices holding that class, the first devices by index taking one
/// extra point each when the split is uneven. Devices are grouped into
/// clusters by [`contiguous_clusters`].
pub fn partition_label_skew(
    pool: &[LabeledPoint],
    devices: usize,
    clusters: usize,
    labels_per_device: usize,
    num_classes: usize,
    seed: u64,
) -> Result<FederatedDataset> {
    if devices == 0 || clusters == 0 || clusters > devices {
        return Err(DataError::InvalidShape(format!("cannot place {devices} devices in {clusters} clusters")));
    }
    if labels_per_device == 0 || labels_per_device > num_classes {
        return Err(DataError::InvalidShape(format!(
            "labels per device {labels_per_device} must be in 1..={num_classes}"
        )));
    }
    let mut by_class: Vec<Vec<&LabeledPoint>> = vec![Vec::new(); num_classes];
    for p in pool {
        let c = p.class();
        if c >= num_classes || p.y.fract() != 0.0 || p.y < 0.0 {
            return Err(DataError::InvalidShape(format!("label {} is not a class in 0..{num_classes}", p.y)));
        }
        by_class[c].push(p);
    }
    let mut rng = rng::stream(seed, &[rng::DATA_STREAM, 4]);
    let rotation = rng.random_range(0..num_classes);
    let assigned: Vec<Vec<usize>> = (0..devices)
        .map(|i| (0..labels_per_device).map(|j| (rotation + i * labels_per_device + j) % num_classes).collect())
        .collect();
    let mut holders: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, classes) in assigned.iter().enumerate() {
        for &c in classes {
            holders[c].push(i);
        }
    }
    let mut shards: Vec<Vec<LabeledPoint>> = vec![Vec::new(); devices];
    for (class, points) in by_class.iter_mut().enumerate() {
        let owners = &holders[class];
        if owners.is_empty() {
            if points.is_empty() {
                continue;
            }
            return Err(DataError::UnassignedClass { class });
        }
        points.shuffle(&mut rng::stream(seed, &[rng::DATA_STREAM, 5, class as u64]));
        let base = points.len() / owners.len();
        let extra = points.len() % owners.len();
        let mut cursor = 0;
        for (k, &device) in owners.iter().enumerate() {
            let take = base + usize::from(k < extra);
            shards[device].extend(points[cursor..cursor + take].iter().map(|p| (*p).clone()));
            cursor += take;
        }
    }
    if let Some(i) = shards.iter().position(Vec::is_empty) {
        return Err(DataError::InsufficientData(format!("device {i} would receive no points")));
    }
    let mut dataset = FederatedDataset::new(shards, contiguous_clusters(devices, clusters))?;
    dataset.labels_per_device = Some(assigned);
    Ok(dataset)
}
