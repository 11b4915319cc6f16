//! Loss functions, gradients and estimators of the analysis constants.
//!
//! Two convex losses are provided, both with an `(λ/2)‖w‖²` regularizer so
//! the global objective is `λ`-strongly convex:
//!
//! * regularized least squares, `½(aᵀw - y)²`;
//! * one-vs-rest squared hinge, `Σ_k ½ max(0, 1 - y_k w_kᵀx)²` with
//!   `y_k = +1` for the point's class and `-1` otherwise. The parameter
//!   vector stacks one block of length `m` per class.
//!
//! Local loss `F_i` averages over a device shard; the cluster loss `F̂_c`
//! averages member losses with weight `1/s_c`; the global loss is
//! `F = Σ_c ϱ_c F̂_c` with `ϱ_c = s_c / I`.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{FederatedDataset, LabeledPoint};
use crate::linalg;
use crate::rng;
use crate::vector::{axpy, dot};
use crate::ModelVector;

/// Draws per probe point in [`estimate_sigma2`].
pub const SIGMA2_DRAWS: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shard holds no points")]
    EmptyShard,
    #[error("mini-batch of {batch} exceeds the {available} points of the shard")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("mini-batch size must be at least 1")]
    EmptyBatch,
    #[error("no probe points given")]
    NoProbePoints,
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    LeastSquares,
    SquaredSvm { num_classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
    /// `λ_reg > 0`; also the certified strong-convexity constant `μ`.
    pub regularization: f64,
}

impl LossModel {
    pub fn least_squares(regularization: f64) -> Self {
        LossModel { kind: LossKind::LeastSquares, regularization }
    }

    pub fn squared_svm(num_classes: usize, regularization: f64) -> Self {
        LossModel { kind: LossKind::SquaredSvm { num_classes }, regularization }
    }

    /// Parameter dimension for a given feature dimension.
    pub fn model_dim(&self, feature_dim: usize) -> usize {
        match self.kind {
            LossKind::LeastSquares => feature_dim,
            LossKind::SquaredSvm { num_classes } => num_classes * feature_dim,
        }
    }

    /// `μ`: the regularization constant is a valid strong-convexity modulus.
    pub fn mu(&self) -> f64 {
        self.regularization
    }

    /// Unregularized per-point loss `f̂(x, y; w)`.
    pub fn point_loss(&self, p: &LabeledPoint, w: &[f64]) -> f64 {
        match self.kind {
            LossKind::LeastSquares => {
                let r = dot(&p.x, w) - p.y;
                0.5 * r * r
            }
            LossKind::SquaredSvm { num_classes } => {
                let m = p.x.len();
                (0..num_classes)
                    .map(|k| {
                        let margin = 1.0 - sign(p, k) * dot(&p.x, &w[k * m..(k + 1) * m]);
                        let h = margin.max(0.0);
                        0.5 * h * h
                    })
                    .sum()
            }
        }
    }

    /// `out += scale · ∇f̂(x, y; w)` (data term only).
    fn add_point_gradient(&self, p: &LabeledPoint, w: &[f64], scale: f64, out: &mut [f64]) {
        match self.kind {
            LossKind::LeastSquares => {
                let r = dot(&p.x, w) - p.y;
                axpy(out, scale * r, &p.x);
            }
            LossKind::SquaredSvm { num_classes } => {
                let m = p.x.len();
                for k in 0..num_classes {
                    let y = sign(p, k);
                    let margin = 1.0 - y * dot(&p.x, &w[k * m..(k + 1) * m]);
                    if margin > 0.0 {
                        axpy(&mut out[k * m..(k + 1) * m], -scale * y * margin, &p.x);
                    }
                }
            }
        }
    }

    /// Per-point gradient of `f̂ + (λ/2)‖w‖²`.
    pub fn point_gradient(&self, p: &LabeledPoint, w: &ModelVector) -> ModelVector {
        let mut g = w.clone();
        g.scale(self.regularization);
        self.add_point_gradient(p, w.as_slice(), 1.0, g.as_mut_slice());
        g
    }

    /// Predicted class (largest one-vs-rest score). `None` for least squares.
    pub fn predict(&self, x: &[f64], w: &ModelVector) -> Option<usize> {
        match self.kind {
            LossKind::LeastSquares => None,
            LossKind::SquaredSvm { num_classes } => {
                let m = x.len();
                let w = w.as_slice();
                (0..num_classes)
                    .map(|k| dot(x, &w[k * m..(k + 1) * m]))
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
            }
        }
    }
}

fn sign(p: &LabeledPoint, class: usize) -> f64 {
    if p.class() == class {
        1.0
    } else {
        -1.0
    }
}

/// Mini-batch settings and the random stream a device draws batches from.
#[derive(Debug, Clone)]
pub struct SgdContext {
    pub batch_size: usize,
    pub rng: ChaCha8Rng,
}

impl SgdContext {
    pub fn new(batch_size: usize, seed: u64) -> Self {
        SgdContext { batch_size, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

/// `F_i(w) = (1/D_i) Σ f̂ + (λ/2)‖w‖²`
pub fn local_loss(model: &LossModel, shard: &[LabeledPoint], w: &ModelVector) -> Result<f64> {
    if shard.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    let data: f64 = shard.iter().map(|p| model.point_loss(p, w.as_slice())).sum::<f64>() / shard.len() as f64;
    Ok(data + 0.5 * model.regularization * w.norm_sq())
}

/// `∇F_i(w)`
pub fn full_gradient(model: &LossModel, shard: &[LabeledPoint], w: &ModelVector) -> Result<ModelVector> {
    if shard.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    Ok(batch_gradient(model, shard.iter(), shard.len(), w))
}

fn batch_gradient<'a>(
    model: &LossModel,
    points: impl Iterator<Item = &'a LabeledPoint>,
    count: usize,
    w: &ModelVector,
) -> ModelVector {
    let mut g = vec![0.0; w.dim()];
    let scale = 1.0 / count as f64;
    for p in points {
        model.add_point_gradient(p, w.as_slice(), scale, &mut g);
    }
    axpy(&mut g, model.regularization, w.as_slice());
    ModelVector::from_raw(g)
}

/// Mini-batch gradient over `ctx.batch_size` points drawn uniformly without
/// replacement. A full batch returns [`full_gradient`] without drawing.
pub fn sgd_gradient(model: &LossModel, shard: &[LabeledPoint], w: &ModelVector, ctx: &mut SgdContext) -> Result<ModelVector> {
    if shard.is_empty() {
        return Err(ModelError::EmptyShard);
    }
    if ctx.batch_size == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if ctx.batch_size > shard.len() {
        return Err(ModelError::BatchTooLarge { batch: ctx.batch_size, available: shard.len() });
    }
    if ctx.batch_size == shard.len() {
        return full_gradient(model, shard, w);
    }
    let picks = index::sample(&mut ctx.rng, shard.len(), ctx.batch_size);
    Ok(batch_gradient(model, picks.iter().map(|i| &shard[i]), ctx.batch_size, w))
}

/// `F̂_c(w)`: mean of member local losses.
pub fn cluster_loss(model: &LossModel, dataset: &FederatedDataset, members: &[usize], w: &ModelVector) -> Result<f64> {
    let mut total = 0.0;
    for &i in members {
        total += local_loss(model, dataset.shard(i), w)?;
    }
    Ok(total / members.len() as f64)
}

/// `∇F̂_c(w)`
pub fn cluster_gradient(model: &LossModel, dataset: &FederatedDataset, members: &[usize], w: &ModelVector) -> Result<ModelVector> {
    let mut g = ModelVector::zeros(w.dim());
    for &i in members {
        g.axpy(1.0, &full_gradient(model, dataset.shard(i), w)?);
    }
    g.scale(1.0 / members.len() as f64);
    Ok(g)
}

/// `F(w) = Σ_c ϱ_c F̂_c(w)`
pub fn global_loss(model: &LossModel, dataset: &FederatedDataset, w: &ModelVector) -> Result<f64> {
    let weights = dataset.cluster_weights();
    let mut total = 0.0;
    for (c, members) in dataset.clusters().iter().enumerate() {
        total += weights[c] * cluster_loss(model, dataset, members, w)?;
    }
    Ok(total)
}

/// `∇F(w) = Σ_c ϱ_c ∇F̂_c(w)`
pub fn global_gradient(model: &LossModel, dataset: &FederatedDataset, w: &ModelVector) -> Result<ModelVector> {
    let weights = dataset.cluster_weights();
    let mut g = ModelVector::zeros(w.dim());
    for (c, members) in dataset.clusters().iter().enumerate() {
        g.axpy(weights[c], &cluster_gradient(model, dataset, members, w)?);
    }
    Ok(g)
}

/// Top-1 accuracy on a labelled set, or `None` for regression losses.
pub fn accuracy(model: &LossModel, points: &[LabeledPoint], w: &ModelVector) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let mut correct = 0usize;
    for p in points {
        if model.predict(&p.x, w)? == p.class() {
            correct += 1;
        }
    }
    Some(correct as f64 / points.len() as f64)
}

/// Smoothness constant `β`: the largest `λ_max(XᵢᵀXᵢ / D_i) + λ_reg` over
/// devices.
///
/// Exact for least squares. For the squared hinge each class block has
/// curvature at most `xxᵀ` whatever the active set, so the same value bounds
/// it.
pub fn estimate_beta(model: &LossModel, dataset: &FederatedDataset) -> f64 {
    dataset
        .shards()
        .iter()
        .map(|shard| {
            let rows: Vec<&[f64]> = shard.iter().map(|p| p.x.as_slice()).collect();
            linalg::gram_max_eigenvalue(&rows, shard.len() as f64)
        })
        .fold(0.0, f64::max)
        + model.regularization
}

/// Empirical SGD noise variance `σ²`: the largest mean of
/// `‖ĝ - ∇F_i(w)‖²` over devices and probe points, each from 1000 seeded
/// mini-batch draws.
pub fn estimate_sigma2(
    model: &LossModel,
    dataset: &FederatedDataset,
    batch_size: usize,
    probe_points: &[ModelVector],
    seed: u64,
) -> Result<f64> {
    if probe_points.is_empty() {
        return Err(ModelError::NoProbePoints);
    }
    let mut worst = 0.0_f64;
    for (i, shard) in dataset.shards().iter().enumerate() {
        for (k, w) in probe_points.iter().enumerate() {
            let exact = full_gradient(model, shard, w)?;
            let mut ctx = SgdContext::new(batch_size, rng::derive_seed(seed, &[i as u64, k as u64]));
            let mut total = 0.0;
            for _ in 0..SIGMA2_DRAWS {
                total += sgd_gradient(model, shard, w, &mut ctx)?.sub(&exact).norm_sq();
            }
            worst = worst.max(total / SIGMA2_DRAWS as f64);
        }
    }
    Ok(worst)
}

/// Empirical gradient diversity `δ = max_{c,w} ‖∇F̂_c(w) - ∇F(w)‖` over the
/// probe points.
pub fn measure_gradient_diversity(model: &LossModel, dataset: &FederatedDataset, probe_points: &[ModelVector]) -> Result<f64> {
    if probe_points.is_empty() {
        return Err(ModelError::NoProbePoints);
    }
    let clusters = dataset.clusters();
    let weights = dataset.cluster_weights();
    let mut worst = 0.0_f64;
    for w in probe_points {
        let per_cluster = clusters
            .iter()
            .map(|m| cluster_gradient(model, dataset, m, w))
            .collect::<Result<Vec<_>>>()?;
        let mut global = ModelVector::zeros(w.dim());
        for (g, &rho) in per_cluster.iter().zip(&weights) {
            global.axpy(rho, g);
        }
        for g in &per_cluster {
            worst = worst.max(g.distance(&global));
        }
    }
    Ok(worst)
}

/// Probe points for the constant estimators: the start point, the optimum
/// when known, their midpoint, and `extra` seeded points scattered in a ball
/// of radius `spread` around the centre of the other probes.
pub fn probe_points(start: &ModelVector, optimum: Option<&ModelVector>, spread: f64, extra: usize, seed: u64) -> Vec<ModelVector> {
    use rand_distr::{Distribution, StandardNormal};
    let mut out = vec![start.clone()];
    let centre = match optimum {
        Some(opt) => {
            out.push(opt.clone());
            let mid = ModelVector::mean([start, opt]);
            out.push(mid.clone());
            mid
        }
        None => start.clone(),
    };
    let mut rng = rng::stream(seed, &[rng::PROBE_STREAM]);
    for _ in 0..extra {
        let dir: Vec<f64> = (0..start.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = linalg::norm(&dir).max(f64::MIN_POSITIVE);
        let mut p = centre.clone();
        p.axpy(spread / n, &ModelVector::from_raw(dir));
        out.push(p);
    }
    out
}

/// Initial model with independent `N(0, scale²)` coordinates; all zeros
/// when `scale` is zero.
pub fn random_model(dim: usize, scale: f64, seed: u64) -> ModelVector {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rng::stream(seed, &[rng::INIT_STREAM]);
    ModelVector::from_raw(
        (0..dim)
            .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect(),
    )
}
