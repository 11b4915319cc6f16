//! The two-timescale training loop.
//!
//! Time `t` counts local SGD steps. Interval `k` covers steps
//! `t_{k-1}+1 ..= t_k` with `t_k = kτ`. At every step each device takes one
//! mini-batch step to an intermediate model `w̃_i`; each cluster then either
//! keeps the intermediates or runs `Γ_c` rounds of consensus on them. At
//! `t = t_k` the server averages one sampled device per cluster (weights
//! `ϱ_c`) and broadcasts the result to every device.
//!
//! The sampled devices `n_c` of interval `k` are drawn when the interval
//! opens. Between aggregations the trace reports the model the server would
//! form from them, `ŵ^(t) = Σ_c ϱ_c w_{n_c}^(t)`; at `t = t_k` that is the
//! aggregated model itself.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{FederatedDataset, LabeledPoint};
use crate::model::{self, LossModel, ModelError, SgdContext};
use crate::rng;
use crate::topology::{self, max_pairwise_distance, ClusterTopology, TopologyError};
use crate::ModelVector;

/// Contraction factors below this are treated as exact one-round averaging.
const EXACT_AVERAGING_LAMBDA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contraction factor {0} outside (0, 1)")]
    InvalidLambda(f64),
    #[error("consensus target η·φ is zero but the cluster spread is {upsilon}; no finite round count meets it")]
    UnboundedRounds { upsilon: f64 },
    #[error("global model became non-finite at step {t}")]
    Diverged { t: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

pub type Result<T, E = EngineError> = std::result::Result<T, E>;

/// When clusters run D2D consensus and for how many rounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConsensusPolicy {
    /// No D2D communication.
    None,
    /// `rounds` rounds at every step `t` with `t % period == 0`.
    Fixed { rounds: usize, period: usize },
    /// Just enough rounds to certify `‖e_i‖ ≤ η_t φ` (see
    /// [`schedule_gamma_remark1`]).
    Adaptive { phi: f64 },
}

impl ConsensusPolicy {
    pub fn phi(&self) -> Option<f64> {
        match *self {
            ConsensusPolicy::Adaptive { phi } => Some(phi),
            _ => None,
        }
    }
}

/// Who uplinks at a global aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Participation {
    /// One uniformly sampled device per cluster.
    OnePerCluster,
    /// Every device; the server averages all models.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Step-size numerator `γ` in `η_t = γ / (t + α)`.
    pub gamma: f64,
    /// Step-size offset `α`.
    pub alpha: f64,
    /// Steps per aggregation interval `τ`.
    pub tau: usize,
    pub total_steps: usize,
    pub consensus: ConsensusPolicy,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Enforce the step-size conditions of the `O(1/t)` guarantee.
    pub theorem_mode: bool,
    pub participation: Participation,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            gamma: 2.0,
            alpha: 50.0,
            tau: 10,
            total_steps: 200,
            consensus: ConsensusPolicy::Adaptive { phi: 1.0 },
            batch_size: 16,
            master_seed: 0,
            theorem_mode: false,
            participation: Participation::OnePerCluster,
        }
    }
}

impl Hyperparameters {
    /// `η_t = γ / (t + α)`
    pub fn eta(&self, t: usize) -> f64 {
        self.gamma / (t as f64 + self.alpha)
    }

    /// Structural checks, plus `γ > 1/μ`, `α ≥ γβ²/μ` and an adaptive
    /// consensus policy in theorem mode.
    pub fn validate(&self, mu: f64, beta: f64) -> Result<()> {
        let fail = |msg: String| Err(EngineError::Config(msg));
        if self.tau == 0 {
            return fail("tau must be at least 1".into());
        }
        if self.total_steps == 0 {
            return fail("total_steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return fail(format!("gamma must be finite and nonnegative, got {}", self.gamma));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be finite and positive, got {}", self.alpha));
        }
        match self.consensus {
            ConsensusPolicy::Fixed { period: 0, .. } => return fail("consensus period must be at least 1".into()),
            ConsensusPolicy::Adaptive { phi } if !(phi > 0.0 && phi.is_finite()) => {
                return fail(format!("phi must be finite and positive, got {phi}"))
            }
            _ => {}
        }
        if self.theorem_mode {
            if self.gamma * mu <= 1.0 {
                return fail(format!("gamma must exceed 1/mu = {}, got {}", 1.0 / mu, self.gamma));
            }
            let alpha_min = self.gamma * beta * beta / mu;
            if self.alpha < alpha_min {
                return fail(format!("alpha must be at least gamma*beta^2/mu = {alpha_min}, got {}", self.alpha));
            }
            if self.consensus.phi().is_none() {
                return fail("theorem mode requires the adaptive consensus policy".into());
            }
        }
        Ok(())
    }
}

/// Measurements for one step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t: usize,
    /// `η_t`
    pub eta: f64,
    /// `ŵ^(t)`
    pub global_model: ModelVector,
    /// `F(ŵ^(t))`
    pub loss: f64,
    /// `F(ŵ^(t)) - F(w*)` when the optimum is known.
    pub loss_gap: Option<f64>,
    /// Test accuracy of `ŵ^(t)` for classifiers given a test set.
    pub accuracy: Option<f64>,
    /// `Σ_c ϱ_c ‖w̄_c - w̄‖²` with `w̄_c` the mean of the intermediate models.
    pub dispersion: f64,
    /// `(1/s_c) Σ_i ‖e_i‖²` per cluster, `e_i = w_i - w̄_c`.
    pub consensus_eps2: Vec<f64>,
    /// `max_i ‖e_i‖` per cluster.
    pub max_consensus_error: Vec<f64>,
    /// `Γ_c^(t)`
    pub gamma_rounds: Vec<usize>,
    /// `Υ_c^(t)`, largest distance between intermediates of a cluster.
    pub upsilon: Vec<f64>,
    /// True when `t = t_k` and the server aggregated.
    pub aggregated: bool,
    /// Cluster means of intermediate models (before consensus).
    pub cluster_means_pre: Vec<ModelVector>,
    /// Cluster means after consensus.
    pub cluster_means_post: Vec<ModelVector>,
    /// Filled in by [`crate::analysis::resource_accounting`].
    pub cum_energy: f64,
    pub cum_delay: f64,
}

/// Per-device models and the server model.
#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub device_models: Vec<ModelVector>,
    pub global_model: ModelVector,
    pub t: usize,
    /// Index of the interval containing `t` (0 before the first step).
    pub interval: usize,
    /// `n_c` for the current interval, as global device ids.
    pub sampled: Vec<usize>,
}

/// Starting point and the references the trace is measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<'a> {
    pub initial: ModelVector,
    pub optimum: Option<&'a ModelVector>,
    pub test_points: Option<&'a [LabeledPoint]>,
}

impl<'a> Evaluation<'a> {
    pub fn new(initial: ModelVector) -> Self {
        Evaluation { initial, optimum: None, test_points: None }
    }

    pub fn with_optimum(mut self, optimum: &'a ModelVector) -> Self {
        self.optimum = Some(optimum);
        self
    }

    pub fn with_test_points(mut self, points: &'a [LabeledPoint]) -> Self {
        self.test_points = Some(points);
        self
    }
}

/// `w̃_i^(t) = w_i^(t-1) - η_{t-1} ĝ_i^(t-1)` for every device. Device `i`
/// draws its batch from the stream `(master_seed, i, t-1)`.
pub fn local_sgd_step(
    models: &[ModelVector],
    dataset: &FederatedDataset,
    model: &LossModel,
    hp: &Hyperparameters,
    t: usize,
) -> Result<Vec<ModelVector>> {
    assert!(t >= 1, "local steps start at t = 1");
    let eta = hp.eta(t - 1);
    models
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let mut ctx = SgdContext::new(hp.batch_size, rng::derive_seed(hp.master_seed, &[i as u64, (t - 1) as u64]));
            let g = model::sgd_gradient(model, dataset.shard(i), w, &mut ctx)?;
            let mut next = w.clone();
            next.axpy(-eta, &g);
            Ok(next)
        })
        .collect()
}

/// Rounds needed so that `λ^Γ √s Υ ≤ η_t φ`:
/// `Γ = ⌈max(log(η_t φ / (√s Υ)) / log λ, 0)⌉`.
pub fn schedule_gamma_remark1(eta_t: f64, phi: f64, s_c: usize, upsilon: f64, lambda_c: f64) -> Result<usize> {
    if !(lambda_c > 0.0 && lambda_c < 1.0) {
        return Err(EngineError::InvalidLambda(lambda_c));
    }
    let spread = (s_c as f64).sqrt() * upsilon;
    let target = eta_t * phi;
    if upsilon == 0.0 || target >= spread {
        return Ok(0);
    }
    if target <= 0.0 {
        return Err(EngineError::UnboundedRounds { upsilon });
    }
    let mut rounds = ((target / spread).ln() / lambda_c.ln()).ceil().max(0.0) as usize;
    // ceil on a rounded logarithm can land one short
    while lambda_c.powi(rounds as i32) * spread > target {
        rounds += 1;
    }
    Ok(rounds)
}

/// Result of [`consensus_phase`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    /// `w_i^(t)` for every device, indexed by global device id.
    pub models: Vec<ModelVector>,
    pub gamma_rounds: Vec<usize>,
    pub upsilon: Vec<f64>,
}

/// Runs each cluster's D2D phase on the intermediates `w̃^(t)`.
pub fn consensus_phase(
    intermediates: &[ModelVector],
    topologies: &[ClusterTopology],
    policy: ConsensusPolicy,
    t: usize,
    hp: &Hyperparameters,
) -> Result<ConsensusOutcome> {
    let mut models = intermediates.to_vec();
    let mut gamma_rounds = Vec::with_capacity(topologies.len());
    let mut upsilon = Vec::with_capacity(topologies.len());
    for topo in topologies {
        let members = topo.members();
        let z: Vec<ModelVector> = members.iter().map(|&i| intermediates[i].clone()).collect();
        let spread = max_pairwise_distance(&z);
        let rounds = match policy {
            ConsensusPolicy::None => 0,
            ConsensusPolicy::Fixed { rounds, period } => {
                if t.is_multiple_of(period) {
                    rounds
                } else {
                    0
                }
            }
            ConsensusPolicy::Adaptive { phi } => {
                let lambda = topo.lambda();
                if lambda < EXACT_AVERAGING_LAMBDA {
                    let target = hp.eta(t) * phi;
                    usize::from(spread > 0.0 && target < (members.len() as f64).sqrt() * spread)
                } else {
                    schedule_gamma_remark1(hp.eta(t), phi, members.len(), spread, lambda)?
                }
            }
        };
        if rounds > 0 {
            let out = topology::run_consensus(&z, &topo.consensus, rounds)?;
            for (&i, w) in members.iter().zip(out) {
                models[i] = w;
            }
        }
        gamma_rounds.push(rounds);
        upsilon.push(spread);
    }
    Ok(ConsensusOutcome { models, gamma_rounds, upsilon })
}

/// One uniformly drawn member per cluster.
pub fn sample_representatives<R: Rng>(clusters: &[Vec<usize>], rng: &mut R) -> Vec<usize> {
    clusters.iter().map(|m| m[rng.random_range(0..m.len())]).collect()
}

/// `Σ_c ϱ_c w_{n_c}`
pub fn aggregate_sampled(models: &[ModelVector], sampled: &[usize], weights: &[f64]) -> ModelVector {
    let mut out = ModelVector::zeros(models[sampled[0]].dim());
    for (&i, &rho) in sampled.iter().zip(weights) {
        out.axpy(rho, &models[i]);
    }
    out
}

/// Samples `n_c`, forms `ŵ = Σ_c ϱ_c w_{n_c}` and overwrites every device
/// model with it.
pub fn global_aggregate<R: Rng>(models: &mut [ModelVector], clusters: &[Vec<usize>], weights: &[f64], rng: &mut R) -> ModelVector {
    let sampled = sample_representatives(clusters, rng);
    let global = aggregate_sampled(models, &sampled, weights);
    models.iter_mut().for_each(|w| *w = global.clone());
    global
}

fn sampling_stream(master: u64, interval: usize) -> ChaCha8Rng {
    rng::stream(master, &[rng::SAMPLING_STREAM, interval as u64])
}

/// Runs the two-timescale protocol for `hp.total_steps` steps. Returns one
/// record per `t = 0..=T`.
pub fn run_tthf(
    dataset: &FederatedDataset,
    topologies: &[ClusterTopology],
    model: &LossModel,
    hp: &Hyperparameters,
    eval: &Evaluation<'_>,
) -> Result<Vec<TraceRecord>> {
    let clusters = dataset.clusters();
    if topologies.len() != clusters.len() {
        return Err(EngineError::Config(format!(
            "{} topologies for {} clusters",
            topologies.len(),
            clusters.len()
        )));
    }
    for (c, (topo, members)) in topologies.iter().zip(&clusters).enumerate() {
        let mut ids = topo.members().to_vec();
        ids.sort_unstable();
        if &ids != members {
            return Err(EngineError::Config(format!("topology {c} does not cover cluster {c}")));
        }
    }
    simulate(dataset, Some(topologies), model, hp, eval)
}

/// FedAvg-style baseline: no D2D, aggregation every `tau` steps with the
/// given participation.
pub fn run_fedavg_baseline(
    dataset: &FederatedDataset,
    model: &LossModel,
    hp: &Hyperparameters,
    participation: Participation,
    tau: usize,
    eval: &Evaluation<'_>,
) -> Result<Vec<TraceRecord>> {
    let hp = Hyperparameters { consensus: ConsensusPolicy::None, participation, tau, ..hp.clone() };
    simulate(dataset, None, model, &hp, eval)
}

fn simulate(
    dataset: &FederatedDataset,
    topologies: Option<&[ClusterTopology]>,
    model: &LossModel,
    hp: &Hyperparameters,
    eval: &Evaluation<'_>,
) -> Result<Vec<TraceRecord>> {
    let beta = model::estimate_beta(model, dataset);
    hp.validate(model.mu(), beta)?;
    let feature_dim = dataset.feature_dim();
    if eval.initial.dim() != model.model_dim(feature_dim) {
        return Err(EngineError::Config(format!(
            "initial model has dimension {}, the loss needs {}",
            eval.initial.dim(),
            model.model_dim(feature_dim)
        )));
    }
    if let Some(i) = (0..dataset.num_devices()).find(|&i| dataset.shard(i).len() < hp.batch_size) {
        return Err(EngineError::Config(format!(
            "batch_size {} exceeds the {} points of device {i}",
            hp.batch_size,
            dataset.shard(i).len()
        )));
    }
    let clusters = dataset.clusters();
    let weights = dataset.cluster_weights();
    let optimal_loss = eval.optimum.map(|w| model::global_loss(model, dataset, w)).transpose()?;
    let measure = |w: &ModelVector| -> Result<(f64, Option<f64>, Option<f64>)> {
        let loss = model::global_loss(model, dataset, w)?;
        let accuracy = eval.test_points.and_then(|pts| model::accuracy(model, pts, w));
        Ok((loss, optimal_loss.map(|f| loss - f), accuracy))
    };

    let mut state = RunState {
        device_models: vec![eval.initial.clone(); dataset.num_devices()],
        global_model: eval.initial.clone(),
        t: 0,
        interval: 0,
        sampled: Vec::new(),
    };
    let n = clusters.len();
    let (loss, loss_gap, accuracy) = measure(&state.global_model)?;
    let mut trace = Vec::with_capacity(hp.total_steps + 1);
    trace.push(TraceRecord {
        t: 0,
        eta: hp.eta(0),
        global_model: state.global_model.clone(),
        loss,
        loss_gap,
        accuracy,
        dispersion: 0.0,
        consensus_eps2: vec![0.0; n],
        max_consensus_error: vec![0.0; n],
        gamma_rounds: vec![0; n],
        upsilon: vec![0.0; n],
        aggregated: false,
        cluster_means_pre: vec![eval.initial.clone(); n],
        cluster_means_post: vec![eval.initial.clone(); n],
        cum_energy: 0.0,
        cum_delay: 0.0,
    });

    for t in 1..=hp.total_steps {
        if (t - 1) % hp.tau == 0 {
            state.interval = (t - 1) / hp.tau + 1;
            state.sampled = sample_representatives(&clusters, &mut sampling_stream(hp.master_seed, state.interval));
        }
        state.t = t;
        let intermediates = local_sgd_step(&state.device_models, dataset, model, hp, t)?;
        let outcome = match topologies {
            Some(topos) => consensus_phase(&intermediates, topos, hp.consensus, t, hp)?,
            None => ConsensusOutcome {
                models: intermediates.clone(),
                gamma_rounds: vec![0; n],
                upsilon: clusters
                    .iter()
                    .map(|m| max_pairwise_distance(&m.iter().map(|&i| intermediates[i].clone()).collect::<Vec<_>>()))
                    .collect(),
            },
        };
        let pre: Vec<ModelVector> = clusters.iter().map(|m| ModelVector::mean(m.iter().map(|&i| &intermediates[i]))).collect();
        let post: Vec<ModelVector> = clusters.iter().map(|m| ModelVector::mean(m.iter().map(|&i| &outcome.models[i]))).collect();
        let mut eps2 = Vec::with_capacity(n);
        let mut max_err = Vec::with_capacity(n);
        for (members, mean) in clusters.iter().zip(&pre) {
            let errs: Vec<f64> = members.iter().map(|&i| outcome.models[i].distance(mean)).collect();
            eps2.push(errs.iter().map(|e| e * e).sum::<f64>() / members.len() as f64);
            max_err.push(errs.iter().copied().fold(0.0, f64::max));
        }
        let mut overall = ModelVector::zeros(eval.initial.dim());
        for (mean, &rho) in pre.iter().zip(&weights) {
            overall.axpy(rho, mean);
        }
        let dispersion: f64 = pre.iter().zip(&weights).map(|(m, &rho)| rho * m.distance(&overall).powi(2)).sum();

        state.device_models = outcome.models;
        state.global_model = match hp.participation {
            Participation::OnePerCluster => aggregate_sampled(&state.device_models, &state.sampled, &weights),
            Participation::Full => {
                let mut g = ModelVector::zeros(eval.initial.dim());
                for (mean, &rho) in post.iter().zip(&weights) {
                    g.axpy(rho, mean);
                }
                g
            }
        };
        if !state.global_model.is_finite() {
            return Err(EngineError::Diverged { t });
        }
        let aggregated = t % hp.tau == 0;
        if aggregated {
            let global = state.global_model.clone();
            state.device_models.iter_mut().for_each(|w| *w = global.clone());
        }
        let (loss, loss_gap, accuracy) = measure(&state.global_model)?;
        trace.push(TraceRecord {
            t,
            eta: hp.eta(t),
            global_model: state.global_model.clone(),
            loss,
            loss_gap,
            accuracy,
            dispersion,
            consensus_eps2: eps2,
            max_consensus_error: max_err,
            gamma_rounds: outcome.gamma_rounds,
            upsilon: outcome.upsilon,
            aggregated,
            cluster_means_pre: pre,
            cluster_means_post: post,
            cum_energy: 0.0,
            cum_delay: 0.0,
        });
    }
    Ok(trace)
}
