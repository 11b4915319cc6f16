//! Building an experiment from its config, running the replicates and
//! evaluating the enabled bound checks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use tthf::analysis::checks::{self, BoundRow};
use tthf::analysis::{self, AnalysisConstants, ResourceModel, TimeToTarget};
use tthf::data::{self, FederatedDataset, LabeledPoint, QuadraticTask};
use tthf::engine::{self, ConsensusPolicy, Evaluation, Hyperparameters, Participation, TraceRecord};
use tthf::model::{self, LossModel};
use tthf::rng;
use tthf::topology::{self, ClusterTopology, GraphSpec};
use tthf::ModelVector;

use crate::config::{Algorithm, DataKind, ExperimentConfig, GraphKind, ModelKind, ParticipationKind, PolicyKind};
use crate::error::{CliError, Result};

/// Everything a replicate needs, built once from the config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: FederatedDataset,
    pub test_points: Option<Vec<LabeledPoint>>,
    pub optimum: Option<ModelVector>,
    /// Present for the two-timescale algorithm only.
    pub topologies: Option<Vec<ClusterTopology>>,
    pub model: LossModel,
    pub initial: ModelVector,
    pub hyperparameters: Hyperparameters,
    pub beta: f64,
}

impl Prepared {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.dataset.clusters().iter().map(Vec::len).collect()
    }
}

/// Builds data, topologies, the loss and the hyperparameters. The data,
/// topology and initial model depend only on `training.seed`, so every
/// replicate trains on the same problem.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let seed = cfg.training.seed;
    let data_seed = rng::derive_seed(seed, &[rng::DATA_STREAM]);
    let (devices, clusters) = (cfg.network.devices, cfg.network.clusters);
    let d = &cfg.data;
    let model = match cfg.model.kind {
        ModelKind::LeastSquares => LossModel::least_squares(cfg.model.regularization),
        ModelKind::SquaredSvm => LossModel::squared_svm(d.num_classes, cfg.model.regularization),
    };
    let (dataset, test_points, optimum) = match d.kind {
        DataKind::SyntheticQuadratic => {
            let task = QuadraticTask {
                dim: d.dim,
                devices,
                clusters,
                points_per_device: d.points_per_device,
                heterogeneity: d.heterogeneity,
                regularization: cfg.model.regularization,
                noise: d.noise,
            };
            let (ds, opt) = data::synth_quadratic(&task, data_seed)?;
            (ds, None, Some(opt))
        }
        DataKind::SyntheticClassification => {
            let task = data::ClassificationTask {
                num_classes: d.num_classes,
                dim: d.features,
                train_points: d.train_points,
                test_points: d.test_points,
                separation: d.separation,
            };
            let (train, test) = data::synth_classification(&task, data_seed);
            let ds = data::partition_label_skew(&train, devices, clusters, d.labels_per_device, d.num_classes, data_seed)?;
            (ds, Some(test), None)
        }
        DataKind::Idx => {
            let images = d.images.as_ref().expect("validated");
            let labels = d.labels.as_ref().expect("validated");
            let pool = data::with_intercept(data::load_idx(images, labels)?);
            let (train, test) = data::train_test_split(pool, d.test_fraction, data_seed);
            let ds = data::partition_label_skew(&train, devices, clusters, d.labels_per_device, d.num_classes, data_seed)?;
            (ds, Some(test), None)
        }
    };
    let topologies = match cfg.training.algorithm {
        Algorithm::Tthf => {
            let spec = match cfg.network.graph {
                GraphKind::Spectral => GraphSpec::SpectralTarget(cfg.network.spectral_target),
                GraphKind::Radius => GraphSpec::Radius(cfg.network.radius),
                GraphKind::Complete => GraphSpec::Complete,
            };
            Some(topology::build_topologies(&dataset.clusters(), spec, rng::derive_seed(seed, &[rng::TOPOLOGY_STREAM]))?)
        }
        Algorithm::Fedavg => None,
    };
    let beta = model::estimate_beta(&model, &dataset);
    let t = &cfg.training;
    let consensus = match (t.algorithm, cfg.consensus.policy) {
        (Algorithm::Fedavg, _) | (_, PolicyKind::None) => ConsensusPolicy::None,
        (_, PolicyKind::Fixed) => ConsensusPolicy::Fixed { rounds: cfg.consensus.rounds, period: cfg.consensus.period },
        (_, PolicyKind::Adaptive) => ConsensusPolicy::Adaptive { phi: cfg.consensus.phi },
    };
    let hyperparameters = Hyperparameters {
        gamma: t.gamma,
        alpha: t.alpha.unwrap_or(t.gamma * beta * beta / model.mu()),
        tau: t.tau,
        total_steps: t.steps,
        consensus,
        batch_size: t.batch_size,
        master_seed: seed,
        theorem_mode: t.theorem_mode,
        participation: participation(t.participation),
    };
    hyperparameters.validate(model.mu(), beta).map_err(|e| CliError::Validation {
        key: "training".into(),
        message: e.to_string(),
    })?;
    let initial = model::random_model(model.model_dim(dataset.feature_dim()), cfg.model.init_scale, seed);
    Ok(Prepared { dataset, test_points, optimum, topologies, model, initial, hyperparameters, beta })
}

pub fn participation(kind: ParticipationKind) -> Participation {
    match kind {
        ParticipationKind::OnePerCluster => Participation::OnePerCluster,
        ParticipationKind::Full => Participation::Full,
    }
}

pub fn resource_model(cfg: &ExperimentConfig) -> ResourceModel {
    let r = &cfg.resources;
    ResourceModel { e_d2d: r.e_d2d, e_glob: r.e_glob, d_d2d: r.d_d2d, d_glob: r.d_glob }
}

/// Master seed of replicate `r`.
pub fn replicate_seed(master: u64, r: usize) -> u64 {
    rng::derive_seed(master, &[rng::REPLICATE_STREAM, r as u64])
}

/// Runs one replicate and attaches its energy/delay curves.
pub fn run_replicate(cfg: &ExperimentConfig, prep: &Prepared, r: usize) -> Result<Vec<TraceRecord>> {
    let hp = Hyperparameters { master_seed: replicate_seed(cfg.training.seed, r), ..prep.hyperparameters.clone() };
    let mut eval = Evaluation::new(prep.initial.clone());
    if let Some(opt) = &prep.optimum {
        eval = eval.with_optimum(opt);
    }
    if let Some(test) = &prep.test_points {
        eval = eval.with_test_points(test);
    }
    let mut trace = match &prep.topologies {
        Some(topos) => engine::run_tthf(&prep.dataset, topos, &prep.model, &hp, &eval)?,
        None => engine::run_fedavg_baseline(&prep.dataset, &prep.model, &hp, hp.participation, hp.tau, &eval)?,
    };
    analysis::resource_accounting(&mut trace, &resource_model(cfg), &prep.cluster_sizes(), hp.participation);
    Ok(trace)
}

/// Pass/fail of one enabled check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckStatus {
    pub name: &'static str,
    pub rows: usize,
    pub violations: usize,
    pub passed: bool,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub data_hash: String,
    pub model_hash: String,
    pub seed: u64,
    pub algorithm: String,
    pub participation: String,
    pub policy: String,
    pub tau: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub phi: f64,
    pub rounds: usize,
    pub period: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub replicates: usize,
    pub devices: usize,
    pub clusters: usize,
    pub final_loss: f64,
    pub final_loss_gap: Option<f64>,
    pub final_accuracy: Option<f64>,
    /// Step index, `not-reached`, or empty without an accuracy metric.
    pub time_to_accuracy: String,
    pub energy_to_accuracy: Option<f64>,
    pub delay_to_accuracy: Option<f64>,
    pub total_energy: f64,
    pub total_delay: f64,
    pub violations_lemma1: Option<usize>,
    pub violations_remark1: Option<usize>,
    pub violations_prop1: Option<usize>,
    pub violations_theorem1: Option<usize>,
    pub violations_theorem2: Option<usize>,
    pub checks_passed: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub prepared: Prepared,
    pub traces: Vec<Vec<TraceRecord>>,
    pub bounds: Vec<BoundRow>,
    pub checks: Vec<CheckStatus>,
    pub constants: Option<AnalysisConstants>,
    pub summary: RunSummary,
}

impl ExperimentOutput {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs all replicates (in parallel when `jobs > 1`) and the enabled checks.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput> {
    let prepared = prepare(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Pool(e.to_string()))?;
    let traces = pool.install(|| {
        (0..cfg.run.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &prepared, r))
            .collect::<Result<Vec<_>>>()
    })?;
    let (bounds, checks, constants) = evaluate_checks(cfg, &prepared, &traces)?;
    let summary = summarize(cfg, &prepared, &traces, &checks);
    Ok(ExperimentOutput { prepared, traces, bounds, checks, constants, summary })
}

/// Rows of the enabled checks. The consensus-bound rows keep, per step,
/// the tightest replicate; the theorem checks compare replicate means.
pub fn evaluate_checks(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    traces: &[Vec<TraceRecord>],
) -> Result<(Vec<BoundRow>, Vec<CheckStatus>, Option<AnalysisConstants>)> {
    let mut rows = Vec::new();
    let mut status = Vec::new();
    let mut constants = None;
    if !cfg.checks.enabled {
        return Ok((rows, status, constants));
    }
    let mut push = |name: &'static str, new: Vec<BoundRow>, passed: Option<bool>, rows: &mut Vec<BoundRow>| {
        let violations = new.iter().filter(|r| !r.holds).count();
        status.push(CheckStatus { name, rows: new.len(), violations, passed: passed.unwrap_or(violations == 0) });
        rows.extend(new);
    };
    if let Some(topos) = &prep.topologies {
        if cfg.checks.lemma1 {
            let per_rep: Vec<_> = traces.iter().map(|t| checks::lemma1_rows(t, topos)).collect();
            push(checks::LEMMA1, tightest(per_rep), None, &mut rows);
        }
        if let (true, Some(phi)) = (cfg.checks.remark1, prep.hyperparameters.consensus.phi()) {
            let per_rep: Vec<_> = traces.iter().map(|t| checks::remark1_rows(t, phi)).collect();
            push(checks::REMARK1, tightest(per_rep), None, &mut rows);
        }
    }
    if cfg.any_theorem_check() {
        let probes = model::probe_points(
            &prep.initial,
            prep.optimum.as_ref(),
            cfg.checks.probe_spread,
            cfg.checks.probe_count,
            rng::derive_seed(cfg.training.seed, &[rng::PROBE_STREAM]),
        );
        let c = AnalysisConstants::estimate(&prep.model, &prep.dataset, &prep.hyperparameters, &probes, cfg.training.seed)?;
        let means = checks::replicate_means(traces)?;
        if cfg.checks.prop1 {
            push(checks::PROP1, checks::prop1_rows(&means, &c)?, None, &mut rows);
        }
        if cfg.checks.theorem1 {
            let new = checks::theorem1_rows(traces, &c, cfg.checks.z)?;
            let ok = new.iter().filter(|r| r.holds).count() as f64;
            let passed = new.is_empty() || ok / new.len() as f64 >= cfg.checks.theorem1_pass_fraction;
            push(checks::THEOREM1, new, Some(passed), &mut rows);
        }
        if cfg.checks.theorem2 {
            push(checks::THEOREM2, checks::theorem2_rows(&means, &c)?, None, &mut rows);
        }
        constants = Some(c);
    }
    Ok((rows, status, constants))
}

/// Per step, the row with the least slack across replicates.
fn tightest(per_replicate: Vec<Vec<BoundRow>>) -> Vec<BoundRow> {
    let mut iter = per_replicate.into_iter();
    let mut best = iter.next().unwrap_or_default();
    for rows in iter {
        for (b, r) in best.iter_mut().zip(rows) {
            if r.bound - r.measured < b.bound - b.measured {
                *b = r;
            }
        }
    }
    best
}

/// Replicate mean of a per-record quantity.
pub fn mean_curve(traces: &[Vec<TraceRecord>], f: impl Fn(&TraceRecord) -> f64) -> Vec<f64> {
    let n = traces.len() as f64;
    (0..traces[0].len()).map(|i| traces.iter().map(|t| f(&t[i])).sum::<f64>() / n).collect()
}

fn summarize(cfg: &ExperimentConfig, prep: &Prepared, traces: &[Vec<TraceRecord>], checks: &[CheckStatus]) -> RunSummary {
    let last = |f: &dyn Fn(&TraceRecord) -> f64| *mean_curve(traces, f).last().expect("nonempty trace");
    let has_gap = prep.optimum.is_some();
    let has_accuracy = prep.test_points.is_some();
    let energy = mean_curve(traces, |r| r.cum_energy);
    let delay = mean_curve(traces, |r| r.cum_delay);
    let (time_to_accuracy, energy_to_accuracy, delay_to_accuracy) = if has_accuracy {
        let acc = mean_curve(traces, |r| r.accuracy.unwrap_or(0.0));
        match analysis::time_to_target(&acc, cfg.run.target_accuracy_fraction, None) {
            TimeToTarget::Reached(i) => (traces[0][i].t.to_string(), Some(energy[i]), Some(delay[i])),
            TimeToTarget::NotReached => ("not-reached".to_string(), None, None),
        }
    } else {
        (String::new(), None, None)
    };
    let violations = |name: &str| checks.iter().find(|c| c.name == name).map(|c| c.violations);
    let hp = &prep.hyperparameters;
    let (policy, phi, rounds, period) = match hp.consensus {
        ConsensusPolicy::None => ("none", 0.0, 0, 0),
        ConsensusPolicy::Fixed { rounds, period } => ("fixed", 0.0, rounds, period),
        ConsensusPolicy::Adaptive { phi } => ("adaptive", phi, 0, 0),
    };
    RunSummary {
        config_hash: cfg.hash(),
        data_hash: cfg.data_hash(),
        model_hash: cfg.model_hash(),
        seed: cfg.training.seed,
        algorithm: match cfg.training.algorithm {
            Algorithm::Tthf => "tthf",
            Algorithm::Fedavg => "fedavg",
        }
        .into(),
        participation: match hp.participation {
            Participation::OnePerCluster => "one-per-cluster",
            Participation::Full => "full",
        }
        .into(),
        policy: policy.into(),
        tau: hp.tau,
        gamma: hp.gamma,
        alpha: hp.alpha,
        phi,
        rounds,
        period,
        batch_size: hp.batch_size,
        steps: hp.total_steps,
        replicates: traces.len(),
        devices: cfg.network.devices,
        clusters: cfg.network.clusters,
        final_loss: last(&|r| r.loss),
        final_loss_gap: has_gap.then(|| last(&|r| r.loss_gap.unwrap_or(0.0))),
        final_accuracy: has_accuracy.then(|| last(&|r| r.accuracy.unwrap_or(0.0))),
        time_to_accuracy,
        energy_to_accuracy,
        delay_to_accuracy,
        total_energy: *energy.last().expect("nonempty"),
        total_delay: *delay.last().expect("nonempty"),
        violations_lemma1: violations(checks::LEMMA1),
        violations_remark1: violations(checks::REMARK1),
        violations_prop1: violations(checks::PROP1),
        violations_theorem1: violations(checks::THEOREM1),
        violations_theorem2: violations(checks::THEOREM2),
        checks_passed: checks.iter().all(|c| c.passed),
    }
}
