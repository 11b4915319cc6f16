//! Experiment configuration: a TOML file with one table per concern. Every
//! key has a default, unknown keys are rejected, and validation errors name
//! the offending key.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub consensus: ConsensusConfig,
    pub resources: ResourceConfig,
    pub run: RunConfig,
    pub checks: ChecksConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// Random geometric graphs tuned to `spectral_target`.
    Spectral,
    /// Random geometric graphs with a fixed `radius`.
    Radius,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub devices: usize,
    pub clusters: usize,
    pub graph: GraphKind,
    pub spectral_target: f64,
    pub radius: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { devices: 25, clusters: 5, graph: GraphKind::Spectral, spectral_target: 0.7, radius: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    SyntheticQuadratic,
    SyntheticClassification,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Quadratic task: model dimension including the intercept.
    pub dim: usize,
    /// Quadratic task: points per device.
    pub points_per_device: usize,
    pub heterogeneity: f64,
    pub noise: f64,
    /// Classification: number of classes.
    pub num_classes: usize,
    /// Synthetic classification: raw feature dimension.
    pub features: usize,
    pub train_points: usize,
    pub test_points: usize,
    pub separation: f64,
    pub labels_per_device: usize,
    /// IDX image and label files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Share of IDX points held out for accuracy.
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            kind: DataKind::SyntheticQuadratic,
            dim: 5,
            points_per_device: 20,
            heterogeneity: 1.0,
            noise: 0.1,
            num_classes: 10,
            features: 10,
            train_points: 2500,
            test_points: 500,
            separation: 1.5,
            labels_per_device: 3,
            images: None,
            labels: None,
            test_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LeastSquares,
    SquaredSvm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub regularization: f64,
    /// Standard deviation of the random initial model; 0 starts from zeros.
    pub init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { kind: ModelKind::LeastSquares, regularization: 1.0, init_scale: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Tthf,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParticipationKind {
    OnePerCluster,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub algorithm: Algorithm,
    pub participation: ParticipationKind,
    pub gamma: f64,
    /// Defaults to `γβ²/μ` once `β` is known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub tau: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub theorem_mode: bool,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            algorithm: Algorithm::Tthf,
            participation: ParticipationKind::OnePerCluster,
            gamma: 2.0,
            alpha: None,
            tau: 10,
            steps: 200,
            batch_size: 16,
            theorem_mode: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    None,
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub policy: PolicyKind,
    /// Fixed policy: rounds per consensus step.
    pub rounds: usize,
    /// Fixed policy: consensus at every step divisible by `period`.
    pub period: usize,
    /// Adaptive policy: per-device error target `η_t φ`.
    pub phi: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { policy: PolicyKind::Adaptive, rounds: 1, period: 5, phi: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourceConfig {
    pub e_d2d: f64,
    pub e_glob: f64,
    pub d_d2d: f64,
    pub d_glob: f64,
}

impl Default for ResourceConfig {
    fn default() -> Self {
        let r = tthf::analysis::ResourceModel::default();
        ResourceConfig { e_d2d: r.e_d2d, e_glob: r.e_glob, d_d2d: r.d_d2d, d_glob: r.d_glob }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub replicates: usize,
    pub output_dir: PathBuf,
    /// Time-to-accuracy target as a fraction of the peak.
    pub target_accuracy_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { replicates: 1, output_dir: PathBuf::from("out"), target_accuracy_fraction: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub enabled: bool,
    pub lemma1: bool,
    pub remark1: bool,
    pub prop1: bool,
    pub theorem1: bool,
    pub theorem2: bool,
    /// Standard errors of slack for the one-step check.
    pub z: f64,
    /// Share of steps the one-step check must pass.
    pub theorem1_pass_fraction: f64,
    /// Probe points for the `σ²` and `δ` estimators, beyond the start,
    /// optimum and midpoint.
    pub probe_count: usize,
    pub probe_spread: f64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            enabled: false,
            lemma1: true,
            remark1: true,
            prop1: true,
            theorem1: true,
            theorem2: true,
            z: 2.0,
            theorem1_pass_fraction: 0.99,
            probe_count: 4,
            probe_spread: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML text and validates it.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }

    /// Hash of everything that determines the training data.
    pub fn data_hash(&self) -> String {
        let key = (
            self.network.devices,
            self.network.clusters,
            &self.data,
            self.training.seed,
            self.model.regularization,
        );
        sha256_hex(toml::to_string(&Wrapper { key }).expect("serializes").as_bytes())
    }

    pub fn model_hash(&self) -> String {
        sha256_hex(toml::to_string(&self.model).expect("serializes").as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |key: &str, msg: String| Err(CliError::Validation { key: key.into(), message: msg });
        let n = &self.network;
        if n.devices == 0 {
            return fail("network.devices", "must be at least 1".into());
        }
        if n.clusters == 0 || !n.devices.is_multiple_of(n.clusters) {
            return fail("network.clusters", format!("must be positive and divide network.devices = {}", n.devices));
        }
        if n.graph == GraphKind::Spectral && !(n.spectral_target > 0.0 && n.spectral_target < 1.0) {
            return fail("network.spectral_target", format!("must lie in (0, 1), got {}", n.spectral_target));
        }
        if n.graph == GraphKind::Radius && !(n.radius > 0.0 && n.radius <= std::f64::consts::SQRT_2) {
            return fail("network.radius", format!("must lie in (0, sqrt 2], got {}", n.radius));
        }
        let d = &self.data;
        match (d.kind, self.model.kind) {
            (DataKind::SyntheticQuadratic, ModelKind::LeastSquares) => {
                if d.dim == 0 {
                    return fail("data.dim", "must be at least 1".into());
                }
                if d.points_per_device == 0 {
                    return fail("data.points_per_device", "must be at least 1".into());
                }
                if d.heterogeneity < 0.0 || d.noise < 0.0 {
                    return fail("data.heterogeneity", "heterogeneity and noise must be nonnegative".into());
                }
            }
            (DataKind::SyntheticClassification | DataKind::Idx, ModelKind::SquaredSvm) => {
                if d.num_classes < 2 {
                    return fail("data.num_classes", "must be at least 2".into());
                }
                if d.labels_per_device == 0 || d.labels_per_device > d.num_classes {
                    return fail("data.labels_per_device", format!("must lie in 1..={}", d.num_classes));
                }
                if d.kind == DataKind::Idx {
                    if d.images.is_none() {
                        return fail("data.images", "required for idx data".into());
                    }
                    if d.labels.is_none() {
                        return fail("data.labels", "required for idx data".into());
                    }
                    if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
                        return fail("data.test_fraction", format!("must lie in (0, 1), got {}", d.test_fraction));
                    }
                } else if d.features == 0 || d.train_points == 0 {
                    return fail("data.features", "features and train_points must be positive".into());
                }
            }
            (data, model) => {
                return fail("model.kind", format!("{model:?} cannot be trained on {data:?} data"));
            }
        }
        if !(self.model.regularization > 0.0) {
            return fail("model.regularization", format!("must be positive, got {}", self.model.regularization));
        }
        if !(self.model.init_scale >= 0.0) {
            return fail("model.init_scale", "must be nonnegative".into());
        }
        let t = &self.training;
        if t.tau == 0 {
            return fail("training.tau", "must be at least 1".into());
        }
        if t.steps == 0 {
            return fail("training.steps", "must be at least 1".into());
        }
        if t.batch_size == 0 {
            return fail("training.batch_size", "must be at least 1".into());
        }
        if !(t.gamma >= 0.0) {
            return fail("training.gamma", "must be nonnegative".into());
        }
        if let Some(alpha) = t.alpha {
            if !(alpha > 0.0) {
                return fail("training.alpha", format!("must be positive, got {alpha}"));
            }
        }
        let c = &self.consensus;
        if c.policy == PolicyKind::Fixed && c.period == 0 {
            return fail("consensus.period", "must be at least 1".into());
        }
        if c.policy == PolicyKind::Adaptive && !(c.phi > 0.0) {
            return fail("consensus.phi", format!("must be positive, got {}", c.phi));
        }
        if t.theorem_mode {
            let mu = self.model.regularization;
            if t.gamma * mu <= 1.0 {
                return fail("training.gamma", format!("theorem mode needs gamma > 1/mu = {}, got {}", 1.0 / mu, t.gamma));
            }
            if t.alpha.is_some_and(|a| a <= 1.0) {
                return fail("training.alpha", "theorem mode needs alpha > 1".into());
            }
            if t.algorithm != Algorithm::Tthf || c.policy != PolicyKind::Adaptive {
                return fail("consensus.policy", "theorem mode needs the tthf algorithm with adaptive consensus".into());
            }
            if d.kind != DataKind::SyntheticQuadratic {
                return fail("data.kind", "theorem mode needs synthetic-quadratic data, whose optimum is known".into());
            }
        }
        let r = &self.resources;
        for (key, v) in [("e_d2d", r.e_d2d), ("e_glob", r.e_glob), ("d_d2d", r.d_d2d), ("d_glob", r.d_glob)] {
            if !(v >= 0.0) {
                return fail(&format!("resources.{key}"), "must be nonnegative".into());
            }
        }
        if self.run.replicates == 0 {
            return fail("run.replicates", "must be at least 1".into());
        }
        let f = self.run.target_accuracy_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return fail("run.target_accuracy_fraction", format!("must lie in (0, 1], got {f}"));
        }
        let ch = &self.checks;
        if !(ch.z >= 0.0) {
            return fail("checks.z", "must be nonnegative".into());
        }
        if !(ch.theorem1_pass_fraction >= 0.0 && ch.theorem1_pass_fraction <= 1.0) {
            return fail("checks.theorem1_pass_fraction", "must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn any_theorem_check(&self) -> bool {
        self.checks.enabled && self.training.theorem_mode && (self.checks.prop1 || self.checks.theorem1 || self.checks.theorem2)
    }
}

#[derive(Serialize)]
struct Wrapper<T: Serialize> {
    key: T,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    ExperimentConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert!(cfg.to_toml().contains("spectral_target = 0.7"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml("[training]\ngama = 3.0\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn theorem_mode_gamma() {
        let err = ExperimentConfig::from_toml("[training]\ntheorem_mode = true\ngamma = 0.5\n").unwrap_err();
        assert!(matches!(&err, CliError::Validation { key, .. } if key == "training.gamma"), "{err}");
    }

    #[test]
    fn cluster_divisibility() {
        let err = ExperimentConfig::from_toml("[network]\ndevices = 10\nclusters = 3\n").unwrap_err();
        assert!(err.to_string().contains("network.clusters"));
    }

    #[test]
    fn mismatched_model_and_data() {
        let err = ExperimentConfig::from_toml("[model]\nkind = \"squared-svm\"\n").unwrap_err();
        assert!(err.to_string().contains("model.kind"));
    }

    #[test]
    fn hashes_are_stable() {
        let a = ExperimentConfig::from_toml("[training]\nalpha = 30.0\n").unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml()).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.training.tau = 3;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.data_hash(), c.data_hash());
        c.data.heterogeneity = 2.0;
        assert_ne!(a.data_hash(), c.data_hash());
    }
}
