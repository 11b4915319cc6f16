//! Closed-form bounds of the convergence analysis and the post-hoc checks
//! that compare them with measured traces.
//!
//! Expectations are approximated by means over replicate runs that differ
//! only in their master seed. Statistical tolerances are stated per check in
//! units of the standard error of that mean.

pub mod checks;

use thiserror::Error;

use crate::data::FederatedDataset;
use crate::engine::{Hyperparameters, Participation, TraceRecord};
use crate::model::{self, LossModel, ModelError};
use crate::ModelVector;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("the optimum is unknown, so loss gaps are unavailable")]
    UnknownOptimum,
    #[error("need at least {needed} replicates, got {found}")]
    InsufficientReplicates { found: usize, needed: usize },
    #[error("replicate traces have different lengths")]
    RaggedReplicates,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = AnalysisError> = std::result::Result<T, E>;

/// Constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConstants {
    /// Strong convexity `μ`.
    pub mu: f64,
    /// Smoothness `β`.
    pub beta: f64,
    /// SGD noise variance bound `σ²`.
    pub sigma2: f64,
    /// Gradient diversity `δ`.
    pub delta: f64,
    /// `ϱ^min = min_c s_c / I`.
    pub rho_min: f64,
    /// `ε^(0) = η_0 φ`.
    pub epsilon0: f64,
    pub phi: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub tau: usize,
}

impl AnalysisConstants {
    /// `μ = λ_reg`, exact `β`, and `σ²`, `δ` estimated at the probe points.
    pub fn estimate(
        model: &LossModel,
        dataset: &FederatedDataset,
        hp: &Hyperparameters,
        probe_points: &[ModelVector],
        seed: u64,
    ) -> Result<Self> {
        let phi = hp.consensus.phi().unwrap_or(0.0);
        Ok(AnalysisConstants {
            mu: model.mu(),
            beta: model::estimate_beta(model, dataset),
            sigma2: model::estimate_sigma2(model, dataset, hp.batch_size, probe_points, seed)?,
            delta: model::measure_gradient_diversity(model, dataset, probe_points)?,
            rho_min: dataset.cluster_weights().into_iter().fold(f64::INFINITY, f64::min),
            epsilon0: hp.eta(0) * phi,
            phi,
            gamma: hp.gamma,
            alpha: hp.alpha,
            tau: hp.tau,
        })
    }

    /// `η_t = γ / (t + α)`
    pub fn eta(&self, t: usize) -> f64 {
        self.gamma / (t as f64 + self.alpha)
    }

    /// `α ≥ γβ²/μ`, the step-size condition shared by every bound.
    pub fn check_step_size(&self) -> Result<()> {
        let alpha_min = self.gamma * self.beta * self.beta / self.mu;
        if self.alpha < alpha_min {
            return Err(AnalysisError::HypothesisViolated(format!(
                "alpha = {} is below gamma*beta^2/mu = {alpha_min}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `γ > 1/μ`, `α ≥ γβ²/μ`, `α > 1` and `τ ≥ 1`.
    pub fn check_theorem2(&self) -> Result<()> {
        if self.gamma * self.mu <= 1.0 {
            return Err(AnalysisError::HypothesisViolated(format!(
                "gamma = {} must exceed 1/mu = {}",
                self.gamma,
                1.0 / self.mu
            )));
        }
        self.check_step_size()?;
        if self.alpha <= 1.0 {
            return Err(AnalysisError::HypothesisViolated(format!("alpha = {} must exceed 1", self.alpha)));
        }
        if self.tau == 0 {
            return Err(AnalysisError::HypothesisViolated("tau must be at least 1".into()));
        }
        Ok(())
    }
}

/// `λ_c^Γ √s_c Υ`, the bound on every `‖e_i‖` after `Γ` consensus rounds.
pub fn lemma1_bound(lambda_c: f64, gamma_rounds: usize, s_c: usize, upsilon: f64) -> f64 {
    lambda_c.powi(gamma_rounds as i32) * (s_c as f64).sqrt() * upsilon
}

/// `Σ_t = Σ_{ℓ=t_{k-1}}^{t-1} βη_ℓ Π_{j=ℓ+1}^{t-1} (1 + 2η_jβ)`, summed
/// directly.
pub fn sigma_t(c: &AnalysisConstants, t: usize, t_km1: usize) -> f64 {
    (t_km1..t)
        .map(|l| {
            let product: f64 = (l + 1..t).map(|j| 1.0 + 2.0 * c.eta(j) * c.beta).product();
            c.beta * c.eta(l) * product
        })
        .sum()
}

/// Dispersion bound `12 (ϱ^min)⁻¹ Σ_t² [σ²/β² + δ²/β² + (ε^(0))²]` for
/// `t` in the interval that starts at `t_km1`.
pub fn prop1_bound(c: &AnalysisConstants, t: usize, t_km1: usize) -> Result<f64> {
    c.check_step_size()?;
    let s = sigma_t(c, t, t_km1);
    let b2 = c.beta * c.beta;
    Ok(12.0 / c.rho_min * s * s * (c.sigma2 / b2 + c.delta * c.delta / b2 + c.epsilon0 * c.epsilon0))
}

/// Start `t_{k-1}` of the interval containing step `t ≥ 1`.
pub fn interval_start(t: usize, tau: usize) -> usize {
    (t.saturating_sub(1) / tau) * tau
}

/// Step-`t` part of the one-step bound that does not involve the gap or the
/// dispersion: `½[η_tβ²(ε^(t))² + η_t²βσ² + β(ε^(t+1))²]` with
/// `ε^(t) = η_tφ`.
pub fn theorem1_constant(c: &AnalysisConstants, t: usize) -> f64 {
    let (eta, beta) = (c.eta(t), c.beta);
    let eps = eta * c.phi;
    let eps_next = c.eta(t + 1) * c.phi;
    0.5 * (eta * beta * beta * eps * eps + eta * eta * beta * c.sigma2 + beta * eps_next * eps_next)
}

/// Right-hand side of the one-step bound for one trajectory:
/// `(1-μη_t) gap_t + (η_tβ²/2) A^(t) + theorem1_constant`.
pub fn theorem1_rhs(c: &AnalysisConstants, t: usize, gap_t: f64, dispersion_t: f64) -> f64 {
    let eta = c.eta(t);
    (1.0 - c.mu * eta) * gap_t + 0.5 * eta * c.beta * c.beta * dispersion_t + theorem1_constant(c, t)
}

/// Per-step comparison of the one-step bound with measured gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    /// `t` for each transition `t → t+1`.
    pub steps: Vec<usize>,
    /// Replicate mean of `F(ŵ^(t+1)) - F*`.
    pub lhs: Vec<f64>,
    /// Replicate mean of the right-hand side.
    pub rhs: Vec<f64>,
    /// `rhs - lhs`.
    pub residuals: Vec<f64>,
    /// Standard error of the residual mean.
    pub std_errors: Vec<f64>,
    pub min_residual: f64,
    /// Share of steps with `residual ≥ -z·SE`.
    pub fraction_ok: f64,
}

/// Dispersion entering the step `t → t+1`. The trace measures the cluster
/// means of the intermediates at `t`; after an aggregation every device holds
/// the same model, so the dispersion the next step starts from is zero.
pub fn dispersion_after(record: &TraceRecord) -> f64 {
    if record.aggregated {
        0.0
    } else {
        record.dispersion
    }
}

/// Evaluates the one-step bound on every transition of the replicates.
/// Each replicate contributes the difference `RHS - LHS` computed from its
/// own gap and dispersion; a step passes when the mean difference is at
/// least `-z` standard errors.
pub fn theorem1_check(
    replicates: &[Vec<TraceRecord>],
    c: &AnalysisConstants,
    min_replicates: usize,
    z: f64,
) -> Result<Theorem1Report> {
    if replicates.len() < min_replicates || replicates.is_empty() {
        return Err(AnalysisError::InsufficientReplicates { found: replicates.len(), needed: min_replicates.max(1) });
    }
    let len = replicates[0].len();
    if replicates.iter().any(|r| r.len() != len) {
        return Err(AnalysisError::RaggedReplicates);
    }
    let r = replicates.len() as f64;
    let mut report = Theorem1Report {
        steps: Vec::new(),
        lhs: Vec::new(),
        rhs: Vec::new(),
        residuals: Vec::new(),
        std_errors: Vec::new(),
        min_residual: f64::INFINITY,
        fraction_ok: 1.0,
    };
    for idx in 0..len.saturating_sub(1) {
        let t = replicates[0][idx].t;
        let mut lhs = Vec::with_capacity(replicates.len());
        let mut rhs = Vec::with_capacity(replicates.len());
        for rep in replicates {
            let now = &rep[idx];
            let next = &rep[idx + 1];
            let gap = now.loss_gap.ok_or(AnalysisError::UnknownOptimum)?;
            let gap_next = next.loss_gap.ok_or(AnalysisError::UnknownOptimum)?;
            lhs.push(gap_next);
            rhs.push(theorem1_rhs(c, t, gap, dispersion_after(now)));
        }
        let diffs: Vec<f64> = rhs.iter().zip(&lhs).map(|(a, b)| a - b).collect();
        let (mean, se) = mean_and_std_error(&diffs);
        report.steps.push(t);
        report.lhs.push(lhs.iter().sum::<f64>() / r);
        report.rhs.push(rhs.iter().sum::<f64>() / r);
        report.residuals.push(mean);
        report.std_errors.push(se);
        report.min_residual = report.min_residual.min(mean);
    }
    if !report.residuals.is_empty() {
        let ok = report.residuals.iter().zip(&report.std_errors).filter(|(m, se)| **m >= -z * **se).count();
        report.fraction_ok = ok as f64 / report.residuals.len() as f64;
    }
    Ok(report)
}

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// The `ν/(t+α)` envelope on the expected loss gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    pub nu: f64,
    pub z: f64,
    pub alpha: f64,
}

impl Envelope {
    pub fn at(&self, t: usize) -> f64 {
        self.nu / (t as f64 + self.alpha)
    }
}

/// `ν = max{β²γ²Z/(μγ-1), α·gap_0}` with
/// `Z = ½[σ²/β + 2φ²/β] + 24(ϱ^min)⁻¹βγ(τ-1)(1+(τ-2)/α)(1+(τ-1)/(α-1))^{4βγ}[σ²/β + φ²/β + δ²/β]`.
pub fn theorem2_envelope(c: &AnalysisConstants, initial_gap: f64) -> Result<Envelope> {
    c.check_theorem2()?;
    let AnalysisConstants { mu, beta, sigma2, delta, rho_min, phi, gamma, alpha, tau, .. } = *c;
    let tau = tau as f64;
    let noise = 0.5 * (sigma2 / beta + 2.0 * phi * phi / beta);
    let drift = 24.0 / rho_min
        * beta
        * gamma
        * (tau - 1.0)
        * (1.0 + (tau - 2.0) / alpha)
        * (1.0 + (tau - 1.0) / (alpha - 1.0)).powf(4.0 * beta * gamma)
        * (sigma2 / beta + phi * phi / beta + delta * delta / beta);
    let z = noise + drift;
    let nu = (beta * beta * gamma * gamma * z / (mu * gamma - 1.0)).max(alpha * initial_gap);
    Ok(Envelope { nu, z, alpha })
}

/// Energy and delay per unit of communication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceModel {
    /// Energy of one D2D transmission by one device.
    pub e_d2d: f64,
    /// Energy of one uplink transmission.
    pub e_glob: f64,
    /// Delay of one D2D round.
    pub d_d2d: f64,
    /// Delay of one global aggregation.
    pub d_glob: f64,
}

impl Default for ResourceModel {
    fn default() -> Self {
        ResourceModel { e_d2d: 0.01, e_glob: 1.0, d_d2d: 0.01, d_glob: 0.25 }
    }
}

/// Cumulative energy and delay, split by link type.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResourceCurves {
    pub d2d_energy: Vec<f64>,
    pub uplink_energy: Vec<f64>,
    pub energy: Vec<f64>,
    pub delay: Vec<f64>,
}

/// Accumulates energy and delay along the trace and stores the totals in
/// each record's `cum_energy` / `cum_delay`.
///
/// Per step: D2D energy `Σ_c Γ_c s_c e_d2d`, D2D delay `max_c Γ_c d_d2d`
/// (clusters run in parallel). Per aggregation: `I` (full participation) or
/// `N` (one device per cluster) uplinks at `e_glob` each, plus `d_glob`.
pub fn resource_accounting(
    trace: &mut [TraceRecord],
    rmodel: &ResourceModel,
    cluster_sizes: &[usize],
    participation: Participation,
) -> ResourceCurves {
    let uplinks = match participation {
        Participation::Full => cluster_sizes.iter().sum::<usize>(),
        Participation::OnePerCluster => cluster_sizes.len(),
    } as f64;
    let mut curves = ResourceCurves::default();
    let (mut d2d, mut up, mut delay) = (0.0, 0.0, 0.0);
    for rec in trace.iter_mut() {
        let rounds = rec.gamma_rounds.iter().zip(cluster_sizes).map(|(&g, &s)| (g * s) as f64).sum::<f64>();
        d2d += rounds * rmodel.e_d2d;
        delay += rec.gamma_rounds.iter().copied().max().unwrap_or(0) as f64 * rmodel.d_d2d;
        if rec.aggregated {
            up += uplinks * rmodel.e_glob;
            delay += rmodel.d_glob;
        }
        rec.cum_energy = d2d + up;
        rec.cum_delay = delay;
        curves.d2d_energy.push(d2d);
        curves.uplink_energy.push(up);
        curves.energy.push(d2d + up);
        curves.delay.push(delay);
    }
    curves
}

/// Outcome of [`time_to_accuracy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeToTarget {
    /// Index into the trace of the first record meeting the target.
    Reached(usize),
    NotReached,
}

impl TimeToTarget {
    pub fn index(self) -> Option<usize> {
        match self {
            TimeToTarget::Reached(i) => Some(i),
            TimeToTarget::NotReached => None,
        }
    }
}

/// First record whose accuracy is at least `target_fraction × peak`; the
/// peak defaults to the run's own maximum.
pub fn time_to_accuracy(trace: &[TraceRecord], target_fraction: f64, peak: Option<f64>) -> TimeToTarget {
    let values: Vec<f64> = trace.iter().map(|r| r.accuracy.unwrap_or(f64::NEG_INFINITY)).collect();
    time_to_target(&values, target_fraction, peak)
}

/// [`time_to_accuracy`] on a bare metric series.
pub fn time_to_target(values: &[f64], target_fraction: f64, peak: Option<f64>) -> TimeToTarget {
    let peak = peak.unwrap_or_else(|| values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if !peak.is_finite() {
        return TimeToTarget::NotReached;
    }
    let target = target_fraction * peak;
    values.iter().position(|&v| v >= target).map_or(TimeToTarget::NotReached, TimeToTarget::Reached)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn constants() -> AnalysisConstants {
        AnalysisConstants {
            mu: 1.0,
            beta: 2.0,
            sigma2: 0.5,
            delta: 0.3,
            rho_min: 0.2,
            epsilon0: 0.01,
            phi: 0.2,
            gamma: 2.0,
            alpha: 10.0,
            tau: 5,
        }
    }

    #[test]
    fn lemma1_examples() {
        assert_eq!(lemma1_bound(0.5, 0, 4, 1.5), 3.0);
        assert_eq!(lemma1_bound(0.5, 3, 4, 0.0), 0.0);
        assert_relative_eq!(lemma1_bound(2.0 / 3.0, 2, 3, 6.0), 4.0 / 9.0 * 3f64.sqrt() * 6.0, max_relative = 1e-15);
    }

    #[test]
    fn sigma_t_edges_and_recursion() {
        let c = constants();
        assert_eq!(sigma_t(&c, 10, 10), 0.0);
        assert_eq!(prop1_bound(&c, 10, 10).unwrap(), 0.0);
        assert_relative_eq!(sigma_t(&c, 11, 10), c.beta * c.eta(10), max_relative = 1e-15);
        for t in 10..15 {
            let next = (1.0 + 2.0 * c.eta(t) * c.beta) * sigma_t(&c, t, 10) + c.beta * c.eta(t);
            assert_relative_eq!(sigma_t(&c, t + 1, 10), next, max_relative = 1e-12);
        }
    }

    #[test]
    fn hypotheses() {
        let mut c = constants();
        c.alpha = 1.0;
        assert!(matches!(prop1_bound(&c, 3, 0), Err(AnalysisError::HypothesisViolated(m)) if m.contains("alpha")));
        let mut c = constants();
        c.gamma = 0.9;
        c.alpha = 100.0;
        assert!(matches!(theorem2_envelope(&c, 1.0), Err(AnalysisError::HypothesisViolated(m)) if m.contains("gamma")));
    }

    #[test]
    fn envelope_tau_one_drops_drift() {
        let mut c = constants();
        c.tau = 1;
        let env = theorem2_envelope(&c, 0.0).unwrap();
        assert_relative_eq!(env.z, 0.5 * (c.sigma2 / c.beta + 2.0 * c.phi * c.phi / c.beta), max_relative = 1e-15);
        assert_relative_eq!(env.nu, 4.0 * 4.0 * env.z / 1.0, max_relative = 1e-15);
        let big = theorem2_envelope(&c, 100.0).unwrap();
        assert_eq!(big.nu, 1000.0);
        assert_eq!(big.at(0), 100.0);
    }

    #[test]
    fn envelope_blows_up_near_pole() {
        let mut c = constants();
        c.alpha = 1000.0;
        c.gamma = 1.0 + 1e-9;
        assert!(theorem2_envelope(&c, 0.0).unwrap().nu > 1e8);
    }

    #[test]
    fn time_to_target_cases() {
        let v = [0.1, 0.5, 0.4, 0.9];
        assert_eq!(time_to_target(&v, 0.5, None), TimeToTarget::Reached(1));
        assert_eq!(time_to_target(&v, 1.0, None), TimeToTarget::Reached(3));
        assert_eq!(time_to_target(&v, 1.0, Some(2.0)), TimeToTarget::NotReached);
        assert_eq!(time_to_target(&[], 0.5, None), TimeToTarget::NotReached);
    }

    #[test]
    fn std_error() {
        let (m, se) = mean_and_std_error(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_relative_eq!(se, 1.0, max_relative = 1e-15);
        assert_eq!(mean_and_std_error(&[4.0]), (4.0, 0.0));
    }
}
