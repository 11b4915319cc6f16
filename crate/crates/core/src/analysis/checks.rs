//! Row-level comparisons of measured quantities with their bounds.

use super::{
    interval_start, lemma1_bound, mean_and_std_error, prop1_bound, theorem1_check, theorem2_envelope, AnalysisConstants,
    AnalysisError, Result,
};
use crate::engine::TraceRecord;
use crate::topology::ClusterTopology;

/// Absolute slack allowed on deterministic comparisons.
pub const FLOAT_SLACK: f64 = 1e-9;

/// Names used in the `check` column.
pub const LEMMA1: &str = "lemma1";
pub const REMARK1: &str = "remark1";
pub const PROP1: &str = "prop1";
pub const THEOREM1: &str = "theorem1";
pub const THEOREM2: &str = "theorem2";

/// One measured value against one bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub check: &'static str,
    pub t: usize,
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

impl BoundRow {
    fn new(check: &'static str, t: usize, measured: f64, bound: f64, slack: f64) -> Self {
        BoundRow { check, t, measured, bound, holds: measured <= bound + slack }
    }
}

/// Number of failing rows per check name, in first-seen order.
pub fn violations(rows: &[BoundRow]) -> Vec<(&'static str, usize)> {
    let mut out: Vec<(&'static str, usize)> = Vec::new();
    for row in rows {
        let fail = usize::from(!row.holds);
        match out.iter_mut().find(|(name, _)| *name == row.check) {
            Some(entry) => entry.1 += fail,
            None => out.push((row.check, fail)),
        }
    }
    out
}

/// Tightest cluster per step: measured `max_i ‖e_i‖` against
/// `λ_c^Γ √s_c Υ`.
pub fn lemma1_rows(trace: &[TraceRecord], topologies: &[ClusterTopology]) -> Vec<BoundRow> {
    trace
        .iter()
        .map(|rec| {
            topologies
                .iter()
                .enumerate()
                .map(|(c, topo)| {
                    let bound = lemma1_bound(topo.lambda(), rec.gamma_rounds[c], topo.size(), rec.upsilon[c]);
                    BoundRow::new(LEMMA1, rec.t, rec.max_consensus_error[c], bound, FLOAT_SLACK)
                })
                .min_by(|a, b| (a.bound - a.measured).total_cmp(&(b.bound - b.measured)))
                .expect("at least one cluster")
        })
        .collect()
}

/// Largest per-device consensus error per step against the adaptive target
/// `η_t φ`.
pub fn remark1_rows(trace: &[TraceRecord], phi: f64) -> Vec<BoundRow> {
    trace
        .iter()
        .map(|rec| {
            let worst = rec.max_consensus_error.iter().copied().fold(0.0, f64::max);
            BoundRow::new(REMARK1, rec.t, worst, rec.eta * phi, FLOAT_SLACK)
        })
        .collect()
}

/// Per-step replicate means of gap and dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateMeans {
    pub t: Vec<usize>,
    pub gap: Vec<f64>,
    pub gap_std_error: Vec<f64>,
    pub dispersion: Vec<f64>,
}

pub fn replicate_means(replicates: &[Vec<TraceRecord>]) -> Result<ReplicateMeans> {
    let first = replicates.first().ok_or(AnalysisError::InsufficientReplicates { found: 0, needed: 1 })?;
    if replicates.iter().any(|r| r.len() != first.len()) {
        return Err(AnalysisError::RaggedReplicates);
    }
    let mut out = ReplicateMeans { t: Vec::new(), gap: Vec::new(), gap_std_error: Vec::new(), dispersion: Vec::new() };
    for idx in 0..first.len() {
        let gaps = replicates
            .iter()
            .map(|r| r[idx].loss_gap.ok_or(AnalysisError::UnknownOptimum))
            .collect::<Result<Vec<_>>>()?;
        let (gap, se) = mean_and_std_error(&gaps);
        out.t.push(first[idx].t);
        out.gap.push(gap);
        out.gap_std_error.push(se);
        out.dispersion.push(replicates.iter().map(|r| r[idx].dispersion).sum::<f64>() / replicates.len() as f64);
    }
    Ok(out)
}

/// Replicate-mean gap against `ν/(t+α)` at every step.
pub fn theorem2_rows(means: &ReplicateMeans, c: &AnalysisConstants) -> Result<Vec<BoundRow>> {
    let env = theorem2_envelope(c, means.gap[0])?;
    Ok(means
        .t
        .iter()
        .zip(&means.gap)
        .map(|(&t, &gap)| BoundRow::new(THEOREM2, t, gap, env.at(t), FLOAT_SLACK))
        .collect())
}

/// Replicate-mean dispersion against the dispersion bound at every step
/// after the start.
pub fn prop1_rows(means: &ReplicateMeans, c: &AnalysisConstants) -> Result<Vec<BoundRow>> {
    means
        .t
        .iter()
        .zip(&means.dispersion)
        .filter(|(&t, _)| t > 0)
        .map(|(&t, &a)| Ok(BoundRow::new(PROP1, t, a, prop1_bound(c, t, interval_start(t, c.tau))?, FLOAT_SLACK)))
        .collect()
}

/// One-step bound per transition. A row holds when the mean residual is at
/// least `-z` standard errors; `measured` is the left side, `bound` the right
/// side widened by `z` standard errors.
pub fn theorem1_rows(replicates: &[Vec<TraceRecord>], c: &AnalysisConstants, z: f64) -> Result<Vec<BoundRow>> {
    let report = theorem1_check(replicates, c, 1, z)?;
    Ok((0..report.steps.len())
        .map(|k| BoundRow::new(THEOREM1, report.steps[k], report.lhs[k], report.rhs[k] + z * report.std_errors[k], 0.0))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violation_counts() {
        let rows = vec![
            BoundRow::new(PROP1, 1, 1.0, 2.0, 0.0),
            BoundRow::new(PROP1, 2, 3.0, 2.0, 0.0),
            BoundRow::new(THEOREM2, 1, 1.0, 1.0, 0.0),
        ];
        assert_eq!(violations(&rows), vec![(PROP1, 1), (THEOREM2, 0)]);
    }
}
