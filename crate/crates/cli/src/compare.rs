//! Side-by-side table of run summaries.

use std::path::Path;

use crate::error::{CliError, Result};
use crate::experiment::RunSummary;
use crate::output;

/// Columns of the comparison table.
pub const COMPARE_HEADER: [&str; 13] = [
    "run",
    "algorithm",
    "participation",
    "policy",
    "tau",
    "rounds",
    "final_loss",
    "final_loss_gap",
    "final_accuracy",
    "time_to_accuracy",
    "energy_to_accuracy",
    "total_energy",
    "total_delay",
];

/// Aligns summaries that share data and model; `labels` name the rows.
pub fn compare_runs(labels: &[String], summaries: &[RunSummary]) -> Result<Vec<u8>> {
    if summaries.len() < 2 {
        return Err(CliError::IncompatibleRuns(format!("need at least two summaries, got {}", summaries.len())));
    }
    let first = &summaries[0];
    for (label, s) in labels.iter().zip(summaries).skip(1) {
        if s.data_hash != first.data_hash {
            return Err(CliError::IncompatibleRuns(format!("{label} trains on different data than {}", labels[0])));
        }
        if s.model_hash != first.model_hash {
            return Err(CliError::IncompatibleRuns(format!("{label} uses a different model than {}", labels[0])));
        }
    }
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Csv { path: "comparison".into(), message: e.to_string() };
    w.write_record(COMPARE_HEADER).map_err(err)?;
    for (label, s) in labels.iter().zip(summaries) {
        w.write_record([
            label.clone(),
            s.algorithm.clone(),
            s.participation.clone(),
            s.policy.clone(),
            s.tau.to_string(),
            s.rounds.to_string(),
            s.final_loss.to_string(),
            opt(s.final_loss_gap),
            opt(s.final_accuracy),
            s.time_to_accuracy.clone(),
            opt(s.energy_to_accuracy),
            s.total_energy.to_string(),
            s.total_delay.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Csv { path: "comparison".into(), message: e.to_string() })
}

/// Reads one or more `summary.csv` files and compares every row in them.
pub fn compare_files(paths: &[impl AsRef<Path>]) -> Result<Vec<u8>> {
    let mut labels = Vec::new();
    let mut summaries = Vec::new();
    for p in paths {
        let p = p.as_ref();
        for (i, s) in output::read_summaries(p)?.into_iter().enumerate() {
            labels.push(if i == 0 { p.display().to_string() } else { format!("{}#{i}", p.display()) });
            summaries.push(s);
        }
    }
    compare_runs(&labels, &summaries)
}
