//! CSV artifacts. Files are first written next to their destination under a
//! temporary name and renamed into place once every file is complete.

use std::fs;
use std::path::{Path, PathBuf};

use tthf::analysis::checks::BoundRow;
use tthf::engine::TraceRecord;

use crate::config::{DataKind, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::experiment::{ExperimentOutput, RunSummary};

pub const TRACE_FILE: &str = "trace.csv";
pub const BOUNDS_FILE: &str = "bounds.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

fn csv_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Csv { path: path.to_path_buf(), message: e.to_string() }
}

/// Columns of `trace.csv`; they depend on the config only.
pub fn trace_header(cfg: &ExperimentConfig) -> Vec<String> {
    let mut h: Vec<String> = ["replicate", "t", "eta", "loss"].map(String::from).to_vec();
    if cfg.data.kind == DataKind::SyntheticQuadratic {
        h.push("loss_gap".into());
    } else {
        h.push("accuracy".into());
    }
    h.extend(["dispersion", "max_consensus_error"].map(String::from));
    h.extend((0..cfg.network.clusters).map(|c| format!("gamma_c{c}")));
    h.extend((0..cfg.network.clusters).map(|c| format!("upsilon_c{c}")));
    h.extend(["aggregated", "cum_energy", "cum_delay"].map(String::from));
    h
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_csv(cfg: &ExperimentConfig, traces: &[Vec<TraceRecord>]) -> Result<Vec<u8>> {
    let path = Path::new(TRACE_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trace_header(cfg)).map_err(|e| csv_error(path, e))?;
    let quadratic = cfg.data.kind == DataKind::SyntheticQuadratic;
    for (r, trace) in traces.iter().enumerate() {
        for rec in trace {
            let mut row = vec![r.to_string(), rec.t.to_string(), rec.eta.to_string(), rec.loss.to_string()];
            row.push(if quadratic { opt(rec.loss_gap) } else { opt(rec.accuracy) });
            row.push(rec.dispersion.to_string());
            row.push(rec.max_consensus_error.iter().copied().fold(0.0, f64::max).to_string());
            row.extend(rec.gamma_rounds.iter().map(|g| g.to_string()));
            row.extend(rec.upsilon.iter().map(|u| u.to_string()));
            row.push(u8::from(rec.aggregated).to_string());
            row.push(rec.cum_energy.to_string());
            row.push(rec.cum_delay.to_string());
            w.write_record(&row).map_err(|e| csv_error(path, e))?;
        }
    }
    w.into_inner().map_err(|e| csv_error(path, e))
}

pub fn bounds_csv(rows: &[BoundRow]) -> Result<Vec<u8>> {
    let path = Path::new(BOUNDS_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["check", "t", "measured", "bound", "holds"]).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record([r.check.to_string(), r.t.to_string(), r.measured.to_string(), r.bound.to_string(), r.holds.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.into_inner().map_err(|e| csv_error(path, e))
}

pub fn summary_csv(summaries: &[RunSummary]) -> Result<Vec<u8>> {
    let path = Path::new(SUMMARY_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in summaries {
        w.serialize(s).map_err(|e| csv_error(path, e))?;
    }
    w.into_inner().map_err(|e| csv_error(path, e))
}

pub fn read_summaries(path: &Path) -> Result<Vec<RunSummary>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().collect::<std::result::Result<Vec<RunSummary>, _>>().map_err(|e| csv_error(path, e))
}

/// Writes `files` into `dir` atomically per file; if any write fails the
/// temporaries are removed and nothing is renamed.
pub fn write_atomically(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut temps = Vec::new();
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
        if let Err(e) = fs::write(&tmp, bytes) {
            for t in temps.iter().chain(std::iter::once(&tmp)) {
                let _ = fs::remove_file(t);
            }
            return Err(io(&tmp)(e));
        }
        temps.push(tmp);
    }
    let mut out = Vec::new();
    for ((name, _), tmp) in files.iter().zip(&temps) {
        let dest = dir.join(name);
        fs::rename(tmp, &dest).map_err(io(&dest))?;
        out.push(dest);
    }
    Ok(out)
}

/// Writes the artifacts of a run. `include_trace` is false for
/// `verify-bounds`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput, include_trace: bool) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if include_trace {
        files.push((TRACE_FILE, trace_csv(cfg, &out.traces)?));
    }
    if cfg.checks.enabled {
        files.push((BOUNDS_FILE, bounds_csv(&out.bounds)?));
    }
    files.push((SUMMARY_FILE, summary_csv(std::slice::from_ref(&out.summary))?));
    files.push((RESOLVED_CONFIG_FILE, cfg.to_toml().into_bytes()));
    write_atomically(dir, &files)
}
