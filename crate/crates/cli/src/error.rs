use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config key `{key}`: {message}")]
    Validation { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
    #[error("runs are not comparable: {0}")]
    IncompatibleRuns(String),
    #[error(transparent)]
    Data(#[from] tthf::data::DataError),
    #[error(transparent)]
    Topology(#[from] tthf::topology::TopologyError),
    #[error(transparent)]
    Engine(#[from] tthf::engine::EngineError),
    #[error(transparent)]
    Analysis(#[from] tthf::analysis::AnalysisError),
    #[error(transparent)]
    Model(#[from] tthf::model::ModelError),
    #[error("cannot start worker pool: {0}")]
    Pool(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
