//! Experiment runner for `misfit-core`: one dispatcher shared by the command line and by
//! JSON suite manifests, deterministic result records, and CSV plot data.

pub mod csv;
pub mod experiment;
pub mod plot;
pub mod suite;

use std::path::PathBuf;

pub use experiment::{execute, Command, Outcome};
pub use plot::{emit_plot_data, PlotKind};
pub use suite::{run_suite, worker_count, ExperimentSpec, Predicate, ResultRecord, SuiteReport};

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error(transparent)]
    Core(#[from] misfit_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error("unknown plot kind `{0}`")]
    UnknownKind(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("parameter `{key}`: {reason}")]
    BadParameter { key: String, reason: String },
}

pub type Result<T, E = LabError> = std::result::Result<T, E>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &std::path::Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| LabError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| LabError::Io {
        path: path.to_path_buf(),
        source,
    })
}
