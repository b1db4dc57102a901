//! Experiment runner for the actor-refiner laboratory.
//!
//! * [`ablation`]: all four variants on paired seeds.
//! * [`config`]: flat TOML configuration and the four pipeline variants.
//! * [`experiment`]: multi-seed training runs with per-seed CSV output.
//! * [`scan`]: sweeps over the maximum number of revisions.
//! * [`stats`]: the paired sign test used to compare variants.
//! * [`verify`]: the exact-enumeration identity suite.

pub mod ablation;
pub mod config;
pub mod experiment;
pub mod scan;
pub mod stats;
pub mod verify;

use std::path::{Path, PathBuf};

pub use ablation::{ablate, AblationReport};
pub use config::{ExperimentConfig, Variant};
pub use experiment::{run_experiment, ExperimentResult, SeedOutcome, SeedResult};
pub use scan::{revision_scan, ScanReport};
pub use stats::{sign_test, SignTest};
pub use verify::{verify_suite, VerifyConfig, VerifySummary};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] arlab_core::Error),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

/// Write `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}
