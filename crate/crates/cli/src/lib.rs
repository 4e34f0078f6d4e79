//! Config handling and experiment execution behind the `torwalk` binary.

pub mod config;
pub mod presets;
pub mod run;

pub use config::{Experiment, ExperimentConfig, RawConfig};
pub use presets::{preset, Preset};
pub use run::{run, RunSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] torwalk_core::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 for exhausted budgets, 2 for everything the user must fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_budget() => 1,
            _ => 2,
        }
    }
}
