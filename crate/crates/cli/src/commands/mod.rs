//! Subcommand implementations. Each command owns its output directory and
//! always leaves the fully resolved config next to its artifacts.

pub mod compare;
pub mod cost;
pub mod profile;
pub mod run;
pub mod synth;

use std::path::Path;

use lightcl_core::stream::{build_stream, TaskStream};

use crate::config::ExperimentConfig;
use crate::data::load_raw;
use crate::error::{CliError, Result};

pub(crate) fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub(crate) fn load_stream(config: &ExperimentConfig) -> Result<TaskStream<f32>> {
    let raw = load_raw(&config.data_root, config.stream.dataset)?;
    build_stream(&raw, &config.stream_config()).map_err(CliError::from)
}
