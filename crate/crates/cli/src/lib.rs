//! Experiment tooling around the core library: dataset IO, configuration,
//! checkpoints, reports, and the subcommand implementations behind the
//! `lightcl` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod record;
pub mod report;
pub mod synth;
