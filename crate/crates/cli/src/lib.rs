//! Library side of the `srr` command-line tool: run configs, checkpoints,
//! metrics files and the command implementations.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
