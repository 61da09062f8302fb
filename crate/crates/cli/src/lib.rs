//! IO and process layer for bias-vector model editing: checkpoint files,
//! dataset ingestion, vector persistence, run manifests, and the command
//! implementations behind the `biasvec` binary. All numerics live in the
//! `biasvec-core` crate.

pub mod commands;
pub mod config;
pub mod datasets;
pub mod manifest;
pub mod plot;
pub mod provider;
pub mod store;
pub mod vecio;

pub use commands::CliError;
