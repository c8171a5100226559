//! Command implementations behind the `tilestereo` binary. Each subcommand
//! lives in its own module and returns the crate-wide [`tilestereo::Result`],
//! so the binary stays a thin argument-parsing and exit-code shim and
//! integration tests can drive the commands in process.

pub mod config;
pub mod data_source;
pub mod eval;
pub mod infer;
pub mod selftest;
pub mod train;

pub use config::RunConfig;
