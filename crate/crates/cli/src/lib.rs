//! File formats, reports, plots and the command-line driver around
//! `txmeta-core`.

pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod forest;
pub mod report;
pub mod runner;

pub use cli::run_cli;
pub use error::CliError;
