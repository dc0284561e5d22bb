//! Command-line front end: CSV ingestion, run configuration and JSON reports.

pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod run;

pub use config::{Cli, Command, EffectArg, RunConfig, DEFAULT_SEED};
pub use error::{CliError, Result};
pub use io::{read_csv, read_csv_from, write_csv, write_csv_to, LoadedData};
pub use report::{Report, SCHEMA_VERSION};
pub use run::{emit, run, run_analyze, run_compare, run_power, run_simulate};
