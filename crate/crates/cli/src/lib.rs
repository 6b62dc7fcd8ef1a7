//! Command-line driver: configuration, CSV ingestion, and the simulate / oracle / analyze /
//! sweep pipelines with their output files.

pub mod config;
pub mod data;
pub mod error;
pub mod run;

pub use config::{Flags, Mode, RunConfig};
pub use data::{load_csv, write_csv, LoadedTable};
pub use error::{CliError, CliResult};
pub use run::{compute, run, write_artifacts, Artifacts, ResultDocument};
