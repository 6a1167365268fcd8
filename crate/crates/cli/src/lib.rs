//! Command-line orchestration for `fidcov`: CSV ingestion, run configuration,
//! and on-disk artifacts (manifest, traces, diagnostics, summary).

pub mod config;
pub mod error;
pub mod ingest;
pub mod run;

pub use config::{build_config, parse_config_text, GeneratorKind, InitArg, Mode, NormArg, Penalty, RunConfig, ScenarioArgs};
pub use error::{CliError, Result};
pub use ingest::{ingest_csv, parse_table, read_square_matrix, NumericTable};
pub use run::run;
