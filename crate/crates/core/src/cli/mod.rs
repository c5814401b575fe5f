//! Experiment specs, result files and the commands behind the `flens` binary.

mod commands;
mod output;
mod spec;

pub use commands::{
    apply_overrides, cmd_bench_time, cmd_oracle, cmd_run, cmd_sweep_sketch, gen_data, load_dataset,
    parse_check, prepare, solve_oracle, OracleResult, Overrides, ParseSummary, RunReport, Workload,
    ORACLE_MAX_ITER, ORACLE_TOL,
};
pub use output::{format_metrics_csv, write_atomic, METRICS_HEADER};
pub use spec::{
    check_sketch_size, dump_spec, load_spec, parse_spec, sweep_kind, DatasetSource, ExperimentSpec,
    SweepSpec, ALGORITHM_KEYS, KEYS,
};

use thiserror::Error;

use crate::data::DataError;
use crate::fedsim::FedError;
use crate::objective::ObjectiveError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("spec line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("spec line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("spec is missing required key `{0}`")]
    MissingRequired(String),
    #[error("invalid spec: {0}")]
    Validation(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("objective error: {0}")]
    Objective(#[from] ObjectiveError),
    #[error("{0}")]
    Fed(#[from] FedError),
    #[error("{algorithm}: {source}")]
    Algorithm { algorithm: String, source: FedError },
    #[error("oracle did not reach tolerance {tol:e}; best gradient norm {grad_norm:e}")]
    OracleNotConverged { tol: f64, grad_norm: f64 },
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
