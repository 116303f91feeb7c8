//! Experiment configuration, the two-stage pipeline per seed, and
//! multi-run drivers.

mod artifacts;
mod config;
mod experiments;
mod run;

pub use artifacts::{read_csv, read_json, write_csv, write_json, CsvRow, EpochRow, PretrainRow, TraceRow};
pub use config::{DataSource, ExperimentConfig, SweepParam, Variant, OUTPUT_ROOT_ENV};
pub use experiments::{
    ablate, average_ranks, compare, compare_dirs, sweep, write_compare, CompareRow, GridAxis, SummaryRow, SweepCell,
    ABLATION_FILE, COMPARE_FILE, SWEEP_FILE,
};
pub use run::{
    evaluate_run, median, run, run_in, run_seed, seed_dir, Aggregate, EvaluationCheck, Execution, PreparedData,
    SeedArtifacts, SeedFailure, SeedMetrics, SeedReport, Summary, AGGREGATE_FILE, CHECKPOINT_FILE, CONFIG_FILE,
    EPOCHS_FILE, ERROR_FILE, PRETRAIN_FILE, REPORT_FILE, SCHEMA_VERSION, TRACE_FILE, VERSION,
};
