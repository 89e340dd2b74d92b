//! Metrics, the incremental experiment runner and hyperparameter
//! validation.

mod metrics;
mod results;
mod runner;
mod validation;

pub use metrics::{closed_world_accuracy, open_set_accuracy, owr_harmonic};
pub use results::{
    read_results_csv, report_table, rows_of, write_report_csv, write_results_csv, ReportLine, ResultRow, METRICS,
};
pub use runner::{
    evaluate_step, hyper_hash, run_experiment, split_domain, train_model, Averages, DomainSplit, Fingerprint,
    RunOutput, RunResult, RunSpec, StepResult,
};
pub use validation::{
    validate_hyperparameters, validation_score, Candidate, SearchGrid, Stage, ValidationResult,
};
