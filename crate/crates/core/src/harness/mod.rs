//! Configuration, persistence, evaluation runs, ablations and the CLI.

pub mod cli;
mod config;
pub mod dataset;
mod run;
pub mod svg;

pub use config::{Ablations, ConfigError, EnvSettings, RunConfig, Seeds, Stage, SCHEMA_VERSION};
pub use run::{
    embedding_checkpoint, embedding_from_checkpoint, eval_seed, eval_set, evaluate_model, load_model, report_json,
    run_ablation, save_model, trace_episode, train, AblationRow, HarnessError, MetricsLine, Model, RunDir, Variant,
};
