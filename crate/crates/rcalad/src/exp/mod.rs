//! Experiment orchestration: declarative configs, resumable checkpoints,
//! deterministic multi-run execution, and reports that can be rebuilt from
//! their own dumps.
//!
//! The pieces:
//!
//! * [`ExperimentConfig`] describes a whole experiment (dataset, split,
//!   architecture, training, scoring, run count) and rejects unknown keys,
//!   so a typo fails loudly instead of silently using a default.
//! * [`run_experiment`] executes it: every run gets its own named
//!   substreams for split, initialization, and training, runs execute on
//!   worker threads capped by `RCALAD_THREADS`, and results are collected
//!   by run index. The same config and seed produce the same bytes.
//! * [`save_checkpoint`] and [`load_checkpoint`] freeze and restore a
//!   trainer mid-stream (parameters, optimizer slots, spectral vectors,
//!   random streams), so a resumed run continues bit-exactly.
//! * [`Report`] plus the dump readers close the loop: metrics recomputed
//!   from an emitted `scores.csv` match the report exactly.

pub mod checkpoint;
pub mod config;
pub mod report;
pub mod runner;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{
    ArchConfig, DatasetConfig, DatasetKind, ExperimentConfig, RunConfig, ScoreConfig, SplitConfig,
};
pub use report::{
    build_report, emit_report, metrics_from_columns, read_scores_csv, write_loss_history_csv,
    DataFacts, Report, RunArtifacts, RunFailure, RunOutcome, RunReport,
};
pub use runner::{
    build_trainer, execute_run, prepare_run, resolve_workers, run_experiment, score_run,
    stage_data, DataSource, RunData, RunOptions,
};
