//! Experiment orchestration: configuration, metrics persistence, checkpoint
//! I/O and the backends of the CLI subcommands (train, eval, oracle, sweep).
//!
//! All randomness of a run flows from its single seed through named
//! substreams, so a (config, seed) pair reproduces every output byte except
//! the measured wall_ms telemetry column.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod runner;

pub use checkpoint::{Checkpoint, CheckpointHeader, NetSpec, CHECKPOINT_SCHEMA_VERSION};
pub use config::{Algorithm, BaselineKind, EnvConfig, MdpEnvKind, RunConfig, OUT_DIR_ENV};
pub use metrics::{
    convergence_epoch, read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER,
    METRICS_SCHEMA_VERSION,
};
pub use runner::{
    run_eval, run_oracle, run_sweep, run_train, write_json, EvalSummaryJson, OracleJson,
    SweepPoint, TrainReport, CHECKPOINT_FILE, EPISODES_FILE, METRICS_FILE,
};
