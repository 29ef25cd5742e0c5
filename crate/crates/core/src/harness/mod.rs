//! Configuration, datasets, communication accounting, metrics and the
//! experiment driver behind the `fedsynth` binary.

pub mod accounting;
pub mod blobs;
pub mod config;
pub mod experiment;
pub mod idx;
pub mod metrics;

pub use accounting::{compression_ratio, payload_float_count, CommCost};
pub use blobs::{make_blobs, split_blobs};
pub use config::{DatasetKind, Experiment, RunConfig};
pub use experiment::{load_data, run_experiment, run_experiment_with, threads_from_env, ExperimentOutput, Trajectory};
pub use idx::{load_idx, parse_idx, IdxError};
pub use metrics::{difference, read_jsonl, write_diff_csv, write_jsonl, DiffRow, RoundMetrics};
