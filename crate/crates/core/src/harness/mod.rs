//! Experiment plumbing: datasets, train/test preparation, parameter sweeps
//! with seeded repetitions, and tradeoff curves.

pub mod config;
pub mod curves;
pub mod dataset;
pub mod experiment;
pub mod prepare;
pub mod store;
pub mod synthetic;

pub use config::{AttackKind, ExperimentConfig, Family, ModelKind, TrainingMode};
pub use curves::{interpolate_curves, TradeoffCurve};
pub use dataset::{load_checkins, CheckinRecord, Checkins, DatasetFormat};
pub use experiment::{load_store, read_rows, run_experiment, run_on_store, write_rows, write_rows_to, ResultRow};
pub use prepare::{prepare_checkin_dataset, prepare_taxicab_dataset, CheckinProtocol, TaxicabProtocol};
pub use store::{TraceStore, UserTraces};
