//! Experiment orchestration: configuration, RNG streams, CSV output and CLI.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod streams;

pub use config::{HyperConfig, KRule, Prepared, RunConfig};
pub use experiment::{run_experiment, sweep_speedup, ExperimentOutcome, SpeedupRow};
pub use streams::{derive_stream, fanout_seed, RngStreamKey, StreamPurpose};
