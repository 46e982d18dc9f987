//! Experiment orchestration: datasets, protocols, metrics and model files.

pub mod datasets;
pub mod images;
pub mod metrics;
pub mod model_io;
pub mod protocol;
pub mod training;

pub use protocol::{
    run_single_step, run_two_step, ExperimentReport, ProtocolConfig, SignalRecord, Step1, Step2,
};
