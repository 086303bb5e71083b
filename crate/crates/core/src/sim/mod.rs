//! Discrete-event simulation of intra-CU handover over programmable
//! switches, plus the forwarding-latency and queue-validation experiments.

pub mod config;
pub mod engine;
pub mod forwarding;
pub mod handover;
pub mod message;
pub mod metrics;
pub mod mm1;
pub mod queue;
pub mod rng;
pub mod trace;

use thiserror::Error;

use crate::control::ControlError;
use crate::pipeline::PipelineError;
use crate::qmodel::QmodelError;
use crate::wire::WireError;
use crate::SimTime;

pub use config::{Mode, ScenarioConfig};
pub use handover::{drop_threshold, run_scenario};
pub use metrics::{Aggregates, MetricsReport};
pub use trace::Trace;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event scheduled at {at} before current time {now}")]
    ClockRegression { now: SimTime, at: SimTime },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration parse error at line {line}, column {column}: {msg}")]
    ConfigParse { line: usize, column: usize, msg: String },
    #[error(transparent)]
    Qmodel(#[from] QmodelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{0}")]
    Runtime(String),
}

impl SimError {
    /// True for errors caused by the user's configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SimError::Config(_) | SimError::ConfigParse { .. } | SimError::Qmodel(_)
        )
    }
}
