//! Black-box population based training.
//!
//! A controller owns every evolution decision; workers only ask for their
//! next trial, train it, and report measurements back. All controller state
//! lives in an append-only per-study log, so the controller process can be
//! restarted between any two requests.

pub mod evolution;
pub mod lifecycle;
pub mod model;
pub mod service;
pub mod worker;

pub use model::{
    HParams, Measurement, ParamValue, ParameterSpec, StudyConfig, Trial, TrialId, TrialStatus,
};
