//! The controller: a stateless request handler over a persistent trial store.

mod controller;
mod record;
mod store;
mod wire;

pub use controller::{CheckpointCheck, Controller};
pub use record::{AuditEntry, LogRecord, StopReason, StudyRecord};
pub use store::{FileStore, MemoryStore, StoreError, TrialStore};
pub use wire::{
    Ack, EarlyStops, ErrorBody, ErrorReason, RecoveryReport, StudyCreated, StudyStatus,
    TrialAssignment, TrialList, WireRequest, WireResponse,
};

use thiserror::Error;

use crate::model::{Measurement, StudyConfig, Trial, TrialId, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("invalid study config: {}", join(.0))]
    Validation(Vec<Violation>),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    InvalidState(String),
    #[error("{0}")]
    Ordering(String),
    #[error("{0}")]
    ContractViolation(String),
    #[error("store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("service unreachable: {0}")]
    Unreachable(String),
}

fn join(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl ServiceError {
    pub fn reason(&self) -> ErrorReason {
        match self {
            ServiceError::Validation(_) => ErrorReason::ValidationFailed,
            ServiceError::Conflict(_) => ErrorReason::Conflict,
            ServiceError::NotFound(_) => ErrorReason::NotFound,
            ServiceError::InvalidState(_) => ErrorReason::InvalidState,
            ServiceError::Ordering(_) => ErrorReason::Ordering,
            ServiceError::ContractViolation(_) => ErrorReason::ContractViolation,
            ServiceError::StoreUnavailable(_) => ErrorReason::StoreUnavailable,
            ServiceError::BadRequest(_) => ErrorReason::BadRequest,
            ServiceError::Unreachable(_) => ErrorReason::Unreachable,
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(
            self,
            ServiceError::StoreUnavailable(_) | ServiceError::Unreachable(_)
        )
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Validation(_) | ServiceError::BadRequest(_) => 400,
            ServiceError::NotFound(_) => 404,
            ServiceError::Conflict(_)
            | ServiceError::InvalidState(_)
            | ServiceError::Ordering(_) => 409,
            ServiceError::ContractViolation(_) => 422,
            ServiceError::StoreUnavailable(_) | ServiceError::Unreachable(_) => 503,
        }
    }

    pub fn to_body(&self) -> ErrorBody {
        let (message, violations) = match self {
            ServiceError::Validation(v) => ("invalid study config".to_string(), v.clone()),
            other => (other.to_string(), Vec::new()),
        };
        ErrorBody {
            reason: self.reason(),
            message,
            retryable: self.retryable(),
            violations,
        }
    }

    pub fn from_body(body: ErrorBody) -> Self {
        let m = body.message;
        match body.reason {
            ErrorReason::ValidationFailed => ServiceError::Validation(body.violations),
            ErrorReason::Conflict => ServiceError::Conflict(m),
            ErrorReason::NotFound => ServiceError::NotFound(m),
            ErrorReason::InvalidState => ServiceError::InvalidState(m),
            ErrorReason::Ordering => ServiceError::Ordering(m),
            ErrorReason::ContractViolation => ServiceError::ContractViolation(m),
            ErrorReason::StoreUnavailable => ServiceError::StoreUnavailable(
                m.trim_start_matches("store unavailable: ").to_string(),
            ),
            ErrorReason::BadRequest => ServiceError::BadRequest(m),
            ErrorReason::Unreachable => ServiceError::Unreachable(m),
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        ServiceError::StoreUnavailable(e.to_string())
    }
}

/// The trial lifecycle as seen by workers and tools, whether the controller
/// runs in-process or behind HTTP.
pub trait TrialService: Send + Sync {
    fn create_study(&self, config: &StudyConfig) -> Result<StudyCreated, ServiceError>;
    fn request_trial(
        &self,
        study_id: &str,
        worker_id: &str,
    ) -> Result<TrialAssignment, ServiceError>;
    fn report_measurement(
        &self,
        study_id: &str,
        trial_id: TrialId,
        measurement: &Measurement,
    ) -> Result<Ack, ServiceError>;
    fn complete_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        final_checkpoint_path: &str,
    ) -> Result<Ack, ServiceError>;
    fn stop_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        reason: StopReason,
    ) -> Result<Ack, ServiceError>;
    fn get_study(&self, study_id: &str) -> Result<StudyStatus, ServiceError>;
    fn list_trials(&self, study_id: &str) -> Result<Vec<Trial>, ServiceError>;
    fn poll_early_stops(&self, study_id: &str) -> Result<Vec<TrialId>, ServiceError>;
    fn recover_study(&self, study_id: &str) -> Result<RecoveryReport, ServiceError>;
}
