//! Request and response messages shared by the HTTP server, its client and
//! in-process callers.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::evolution::DeferReason;
use crate::model::{Measurement, StudyConfig, Trial, TrialId, TrialStatus, Violation};

use super::record::{AuditEntry, StopReason};
use super::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WireRequest {
    CreateStudy {
        config: StudyConfig,
    },
    RequestTrial {
        study_id: String,
        worker_id: String,
    },
    ReportMeasurement {
        study_id: String,
        trial_id: TrialId,
        measurement: Measurement,
    },
    CompleteTrial {
        study_id: String,
        trial_id: TrialId,
        final_checkpoint_path: String,
    },
    StopTrial {
        study_id: String,
        trial_id: TrialId,
        #[serde(default)]
        reason: StopReason,
    },
    GetStudy {
        study_id: String,
    },
    ListTrials {
        study_id: String,
    },
    PollEarlyStops {
        study_id: String,
    },
    RecoverStudy {
        study_id: String,
    },
}

impl WireRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            WireRequest::CreateStudy { .. } => "create_study",
            WireRequest::RequestTrial { .. } => "request_trial",
            WireRequest::ReportMeasurement { .. } => "report_measurement",
            WireRequest::CompleteTrial { .. } => "complete_trial",
            WireRequest::StopTrial { .. } => "stop_trial",
            WireRequest::GetStudy { .. } => "get_study",
            WireRequest::ListTrials { .. } => "list_trials",
            WireRequest::PollEarlyStops { .. } => "poll_early_stops",
            WireRequest::RecoverStudy { .. } => "recover_study",
        }
    }

    pub const KINDS: [&'static str; 9] = [
        "create_study",
        "request_trial",
        "report_measurement",
        "complete_trial",
        "stop_trial",
        "get_study",
        "list_trials",
        "poll_early_stops",
        "recover_study",
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReason {
    ValidationFailed,
    Conflict,
    NotFound,
    InvalidState,
    Ordering,
    ContractViolation,
    StoreUnavailable,
    BadRequest,
    /// The service could not be reached at all; produced by clients only.
    Unreachable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub reason: ErrorReason,
    pub message: String,
    pub retryable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
}

/// Envelope of every response: a status code plus either a body or an error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: u16,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl WireResponse {
    pub fn ok<T: Serialize>(body: &T) -> Self {
        Self {
            status: 200,
            body: Some(serde_json::to_value(body).expect("bodies serialize")),
            error: None,
        }
    }

    pub fn from_error(err: &ServiceError) -> Self {
        Self {
            status: err.status(),
            body: None,
            error: Some(err.to_body()),
        }
    }

    pub fn from_result<T: Serialize>(result: Result<T, ServiceError>) -> Self {
        match result {
            Ok(body) => Self::ok(&body),
            Err(e) => Self::from_error(&e),
        }
    }

    /// Decodes the body, or turns the error envelope back into a `ServiceError`.
    pub fn into_result<T: for<'de> Deserialize<'de>>(self) -> Result<T, ServiceError> {
        if let Some(err) = self.error {
            return Err(ServiceError::from_body(err));
        }
        let body = self.body.unwrap_or(Value::Null);
        serde_json::from_value(body)
            .map_err(|e| ServiceError::BadRequest(format!("undecodable response: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyCreated {
    pub study_id: String,
    /// False when an identical study already existed.
    pub created: bool,
    pub budget_mode: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum TrialAssignment {
    Trial {
        trial: Box<Trial>,
    },
    Defer {
        reason: DeferReason,
        retry_after_ms: u64,
        study_complete: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub trial_id: TrialId,
    pub status: TrialStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_index: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyStatus {
    pub config: StudyConfig,
    pub budget_mode: bool,
    pub trial_count: usize,
    pub pending: usize,
    pub completed: usize,
    pub stopped: usize,
    pub completion_counter: u64,
    pub last_complete_generation: i64,
    pub study_complete: bool,
    pub audit: Vec<AuditEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialList {
    pub trials: Vec<Trial>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStops {
    pub trial_ids: Vec<TrialId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub stopped: Vec<TrialId>,
}
