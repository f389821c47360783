use std::time::Duration;

use serde_json::Value;

use pbt_core::model::{Measurement, StudyConfig};
use pbt_core::service::{
    Ack, EarlyStops, RecoveryReport, ServiceError, StopReason, StudyCreated, StudyStatus,
    TrialAssignment, TrialList, TrialService, WireRequest, WireResponse,
};
use pbt_core::{Trial, TrialId};

/// Blocking HTTP client for a `pbt serve` instance.
#[derive(Clone, Debug)]
pub struct HttpClient {
    base: String,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    /// `base` is the server root, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Result<Self, ServiceError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| ServiceError::Unreachable(e.to_string()))?;
        Ok(Self {
            base: base.into().trim_end_matches('/').to_string(),
            http,
        })
    }

    /// Sends one request; transport failures become `Unreachable`.
    pub fn call(&self, request: &WireRequest) -> WireResponse {
        let url = format!("{}/v1/{}", self.base, request.kind());
        let mut body = serde_json::to_value(request).expect("requests serialize");
        if let Value::Object(map) = &mut body {
            map.remove("kind");
        }
        let sent = self
            .http
            .post(url)
            .json(&body)
            .send()
            .and_then(|r| r.json::<WireResponse>());
        match sent {
            Ok(resp) => resp,
            Err(e) => WireResponse::from_error(&ServiceError::Unreachable(e.to_string())),
        }
    }

    fn typed<T: for<'de> serde::Deserialize<'de>>(
        &self,
        request: WireRequest,
    ) -> Result<T, ServiceError> {
        self.call(&request).into_result()
    }
}

impl TrialService for HttpClient {
    fn create_study(&self, config: &StudyConfig) -> Result<StudyCreated, ServiceError> {
        self.typed(WireRequest::CreateStudy {
            config: config.clone(),
        })
    }

    fn request_trial(
        &self,
        study_id: &str,
        worker_id: &str,
    ) -> Result<TrialAssignment, ServiceError> {
        self.typed(WireRequest::RequestTrial {
            study_id: study_id.into(),
            worker_id: worker_id.into(),
        })
    }

    fn report_measurement(
        &self,
        study_id: &str,
        trial_id: TrialId,
        measurement: &Measurement,
    ) -> Result<Ack, ServiceError> {
        self.typed(WireRequest::ReportMeasurement {
            study_id: study_id.into(),
            trial_id,
            measurement: measurement.clone(),
        })
    }

    fn complete_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        final_checkpoint_path: &str,
    ) -> Result<Ack, ServiceError> {
        self.typed(WireRequest::CompleteTrial {
            study_id: study_id.into(),
            trial_id,
            final_checkpoint_path: final_checkpoint_path.into(),
        })
    }

    fn stop_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        reason: StopReason,
    ) -> Result<Ack, ServiceError> {
        self.typed(WireRequest::StopTrial {
            study_id: study_id.into(),
            trial_id,
            reason,
        })
    }

    fn get_study(&self, study_id: &str) -> Result<StudyStatus, ServiceError> {
        self.typed(WireRequest::GetStudy {
            study_id: study_id.into(),
        })
    }

    fn list_trials(&self, study_id: &str) -> Result<Vec<Trial>, ServiceError> {
        self.typed::<TrialList>(WireRequest::ListTrials {
            study_id: study_id.into(),
        })
        .map(|l| l.trials)
    }

    fn poll_early_stops(&self, study_id: &str) -> Result<Vec<TrialId>, ServiceError> {
        self.typed::<EarlyStops>(WireRequest::PollEarlyStops {
            study_id: study_id.into(),
        })
        .map(|e| e.trial_ids)
    }

    fn recover_study(&self, study_id: &str) -> Result<RecoveryReport, ServiceError> {
        self.typed(WireRequest::RecoverStudy {
            study_id: study_id.into(),
        })
    }
}
