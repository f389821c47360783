use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tracing::{debug, info, warn};

use crate::evolution::{
    get_new_suggestion, last_complete_generation, policy_for, study_complete, DeferReason,
    Suggestion,
};
use crate::lifecycle::{replay_complete, replay_suggestion};
use crate::model::{validate_study_config, Measurement, StudyConfig, Trial, TrialId, TrialStatus};

use super::record::{LogRecord, StopReason, StudyRecord};
use super::store::TrialStore;
use super::wire::{
    Ack, EarlyStops, RecoveryReport, StudyCreated, StudyStatus, TrialAssignment, TrialList,
    WireRequest, WireResponse,
};
use super::{ServiceError, TrialService};

/// Tells whether a checkpoint path exists in the checkpoint store.
pub type CheckpointCheck = Arc<dyn Fn(&str) -> bool + Send + Sync>;

/// Request handler. Holds no study state: every request loads the study from
/// the store and persists its effects before answering, so two controllers
/// over the same store are interchangeable.
pub struct Controller {
    store: Arc<dyn TrialStore>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    checkpoint_check: Option<CheckpointCheck>,
}

impl Controller {
    pub fn new(store: Arc<dyn TrialStore>) -> Self {
        Self {
            store,
            locks: Mutex::new(HashMap::new()),
            checkpoint_check: None,
        }
    }

    /// Completions naming a checkpoint that `check` rejects are accepted but
    /// recorded in the study's audit trail.
    pub fn with_checkpoint_check(mut self, check: CheckpointCheck) -> Self {
        self.checkpoint_check = Some(check);
        self
    }

    pub fn store(&self) -> &Arc<dyn TrialStore> {
        &self.store
    }

    /// Dispatches one wire request.
    pub fn handle(&self, request: WireRequest) -> WireResponse {
        match request {
            WireRequest::CreateStudy { config } => {
                WireResponse::from_result(self.create_study(&config))
            }
            WireRequest::RequestTrial {
                study_id,
                worker_id,
            } => WireResponse::from_result(self.request_trial(&study_id, &worker_id)),
            WireRequest::ReportMeasurement {
                study_id,
                trial_id,
                measurement,
            } => WireResponse::from_result(self.report_measurement(
                &study_id,
                trial_id,
                &measurement,
            )),
            WireRequest::CompleteTrial {
                study_id,
                trial_id,
                final_checkpoint_path,
            } => WireResponse::from_result(self.complete_trial(
                &study_id,
                trial_id,
                &final_checkpoint_path,
            )),
            WireRequest::StopTrial {
                study_id,
                trial_id,
                reason,
            } => WireResponse::from_result(self.stop_trial(&study_id, trial_id, reason)),
            WireRequest::GetStudy { study_id } => {
                WireResponse::from_result(self.get_study(&study_id))
            }
            WireRequest::ListTrials { study_id } => WireResponse::from_result(
                self.list_trials(&study_id)
                    .map(|trials| TrialList { trials }),
            ),
            WireRequest::PollEarlyStops { study_id } => WireResponse::from_result(
                self.poll_early_stops(&study_id)
                    .map(|trial_ids| EarlyStops { trial_ids }),
            ),
            WireRequest::RecoverStudy { study_id } => {
                WireResponse::from_result(self.recover_study(&study_id))
            }
        }
    }

    fn study_lock(&self, study_id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .entry(study_id.to_string())
            .or_default()
            .clone()
    }

    fn load(&self, study_id: &str) -> Result<StudyRecord, ServiceError> {
        self.store
            .load(study_id)?
            .ok_or_else(|| ServiceError::NotFound(format!("study {study_id} not found")))
    }

    fn pending_trial(study: &StudyRecord, trial_id: TrialId) -> Result<&Trial, ServiceError> {
        let trial = study
            .trial(trial_id)
            .ok_or_else(|| ServiceError::NotFound(format!("trial {trial_id} not found")))?;
        if !trial.is_pending() {
            return Err(ServiceError::InvalidState(format!(
                "trial {trial_id} is {:?}, not pending",
                trial.status
            )));
        }
        Ok(trial)
    }

    fn is_complete(study: &StudyRecord) -> bool {
        match &study.config.replay {
            Some(plan) => replay_complete(&study.trials, plan),
            None => study_complete(&study.trials, &study.config),
        }
    }

    fn stop_records(study: &StudyRecord, ids: &[TrialId], reason: StopReason) -> Vec<LogRecord> {
        ids.iter()
            .enumerate()
            .map(|(i, &trial_id)| LogRecord::TrialStopped {
                trial_id,
                completion_index: study.completion_counter + i as u64,
                reason,
            })
            .collect()
    }
}

impl TrialService for Controller {
    fn create_study(&self, config: &StudyConfig) -> Result<StudyCreated, ServiceError> {
        let violations = validate_study_config(config);
        if !violations.is_empty() {
            return Err(ServiceError::Validation(violations));
        }
        let lock = self.study_lock(&config.study_id);
        let _guard = lock.lock();
        let first = LogRecord::StudyCreated {
            config: config.clone(),
        };
        let created = self.store.create(&config.study_id, &first)?;
        if !created {
            let existing = self.load(&config.study_id)?;
            if existing.config != *config {
                return Err(ServiceError::Conflict(format!(
                    "study {} exists with a different config",
                    config.study_id
                )));
            }
        } else {
            info!(study = %config.study_id, budget_mode = config.budget_mode(), "study created");
        }
        Ok(StudyCreated {
            study_id: config.study_id.clone(),
            created,
            budget_mode: config.budget_mode(),
        })
    }

    fn request_trial(
        &self,
        study_id: &str,
        worker_id: &str,
    ) -> Result<TrialAssignment, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        let config = &study.config;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_word_pos(u128::from(study.rng_cursor));
        let suggestion = match &config.replay {
            Some(plan) => replay_suggestion(&study.trials, config, plan),
            None => get_new_suggestion(&study.trials, config, &mut rng)
                .map_err(|e| ServiceError::ContractViolation(e.to_string()))?,
        };
        let decision = match suggestion {
            Suggestion::New(d) => d,
            Suggestion::Defer(reason) => {
                debug!(study = study_id, worker = worker_id, ?reason, "defer");
                return Ok(TrialAssignment::Defer {
                    reason,
                    retry_after_ms: config.defer_retry_ms,
                    study_complete: reason == DeferReason::StudyComplete,
                });
            }
        };
        decision
            .trial
            .check_invariants()
            .map_err(ServiceError::ContractViolation)?;
        let record = LogRecord::TrialSuggested {
            trial: decision.trial.clone(),
            tournament: decision.tournament.clone(),
            rng_cursor: rng.get_word_pos() as u64,
            worker_id: worker_id.to_string(),
        };
        self.store.append(study_id, &[record])?;
        debug!(
            study = study_id,
            worker = worker_id,
            trial = %decision.trial.trial_id,
            generation = decision.trial.generation,
            "trial suggested"
        );
        Ok(TrialAssignment::Trial {
            trial: Box::new(decision.trial),
        })
    }

    fn report_measurement(
        &self,
        study_id: &str,
        trial_id: TrialId,
        measurement: &Measurement,
    ) -> Result<Ack, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        let trial = Self::pending_trial(&study, trial_id)?;
        if measurement.objectives.len() != study.config.objective_directions.len() {
            return Err(ServiceError::BadRequest(format!(
                "expected {} objectives, got {}",
                study.config.objective_directions.len(),
                measurement.objectives.len()
            )));
        }
        if let Some(last) = trial.measurements.last() {
            if measurement.step <= last.step {
                return Err(ServiceError::Ordering(format!(
                    "step {} does not follow step {}",
                    measurement.step, last.step
                )));
            }
        }
        let record = LogRecord::MeasurementReported {
            trial_id,
            measurement: measurement.clone(),
        };
        self.store.append(study_id, &[record])?;
        Ok(Ack {
            trial_id,
            status: TrialStatus::Pending,
            completion_index: None,
        })
    }

    fn complete_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        final_checkpoint_path: &str,
    ) -> Result<Ack, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        if let Some(t) = study.trial(trial_id).filter(|t| t.is_completed()) {
            return Ok(Ack {
                trial_id,
                status: t.status,
                completion_index: t.completion_index,
            });
        }
        let trial = Self::pending_trial(&study, trial_id)?;
        if trial.measurements.is_empty() {
            return Err(ServiceError::InvalidState(format!(
                "trial {trial_id} has no measurements"
            )));
        }
        let completion_index = study.completion_counter;
        let mut records = vec![LogRecord::TrialCompleted {
            trial_id,
            final_checkpoint_path: final_checkpoint_path.to_string(),
            completion_index,
        }];
        if let Some(check) = &self.checkpoint_check {
            if !check(final_checkpoint_path) {
                warn!(study = study_id, trial = %trial_id, path = final_checkpoint_path, "missing final checkpoint");
                records.push(LogRecord::Audit {
                    trial_id,
                    message: format!(
                        "final checkpoint {final_checkpoint_path} not found in checkpoint store"
                    ),
                });
            }
        }
        self.store.append(study_id, &records)?;
        Ok(Ack {
            trial_id,
            status: TrialStatus::Completed,
            completion_index: Some(completion_index),
        })
    }

    fn stop_trial(
        &self,
        study_id: &str,
        trial_id: TrialId,
        reason: StopReason,
    ) -> Result<Ack, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        if let Some(t) = study.trial(trial_id).filter(|t| t.is_stopped()) {
            return Ok(Ack {
                trial_id,
                status: t.status,
                completion_index: t.completion_index,
            });
        }
        Self::pending_trial(&study, trial_id)?;
        let records = Self::stop_records(&study, &[trial_id], reason);
        self.store.append(study_id, &records)?;
        info!(study = study_id, trial = %trial_id, ?reason, "trial stopped");
        Ok(Ack {
            trial_id,
            status: TrialStatus::Stopped,
            completion_index: Some(study.completion_counter),
        })
    }

    fn get_study(&self, study_id: &str) -> Result<StudyStatus, ServiceError> {
        let study = self.load(study_id)?;
        let count = |s: TrialStatus| study.trials.iter().filter(|t| t.status == s).count();
        Ok(StudyStatus {
            budget_mode: study.config.budget_mode(),
            trial_count: study.trials.len(),
            pending: count(TrialStatus::Pending),
            completed: count(TrialStatus::Completed),
            stopped: count(TrialStatus::Stopped),
            completion_counter: study.completion_counter,
            last_complete_generation: last_complete_generation(
                &study.trials,
                study.config.population_size,
            ),
            study_complete: Self::is_complete(&study),
            audit: study.audit.clone(),
            config: study.config,
        })
    }

    fn list_trials(&self, study_id: &str) -> Result<Vec<Trial>, ServiceError> {
        Ok(self.load(study_id)?.trials)
    }

    fn poll_early_stops(&self, study_id: &str) -> Result<Vec<TrialId>, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        let ids = policy_for(&study.config.early_stopping)
            .trials_to_stop(&study.trials, study.config.population_size);
        if !ids.is_empty() {
            self.store.append(
                study_id,
                &Self::stop_records(&study, &ids, StopReason::EarlyStopped),
            )?;
        }
        Ok(ids)
    }

    fn recover_study(&self, study_id: &str) -> Result<RecoveryReport, ServiceError> {
        let lock = self.study_lock(study_id);
        let _guard = lock.lock();
        let study = self.load(study_id)?;
        let ids: Vec<TrialId> = study
            .trials
            .iter()
            .filter(|t| t.is_pending())
            .map(|t| t.trial_id)
            .collect();
        if !ids.is_empty() {
            self.store.append(
                study_id,
                &Self::stop_records(&study, &ids, StopReason::Recovery),
            )?;
            info!(study = study_id, stopped = ids.len(), "study recovered");
        }
        Ok(RecoveryReport { stopped: ids })
    }
}
