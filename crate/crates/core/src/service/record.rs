//! The per-study log and the record it folds into.

use serde::{Deserialize, Serialize};

use crate::evolution::TournamentRecord;
use crate::model::{Measurement, StudyConfig, Trial, TrialId, TrialStatus};

/// Why a trial left the pending state without completing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Stopped by a client, typically a worker whose training failed.
    #[default]
    Requested,
    /// Stopped by the early-stopping policy.
    EarlyStopped,
    /// Marked stopped by `recover_study`.
    Recovery,
}

/// One line of a study log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    StudyCreated {
        config: StudyConfig,
    },
    TrialSuggested {
        trial: Trial,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tournament: Option<TournamentRecord>,
        rng_cursor: u64,
        worker_id: String,
    },
    MeasurementReported {
        trial_id: TrialId,
        measurement: Measurement,
    },
    TrialCompleted {
        trial_id: TrialId,
        final_checkpoint_path: String,
        completion_index: u64,
    },
    TrialStopped {
        trial_id: TrialId,
        completion_index: u64,
        reason: StopReason,
    },
    Audit {
        trial_id: TrialId,
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub trial_id: TrialId,
    pub message: String,
}

/// Materialized state of one study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub config: StudyConfig,
    pub trials: Vec<Trial>,
    pub completion_counter: u64,
    pub rng_cursor: u64,
    pub audit: Vec<AuditEntry>,
}

impl StudyRecord {
    pub fn new(config: StudyConfig) -> Self {
        Self {
            config,
            trials: Vec::new(),
            completion_counter: 0,
            rng_cursor: 0,
            audit: Vec::new(),
        }
    }

    /// Rebuilds a record from its log. The first entry must create the study.
    pub fn fold<'a>(records: impl IntoIterator<Item = &'a LogRecord>) -> Result<Self, String> {
        let mut it = records.into_iter();
        let mut study = match it.next() {
            Some(LogRecord::StudyCreated { config }) => StudyRecord::new(config.clone()),
            Some(_) => return Err("log does not start with study_created".into()),
            None => return Err("empty log".into()),
        };
        for r in it {
            study.apply(r)?;
        }
        Ok(study)
    }

    pub fn trial(&self, id: TrialId) -> Option<&Trial> {
        // Ids are assigned densely in append order.
        self.trials
            .get(id.0 as usize)
            .filter(|t| t.trial_id == id)
            .or_else(|| self.trials.iter().find(|t| t.trial_id == id))
    }

    fn trial_mut(&mut self, id: TrialId) -> Result<&mut Trial, String> {
        let idx = match self.trials.get(id.0 as usize) {
            Some(t) if t.trial_id == id => id.0 as usize,
            _ => self
                .trials
                .iter()
                .position(|t| t.trial_id == id)
                .ok_or_else(|| format!("unknown trial {id}"))?,
        };
        Ok(&mut self.trials[idx])
    }

    pub fn apply(&mut self, record: &LogRecord) -> Result<(), String> {
        match record {
            LogRecord::StudyCreated { .. } => return Err("duplicate study_created".into()),
            LogRecord::TrialSuggested {
                trial,
                tournament,
                rng_cursor,
                ..
            } => {
                if self.trial(trial.trial_id).is_some() {
                    return Err(format!("duplicate trial {}", trial.trial_id));
                }
                if let Some(t) = tournament {
                    self.trial_mut(t.initiator)?.initiated_reproduction = true;
                }
                self.rng_cursor = *rng_cursor;
                self.trials.push(trial.clone());
            }
            LogRecord::MeasurementReported {
                trial_id,
                measurement,
            } => {
                self.trial_mut(*trial_id)?
                    .measurements
                    .push(measurement.clone());
            }
            LogRecord::TrialCompleted {
                trial_id,
                final_checkpoint_path,
                completion_index,
            } => {
                let t = self.trial_mut(*trial_id)?;
                t.status = TrialStatus::Completed;
                t.final_checkpoint_path = Some(final_checkpoint_path.clone());
                t.completion_index = Some(*completion_index);
                self.completion_counter = completion_index + 1;
            }
            LogRecord::TrialStopped {
                trial_id,
                completion_index,
                reason,
            } => {
                let t = self.trial_mut(*trial_id)?;
                t.status = TrialStatus::Stopped;
                t.completion_index = Some(*completion_index);
                let initiator = t.initiator_parent_trial_id;
                self.completion_counter = completion_index + 1;
                // A lost child frees its initiator to reproduce again, except
                // when the policy itself chose to drop it.
                if let (Some(init), false) = (initiator, *reason == StopReason::EarlyStopped) {
                    self.trial_mut(init)?.initiated_reproduction = false;
                }
            }
            LogRecord::Audit { trial_id, message } => {
                self.audit.push(AuditEntry {
                    trial_id: *trial_id,
                    message: message.clone(),
                });
            }
        }
        Ok(())
    }
}
