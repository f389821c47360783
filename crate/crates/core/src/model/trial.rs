use std::fmt;

use serde::{Deserialize, Serialize};

use super::fitness::{Direction, Fitness};
use super::params::HParams;

/// Study-unique trial identifier, assigned in suggestion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrialId(pub u64);

impl fmt::Display for TrialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for TrialId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(TrialId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Pending,
    Completed,
    Stopped,
}

/// One evaluation of a checkpoint.
///
/// `step` counts training steps inside the trial; `objectives` may mark
/// elements as missing with `null`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub step: u64,
    pub objectives: Vec<Option<f64>>,
    pub checkpoint_path: String,
}

impl Measurement {
    pub fn new(
        step: u64,
        objectives: Vec<Option<f64>>,
        checkpoint_path: impl Into<String>,
    ) -> Self {
        Self {
            step,
            objectives,
            checkpoint_path: checkpoint_path.into(),
        }
    }
}

/// A continuous training session with fixed hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: TrialId,
    pub study_id: String,
    pub hparams: HParams,
    pub warm_start_checkpoint_path: Option<String>,
    pub parent_trial_id: Option<TrialId>,
    pub initiator_parent_trial_id: Option<TrialId>,
    pub generation: u32,
    pub status: TrialStatus,
    pub measurements: Vec<Measurement>,
    pub final_checkpoint_path: Option<String>,
    pub initiated_reproduction: bool,
    /// Position in the study's completion order; set when the trial leaves
    /// the pending state.
    #[serde(default)]
    pub completion_index: Option<u64>,
    /// For replayed trials, the source trial whose trajectory this one repeats.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_of: Option<TrialId>,
}

impl Trial {
    /// A fresh generation-0 trial.
    pub fn seed(trial_id: TrialId, study_id: impl Into<String>, hparams: HParams) -> Self {
        Self {
            trial_id,
            study_id: study_id.into(),
            hparams,
            warm_start_checkpoint_path: None,
            parent_trial_id: None,
            initiator_parent_trial_id: None,
            generation: 0,
            status: TrialStatus::Pending,
            measurements: Vec::new(),
            final_checkpoint_path: None,
            initiated_reproduction: false,
            completion_index: None,
            replay_of: None,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == TrialStatus::Completed
    }

    pub fn is_pending(&self) -> bool {
        self.status == TrialStatus::Pending
    }

    pub fn is_stopped(&self) -> bool {
        self.status == TrialStatus::Stopped
    }

    /// Fitness of the trial: the objectives of its last measurement.
    pub fn fitness(&self, directions: &[Direction]) -> Option<Fitness> {
        self.measurements
            .last()
            .map(|m| Fitness::new(m.objectives.clone(), directions.to_vec()))
    }

    /// First objective of the last measurement, if present.
    pub fn last_objective(&self) -> Option<f64> {
        self.measurements
            .last()
            .and_then(|m| m.objectives.first().copied().flatten())
    }

    /// Checks the lineage and status invariants that do not need the rest of
    /// the study.
    pub fn check_invariants(&self) -> Result<(), String> {
        let seedlike = self.generation == 0;
        if seedlike != self.parent_trial_id.is_none()
            || seedlike != self.warm_start_checkpoint_path.is_none()
        {
            return Err(format!(
                "trial {}: generation 0 must coincide with absent parent and warm start",
                self.trial_id
            ));
        }
        if self.is_completed()
            && (self.final_checkpoint_path.is_none() || self.measurements.is_empty())
        {
            return Err(format!(
                "trial {}: completed without final checkpoint or measurements",
                self.trial_id
            ));
        }
        if self.measurements.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(format!(
                "trial {}: measurement steps not increasing",
                self.trial_id
            ));
        }
        Ok(())
    }
}
