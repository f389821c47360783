use crate::model::{EarlyStoppingConfig, Trial, TrialId};

use super::last_complete_generation;

/// Decides which pending trials the controller should stop.
pub trait EarlyStoppingPolicy: Send + Sync {
    fn trials_to_stop(&self, trials: &[Trial], population_size: u32) -> Vec<TrialId>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoEarlyStopping;

impl EarlyStoppingPolicy for NoEarlyStopping {
    fn trials_to_stop(&self, _: &[Trial], _: u32) -> Vec<TrialId> {
        Vec::new()
    }
}

/// Stops pending trials whose generation trails the last complete one by
/// more than `max_lag`.
#[derive(Debug, Clone, Copy)]
pub struct StaleGeneration {
    pub max_lag: u32,
}

impl EarlyStoppingPolicy for StaleGeneration {
    fn trials_to_stop(&self, trials: &[Trial], population_size: u32) -> Vec<TrialId> {
        let lcg = last_complete_generation(trials, population_size);
        trials
            .iter()
            .filter(|t| t.is_pending() && lcg - i64::from(t.generation) > i64::from(self.max_lag))
            .map(|t| t.trial_id)
            .collect()
    }
}

pub fn policy_for(config: &EarlyStoppingConfig) -> Box<dyn EarlyStoppingPolicy> {
    match config {
        EarlyStoppingConfig::None => Box::new(NoEarlyStopping),
        EarlyStoppingConfig::StaleGeneration { max_lag } => {
            Box::new(StaleGeneration { max_lag: *max_lag })
        }
    }
}
