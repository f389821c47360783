//! The reproduction engine: given a study's trials, decide what to train next.

mod early_stop;
mod mutate;
mod selection;
mod suggest;

pub use early_stop::{policy_for, EarlyStoppingPolicy, NoEarlyStopping, StaleGeneration};
pub use mutate::{
    mutate, mutate_float, mutate_value, step_discrete, step_integer, Step, GROW, SHRINK,
};
pub use selection::{
    binary_tournament, get_oldest_uninitiated, last_complete_generation, select_opponents,
    TournamentOutcome,
};
pub use suggest::{
    get_new_suggestion, next_trial_id, study_complete, DeferReason, Suggestion, SuggestionDecision,
    TournamentRecord,
};

use thiserror::Error;

use crate::model::{ModelError, TrialId};

#[derive(Debug, Error, PartialEq)]
pub enum EvolutionError {
    #[error("trial {0} has no measurements")]
    NoMeasurements(TrialId),
    #[error("trial {0} is completed without a final checkpoint")]
    MissingCheckpoint(TrialId),
    #[error(transparent)]
    Model(#[from] ModelError),
}
