//! Shared data model: search space, study configuration, trials and fitness.

mod config;
mod fitness;
mod params;
mod trial;

pub use config::{
    validate_specs, validate_study_config, EarlyStoppingConfig, OpponentStrategy, ReplayEntry,
    ReplayPlan, StudyConfig, Violation,
};
pub use fitness::{compare_fitness, Direction, Fitness, FitnessMode, FitnessOrdering};
pub(crate) use params::walk_active;
pub use params::{
    active_spec_names, check_assignment, root_names, sample_hparams, ChildEdge, Domain, HParams,
    ParamValue, ParameterSpec, Scale,
};
pub use trial::{Measurement, Trial, TrialId, TrialStatus};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("fitness length mismatch: {left} vs {right}")]
    FitnessLength { left: usize, right: usize },
    #[error("fitness tuples use different objective directions")]
    FitnessDirections,
}
