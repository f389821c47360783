//! Replay and checkpoint garbage collection.

mod gc;
mod graph;
mod replay;

pub use gc::{garbage_collect, retained_finals, GcReport};
pub use graph::{extract_dependency_graph, DependencyGraph};
pub use replay::{
    build_replay_plan, replay_complete, replay_config, replay_mismatch, replay_suggestion,
    start_replay,
};

use thiserror::Error;

use crate::model::{TrialId, TrialStatus};
use crate::service::ServiceError;

#[derive(Debug, Error, PartialEq)]
pub enum LifecycleError {
    #[error("unknown trial {0}")]
    UnknownTrial(TrialId),
    #[error("target {trial_id} is {status:?}, not completed")]
    InvalidTarget {
        trial_id: TrialId,
        status: TrialStatus,
    },
    #[error("trial {trial_id} references missing parent {missing}")]
    IncompleteLineage { trial_id: TrialId, missing: TrialId },
    #[error("warm-start relation is cyclic")]
    Cyclic,
    #[error(transparent)]
    Service(ServiceError),
}
