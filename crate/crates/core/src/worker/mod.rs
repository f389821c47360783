//! Client side: checkpoints, toy trainers, trial runs and a simulated
//! worker pool.

mod checkpoint;
mod run;
mod sim;
mod toy;

pub use checkpoint::{
    checkpoint_path, smart_restore, Checkpoint, CheckpointError, CheckpointStore,
    DirCheckpointStore, MemoryCheckpointStore, RestoreReport, Tensor, Variables, MANIFEST_FORMAT,
};
pub use run::{
    run_trial, run_worker, trainer_seed, RetryPolicy, TrialOutcome, TrialRun, WorkerError,
    WorkerSummary,
};
pub use sim::{simulate, ClusterConfig, SimEvent, SimEventKind, SimReport};
pub use toy::{toy_train_step, Drift, ProblemKind, ToyProblemSpec, THETA};
