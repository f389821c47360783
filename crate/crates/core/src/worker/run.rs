//! Training one trial and talking to the controller about it.

use std::thread;
use std::time::Duration;

use thiserror::Error;
use tracing::{debug, info, warn};

use crate::model::{Measurement, StudyConfig, Trial, TrialId};
use crate::service::{ServiceError, StopReason, TrialAssignment, TrialService};

use super::checkpoint::{
    checkpoint_path, smart_restore, Checkpoint, CheckpointError, CheckpointStore, RestoreReport,
};
use super::toy::{toy_train_step, ToyProblemSpec, THETA};

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("trial {trial_id}: {message}")]
    BadTrial { trial_id: TrialId, message: String },
    #[error("trial {trial_id} diverged at step {step}")]
    Diverged { trial_id: TrialId, step: u64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

/// Seed of a trial's trainer. Replayed trials reuse their source's seed.
pub fn trainer_seed(study_seed: u64, trial: &Trial) -> u64 {
    let key = trial.replay_of.unwrap_or(trial.trial_id).0;
    let mut z = study_seed ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A trial being trained, advanced one evaluation interval at a time.
pub struct TrialRun<'a> {
    trial: Trial,
    problem: &'a ToyProblemSpec,
    store: &'a dyn CheckpointStore,
    steps_per_trial: u64,
    seed: u64,
    lr: f64,
    theta: Vec<f64>,
    /// Steps trained so far within this trial.
    local_step: u64,
    start_step: u64,
    last_checkpoint: Option<String>,
    restore: Option<RestoreReport>,
}

impl<'a> TrialRun<'a> {
    /// Builds the model from the trial's hparams and warm-starts it when the
    /// trial names a parent checkpoint.
    pub fn start(
        trial: Trial,
        config: &StudyConfig,
        problem: &'a ToyProblemSpec,
        store: &'a dyn CheckpointStore,
    ) -> Result<Self, WorkerError> {
        let bad = |message: String| WorkerError::BadTrial {
            trial_id: trial.trial_id,
            message,
        };
        problem.validate(config.steps_per_trial).map_err(bad)?;
        let lr = trial
            .hparams
            .get("lr")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| bad("missing numeric hparam \"lr\"".into()))?;
        let seed = trainer_seed(config.seed, &trial);
        let fresh = problem.fresh_variables(seed);
        let (vars, restore) = match &trial.warm_start_checkpoint_path {
            Some(path) => {
                let ckpt = store.read(path)?;
                let (vars, report) = smart_restore(&ckpt, fresh);
                (vars, Some(report))
            }
            None => (fresh, None),
        };
        let theta = vars[THETA].values.clone();
        Ok(Self {
            start_step: u64::from(trial.generation) * config.steps_per_trial,
            steps_per_trial: config.steps_per_trial,
            trial,
            problem,
            store,
            seed,
            lr,
            theta,
            local_step: 0,
            last_checkpoint: None,
            restore,
        })
    }

    pub fn trial(&self) -> &Trial {
        &self.trial
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn restore_report(&self) -> Option<&RestoreReport> {
        self.restore.as_ref()
    }

    pub fn local_step(&self) -> u64 {
        self.local_step
    }

    pub fn is_finished(&self) -> bool {
        self.local_step >= self.steps_per_trial
    }

    pub fn last_checkpoint(&self) -> Option<&str> {
        self.last_checkpoint.as_deref()
    }

    /// Trains up to the next evaluation, saves a checkpoint and returns the
    /// measurement; `None` once the trial has run all its steps.
    pub fn next_measurement(&mut self) -> Result<Option<Measurement>, WorkerError> {
        if self.is_finished() {
            return Ok(None);
        }
        for _ in 0..self.problem.eval_every {
            let t = self.start_step + self.local_step;
            toy_train_step(&mut self.theta, self.lr, t, self.problem, self.seed);
            self.local_step += 1;
        }
        let global = self.start_step + self.local_step;
        let loss = self.problem.loss(&self.theta, global);
        if !loss.is_finite() || self.theta.iter().any(|x| !x.is_finite()) {
            return Err(WorkerError::Diverged {
                trial_id: self.trial.trial_id,
                step: self.local_step,
            });
        }
        let path = checkpoint_path(&self.trial.study_id, self.trial.trial_id, global);
        self.store.write(&Checkpoint {
            path: path.clone(),
            variables: [(
                THETA.to_string(),
                super::checkpoint::Tensor::vector(self.theta.clone()),
            )]
            .into(),
            step: global,
            trial_id: self.trial.trial_id,
        })?;
        self.last_checkpoint = Some(path.clone());
        Ok(Some(Measurement::new(
            self.local_step,
            vec![Some(loss)],
            path,
        )))
    }
}

/// Retry policy for retryable service errors.
#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 5,
            backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn call<T>(
        &self,
        mut op: impl FnMut() -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let mut attempt = 1;
        loop {
            match op() {
                Err(e) if e.retryable() && attempt < self.attempts => {
                    warn!(attempt, error = %e, "retrying");
                    thread::sleep(self.backoff * attempt);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrialOutcome {
    Completed {
        final_checkpoint_path: String,
        measurements: usize,
    },
    /// Training failed; the trial was stopped.
    Failed { reason: String },
    /// The controller stopped the trial while it was running.
    Abandoned,
}

/// Trains `trial` to completion, reporting every measurement.
///
/// If the service stays unreachable past the retry policy the error is
/// returned and the trial is left pending for `recover_study`.
pub fn run_trial(
    service: &dyn TrialService,
    store: &dyn CheckpointStore,
    config: &StudyConfig,
    problem: &ToyProblemSpec,
    trial: Trial,
    retry: RetryPolicy,
) -> Result<TrialOutcome, WorkerError> {
    let study = config.study_id.as_str();
    let trial_id = trial.trial_id;
    let mut run = TrialRun::start(trial, config, problem, store)?;
    let mut count = 0;
    loop {
        let measurement = match run.next_measurement() {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(WorkerError::Diverged { step, .. }) => {
                warn!(study, trial = %trial_id, step, "diverged; stopping trial");
                retry.call(|| service.stop_trial(study, trial_id, StopReason::Requested))?;
                return Ok(TrialOutcome::Failed {
                    reason: format!("non-finite state at step {step}"),
                });
            }
            Err(e) => return Err(e),
        };
        match retry.call(|| service.report_measurement(study, trial_id, &measurement)) {
            Ok(_) => count += 1,
            Err(ServiceError::InvalidState(_)) => return Ok(TrialOutcome::Abandoned),
            Err(e) => return Err(e.into()),
        }
    }
    let path = run
        .last_checkpoint()
        .expect("a finished run saved a checkpoint")
        .to_string();
    match retry.call(|| service.complete_trial(study, trial_id, &path)) {
        Ok(_) => {}
        Err(ServiceError::InvalidState(_)) => return Ok(TrialOutcome::Abandoned),
        Err(e) => return Err(e.into()),
    }
    debug!(study, trial = %trial_id, "trial completed");
    Ok(TrialOutcome::Completed {
        final_checkpoint_path: path,
        measurements: count,
    })
}

/// Summary of a worker loop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorkerSummary {
    pub completed: usize,
    pub failed: usize,
    pub abandoned: usize,
}

/// Requests and trains trials until the study is complete.
///
/// `max_idle_polls` bounds consecutive defers; `None` waits indefinitely.
pub fn run_worker(
    service: &dyn TrialService,
    store: &dyn CheckpointStore,
    study_id: &str,
    problem: &ToyProblemSpec,
    worker_id: &str,
    retry: RetryPolicy,
    max_idle_polls: Option<u32>,
) -> Result<WorkerSummary, WorkerError> {
    let config = retry.call(|| service.get_study(study_id))?.config;
    let mut summary = WorkerSummary::default();
    let mut idle = 0;
    loop {
        match retry.call(|| service.request_trial(study_id, worker_id))? {
            TrialAssignment::Trial { trial } => {
                idle = 0;
                match run_trial(service, store, &config, problem, *trial, retry)? {
                    TrialOutcome::Completed { .. } => summary.completed += 1,
                    TrialOutcome::Failed { .. } => summary.failed += 1,
                    TrialOutcome::Abandoned => summary.abandoned += 1,
                }
            }
            TrialAssignment::Defer {
                study_complete: true,
                ..
            } => break,
            TrialAssignment::Defer { retry_after_ms, .. } => {
                idle += 1;
                if max_idle_polls.is_some_and(|m| idle > m) {
                    break;
                }
                thread::sleep(Duration::from_millis(retry_after_ms));
            }
        }
    }
    info!(
        study = study_id,
        worker = worker_id,
        ?summary,
        "worker finished"
    );
    Ok(summary)
}
