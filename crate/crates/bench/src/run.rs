//! Executing one seeded plan against an in-process controller and a
//! simulated worker pool.

use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use pbt_core::evolution::last_complete_generation;
use pbt_core::model::StudyConfig;
use pbt_core::service::{Controller, MemoryStore, ServiceError, TrialService};
use pbt_core::worker::{
    simulate, CheckpointError, MemoryCheckpointStore, SimEventKind, SimReport, WorkerError,
};
use pbt_core::{Trial, TrialId};

use crate::plan::{ExperimentPlan, Method, PlanError};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Worker(#[from] WorkerError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One evaluation seen during a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub trial_id: TrialId,
    /// Worker-steps consumed by the whole run when this was reported.
    pub resource: u64,
    /// Training steps along the trial's lineage.
    pub step: u64,
    pub objective: f64,
}

pub struct RunResult {
    pub plan: String,
    pub method: Method,
    pub seed: u64,
    pub config: StudyConfig,
    pub trials: Vec<Trial>,
    pub report: SimReport,
    pub checkpoints: Arc<MemoryCheckpointStore>,
}

impl RunResult {
    pub fn trial(&self, id: TrialId) -> Option<&Trial> {
        self.trials.iter().find(|t| t.trial_id == id)
    }

    /// Measurements in the order they were reported.
    pub fn points(&self) -> Vec<Point> {
        let mut generation = HashMap::new();
        let mut out = Vec::new();
        for e in &self.report.events {
            match &e.kind {
                SimEventKind::Suggested {
                    trial_id,
                    generation: g,
                    ..
                } => {
                    generation.insert(*trial_id, u64::from(*g));
                }
                SimEventKind::Measured {
                    trial_id,
                    step,
                    objective: Some(objective),
                    resource,
                } => out.push(Point {
                    trial_id: *trial_id,
                    resource: *resource,
                    step: generation[trial_id] * self.config.steps_per_trial + step,
                    objective: *objective,
                }),
                _ => {}
            }
        }
        out
    }

    /// Worker-steps consumed by the run.
    pub fn resource(&self) -> u64 {
        self.report.steps_reported
    }

    /// Generations holding at least `population_size` completed trials.
    pub fn complete_generations(&self) -> u32 {
        let lcg = last_complete_generation(&self.trials, self.config.population_size);
        (lcg + 1).max(0) as u32
    }

    /// Lineage step at the end of the last complete generation.
    pub fn final_step(&self) -> Option<u64> {
        let g = self.complete_generations();
        (g > 0).then(|| u64::from(g) * self.config.steps_per_trial)
    }

    /// Best objective among the models evaluated at `step`.
    pub fn best_at_step(&self, step: u64) -> Option<f64> {
        self.points()
            .iter()
            .filter(|p| p.step == step)
            .map(|p| p.objective)
            .min_by(f64::total_cmp)
    }

    /// Best objective among the models at the end of the last complete
    /// generation.
    pub fn final_objective(&self) -> Option<f64> {
        self.best_at_step(self.final_step()?)
    }

    /// Lowest objective reported with at most `resource` worker-steps spent.
    pub fn best_so_far(&self, resource: u64) -> Option<f64> {
        self.points()
            .iter()
            .filter(|p| p.resource <= resource)
            .map(|p| p.objective)
            .min_by(f64::total_cmp)
    }
}

/// Runs one seed of `plan`. A budget too small for a single round gives a
/// run without trials.
pub fn execute(plan: &ExperimentPlan, seed: u64) -> Result<RunResult, BenchError> {
    plan.validate()?;
    let config = plan.study_config(seed);
    let checkpoints = Arc::new(MemoryCheckpointStore::new());
    let mut result = RunResult {
        plan: plan.name.clone(),
        method: plan.method,
        seed,
        config,
        trials: Vec::new(),
        report: SimReport::default(),
        checkpoints,
    };
    if plan.shape().generations == 0 {
        return Ok(result);
    }
    let service = Controller::new(Arc::new(MemoryStore::new()));
    service.create_study(&result.config)?;
    result.report = simulate(
        &service,
        result.checkpoints.as_ref(),
        &result.config,
        &plan.problem,
        &plan.cluster(seed),
    )?;
    result.trials = service.list_trials(&result.config.study_id)?;
    Ok(result)
}
