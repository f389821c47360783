//! Discrete-event simulation of a worker pool sharing one controller.
//!
//! Each worker trains at its own speed (steps per simulated time unit) and
//! pays a fixed overhead per trial. Training itself is real; only time is
//! simulated, so a run is deterministic for a given configuration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

use crate::evolution::DeferReason;
use crate::model::{StudyConfig, TrialId};
use crate::service::{ServiceError, StopReason, TrialAssignment, TrialService};

use super::checkpoint::CheckpointStore;
use super::run::{TrialRun, WorkerError};
use super::toy::ToyProblemSpec;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfig {
    /// Training speed of each worker in steps per time unit.
    pub speeds: Vec<f64>,
    /// Time spent setting up each trial before its first step.
    pub trial_overhead: f64,
    /// Workers stop taking trials once another one would exceed this many
    /// started steps.
    pub step_budget: Option<u64>,
    /// Abort after this many processed events, leaving trials pending.
    pub kill_after_events: Option<usize>,
    /// Ask the controller for early stops after every completion.
    pub poll_early_stops: bool,
}

impl ClusterConfig {
    pub fn homogeneous(workers: usize) -> Self {
        Self {
            speeds: vec![1.0; workers],
            trial_overhead: 0.0,
            step_budget: None,
            kill_after_events: None,
            poll_early_stops: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEventKind {
    Suggested {
        trial_id: TrialId,
        generation: u32,
        parent: Option<TrialId>,
        initiator: Option<TrialId>,
    },
    Deferred {
        reason: DeferReason,
    },
    Measured {
        trial_id: TrialId,
        step: u64,
        objective: Option<f64>,
        resource: u64,
    },
    Completed {
        trial_id: TrialId,
        generation: u32,
    },
    Failed {
        trial_id: TrialId,
    },
    Abandoned {
        trial_id: TrialId,
    },
    Retired,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimEvent {
    pub time: f64,
    pub worker: usize,
    #[serde(flatten)]
    pub kind: SimEventKind,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimReport {
    pub events: Vec<SimEvent>,
    /// Time of the last processed event.
    pub makespan: f64,
    pub steps_started: u64,
    /// Trainer steps covered by reported measurements.
    pub steps_reported: u64,
    pub killed: bool,
    /// Workers were left waiting with nothing scheduled.
    pub stalled: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Action {
    Request,
    Measure,
}

#[derive(Debug)]
struct Entry {
    time: f64,
    seq: u64,
    worker: usize,
    action: Action,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Reversed so the max-heap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

enum WorkerState<'a> {
    Idle,
    Waiting,
    Running(Box<TrialRun<'a>>),
    Retired,
}

struct Sim<'a> {
    service: &'a dyn TrialService,
    store: &'a dyn CheckpointStore,
    config: &'a StudyConfig,
    problem: &'a ToyProblemSpec,
    cluster: &'a ClusterConfig,
    queue: BinaryHeap<Entry>,
    seq: u64,
    workers: Vec<WorkerState<'a>>,
    report: SimReport,
}

impl<'a> Sim<'a> {
    fn schedule(&mut self, time: f64, worker: usize, action: Action) {
        self.seq += 1;
        self.queue.push(Entry {
            time,
            seq: self.seq,
            worker,
            action,
        });
    }

    fn log(&mut self, time: f64, worker: usize, kind: SimEventKind) {
        self.report.events.push(SimEvent { time, worker, kind });
    }

    fn step_time(&self, worker: usize) -> f64 {
        self.problem.eval_every as f64 / self.cluster.speeds[worker]
    }

    fn wake_waiting(&mut self, now: f64) {
        for w in 0..self.workers.len() {
            if matches!(self.workers[w], WorkerState::Waiting) {
                self.workers[w] = WorkerState::Idle;
                self.schedule(now, w, Action::Request);
            }
        }
    }

    fn release(&mut self, now: f64, worker: usize) -> Result<(), WorkerError> {
        self.workers[worker] = WorkerState::Idle;
        self.schedule(now, worker, Action::Request);
        self.wake_waiting(now);
        if self.cluster.poll_early_stops {
            self.service.poll_early_stops(&self.config.study_id)?;
        }
        Ok(())
    }

    fn request(&mut self, now: f64, worker: usize) -> Result<(), WorkerError> {
        let s = self.config.steps_per_trial;
        if self
            .cluster
            .step_budget
            .is_some_and(|b| self.report.steps_started + s > b)
        {
            self.workers[worker] = WorkerState::Retired;
            self.log(now, worker, SimEventKind::Retired);
            return Ok(());
        }
        let worker_id = format!("sim-{worker}");
        match self
            .service
            .request_trial(&self.config.study_id, &worker_id)?
        {
            TrialAssignment::Trial { trial } => {
                self.log(
                    now,
                    worker,
                    SimEventKind::Suggested {
                        trial_id: trial.trial_id,
                        generation: trial.generation,
                        parent: trial.parent_trial_id,
                        initiator: trial.initiator_parent_trial_id,
                    },
                );
                self.report.steps_started += s;
                let run = TrialRun::start(*trial, self.config, self.problem, self.store)?;
                self.workers[worker] = WorkerState::Running(Box::new(run));
                let at = now + self.cluster.trial_overhead + self.step_time(worker);
                self.schedule(at, worker, Action::Measure);
            }
            TrialAssignment::Defer {
                reason,
                study_complete,
                ..
            } => {
                self.log(now, worker, SimEventKind::Deferred { reason });
                if study_complete {
                    self.workers[worker] = WorkerState::Retired;
                    self.log(now, worker, SimEventKind::Retired);
                } else {
                    self.workers[worker] = WorkerState::Waiting;
                }
            }
        }
        Ok(())
    }

    fn measure(&mut self, now: f64, worker: usize) -> Result<(), WorkerError> {
        let WorkerState::Running(run) = &mut self.workers[worker] else {
            return Ok(());
        };
        let study = self.config.study_id.as_str();
        let trial_id = run.trial().trial_id;
        let generation = run.trial().generation;
        let measurement = match run.next_measurement() {
            Ok(Some(m)) => m,
            Ok(None) => unreachable!("finished runs are released"),
            Err(WorkerError::Diverged { .. }) => {
                self.service
                    .stop_trial(study, trial_id, StopReason::Requested)?;
                self.log(now, worker, SimEventKind::Failed { trial_id });
                return self.release(now, worker);
            }
            Err(e) => return Err(e),
        };
        let finished = run.is_finished();
        let final_path = run.last_checkpoint().map(str::to_string);
        match self
            .service
            .report_measurement(study, trial_id, &measurement)
        {
            Ok(_) => {}
            Err(ServiceError::InvalidState(_)) => {
                self.log(now, worker, SimEventKind::Abandoned { trial_id });
                return self.release(now, worker);
            }
            Err(e) => return Err(e.into()),
        }
        self.report.steps_reported += self.problem.eval_every;
        let objective = measurement.objectives.first().copied().flatten();
        let resource = self.report.steps_reported;
        self.log(
            now,
            worker,
            SimEventKind::Measured {
                trial_id,
                step: measurement.step,
                objective,
                resource,
            },
        );
        if finished {
            let path = final_path.expect("measured runs have a checkpoint");
            self.service.complete_trial(study, trial_id, &path)?;
            self.log(
                now,
                worker,
                SimEventKind::Completed {
                    trial_id,
                    generation,
                },
            );
            self.release(now, worker)
        } else {
            let at = now + self.step_time(worker);
            self.schedule(at, worker, Action::Measure);
            Ok(())
        }
    }
}

/// Runs workers against `service` until every worker retires, the study
/// stalls, or the kill switch fires.
pub fn simulate(
    service: &dyn TrialService,
    store: &dyn CheckpointStore,
    config: &StudyConfig,
    problem: &ToyProblemSpec,
    cluster: &ClusterConfig,
) -> Result<SimReport, WorkerError> {
    assert!(
        cluster.speeds.iter().all(|&s| s > 0.0),
        "worker speeds must be positive"
    );
    let mut sim = Sim {
        service,
        store,
        config,
        problem,
        cluster,
        queue: BinaryHeap::new(),
        seq: 0,
        workers: cluster.speeds.iter().map(|_| WorkerState::Idle).collect(),
        report: SimReport::default(),
    };
    for w in 0..cluster.speeds.len() {
        sim.schedule(0.0, w, Action::Request);
    }
    let mut processed = 0;
    while let Some(entry) = sim.queue.pop() {
        if cluster.kill_after_events.is_some_and(|k| processed >= k) {
            sim.report.killed = true;
            break;
        }
        processed += 1;
        sim.report.makespan = entry.time;
        match entry.action {
            Action::Request => sim.request(entry.time, entry.worker)?,
            Action::Measure => sim.measure(entry.time, entry.worker)?,
        }
    }
    sim.report.stalled = !sim.report.killed
        && sim
            .workers
            .iter()
            .any(|w| matches!(w, WorkerState::Waiting));
    Ok(sim.report)
}
