//! The experiment protocols. Each returns plain rows; `output` writes them.

use std::collections::{BTreeMap, HashMap};
use std::thread;

use serde::Serialize;

use pbt_core::lifecycle::extract_dependency_graph;
use pbt_core::model::OpponentStrategy;
use pbt_core::worker::{toy_train_step, trainer_seed, CheckpointStore, ToyProblemSpec, THETA};
use pbt_core::{Trial, TrialId};

use crate::metrics::{linear_fit, mean, sem};
use crate::oracle::PhaseOracle;
use crate::plan::{ExperimentPlan, Method, PlanError, LR};
use crate::run::{execute, BenchError, RunResult};

/// Runs every seed of every plan, in parallel when asked. Results keep plan
/// and seed order either way.
pub fn run_all(plans: &[ExperimentPlan], parallel: bool) -> Result<Vec<RunResult>, BenchError> {
    let jobs: Vec<(&ExperimentPlan, u64)> = plans
        .iter()
        .flat_map(|p| p.seeds.iter().map(move |&s| (p, s)))
        .collect();
    if !parallel {
        return jobs.into_iter().map(|(p, s)| execute(p, s)).collect();
    }
    thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(p, s)| scope.spawn(move || execute(p, s)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench run panicked"))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResourceRow {
    pub plan: String,
    pub method: Method,
    pub seed: u64,
    pub resource: u64,
    /// Lineage steps behind the best model so far.
    pub step: u64,
    pub best_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRow {
    pub plan: String,
    pub method: Method,
    pub seed: u64,
    pub step: u64,
    /// Best model evaluated at exactly this lineage step.
    pub best_objective: f64,
    pub best_so_far: f64,
}

pub struct Comparison {
    pub runs: Vec<RunResult>,
    pub resource_curve: Vec<ResourceRow>,
    pub step_curve: Vec<StepRow>,
}

impl Comparison {
    pub fn runs_of<'a>(&'a self, plan: &'a str) -> impl Iterator<Item = &'a RunResult> + 'a {
        self.runs.iter().filter(move |r| r.plan == plan)
    }
}

/// Plans must share the problem and the resource budget.
pub fn check_comparable(plans: &[ExperimentPlan]) -> Result<(), PlanError> {
    let Some(first) = plans.first() else {
        return Ok(());
    };
    for p in &plans[1..] {
        let mismatch = |what| PlanError::Mismatched {
            a: first.name.clone(),
            b: p.name.clone(),
            what,
        };
        if p.total_resource_budget != first.total_resource_budget {
            return Err(mismatch("total_resource_budget"));
        }
        if p.problem != first.problem {
            return Err(mismatch("problem"));
        }
    }
    Ok(())
}

pub fn run_comparison(plans: &[ExperimentPlan], parallel: bool) -> Result<Comparison, BenchError> {
    check_comparable(plans)?;
    for p in plans {
        p.validate()?;
    }
    let runs = run_all(plans, parallel)?;
    let mut resource_curve = Vec::new();
    let mut step_curve = Vec::new();
    for run in &runs {
        resource_curve.extend(resource_rows(run));
        step_curve.extend(step_rows(run));
    }
    Ok(Comparison {
        runs,
        resource_curve,
        step_curve,
    })
}

/// Best-so-far objective after every evaluation of the run.
pub fn resource_rows(run: &RunResult) -> Vec<ResourceRow> {
    let mut best: Option<(f64, u64)> = None;
    run.points()
        .into_iter()
        .map(|p| {
            if best.is_none_or(|(b, _)| p.objective < b) {
                best = Some((p.objective, p.step));
            }
            let (best_objective, step) = best.expect("set above");
            ResourceRow {
                plan: run.plan.clone(),
                method: run.method,
                seed: run.seed,
                resource: p.resource,
                step,
                best_objective,
            }
        })
        .collect()
}

pub fn step_rows(run: &RunResult) -> Vec<StepRow> {
    let mut by_step: BTreeMap<u64, f64> = BTreeMap::new();
    for p in run.points() {
        let e = by_step.entry(p.step).or_insert(f64::INFINITY);
        *e = e.min(p.objective);
    }
    let mut so_far = f64::INFINITY;
    by_step
        .into_iter()
        .map(|(step, best_objective)| {
            so_far = so_far.min(best_objective);
            StepRow {
                plan: run.plan.clone(),
                method: run.method,
                seed: run.seed,
                step,
                best_objective,
                best_so_far: so_far,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinueRow {
    pub plan: String,
    pub seed: u64,
    pub source_trial: TrialId,
    pub lr: f64,
    pub step: u64,
    pub objective: f64,
    pub best_so_far: f64,
}

/// Takes the best model reported with at most `cut` worker-steps spent and
/// keeps training it on one worker with its hyperparameters frozen.
pub fn continue_training(
    run: &RunResult,
    problem: &ToyProblemSpec,
    cut: u64,
    extra_steps: u64,
) -> Result<Vec<ContinueRow>, BenchError> {
    let consumed = run.resource();
    if cut > consumed || cut == 0 {
        return Err(PlanError::InvalidCut { cut, consumed }.into());
    }
    let best = run
        .points()
        .into_iter()
        .filter(|p| p.resource <= cut)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .ok_or(PlanError::InvalidCut { cut, consumed })?;
    let trial = run
        .trial(best.trial_id)
        .expect("measured trials are listed");
    let local = best.step - u64::from(trial.generation) * run.config.steps_per_trial;
    let measurement = trial
        .measurements
        .iter()
        .find(|m| m.step == local)
        .expect("point comes from a reported measurement");
    let lr = trial.hparams[LR].as_f64().expect("lr is numeric");
    let checkpoint = run.checkpoints.read(&measurement.checkpoint_path)?;
    let mut theta = checkpoint.variables[THETA].values.clone();
    let seed = trainer_seed(run.config.seed, trial);
    let mut t = checkpoint.step;
    let mut so_far = f64::INFINITY;
    let mut rows = Vec::new();
    let every = problem.eval_every.max(1);
    for _ in 0..extra_steps / every {
        for _ in 0..every {
            toy_train_step(&mut theta, lr, t, problem, seed);
            t += 1;
        }
        let objective = problem.loss(&theta, t);
        so_far = so_far.min(objective);
        rows.push(ContinueRow {
            plan: run.plan.clone(),
            seed: run.seed,
            source_trial: trial.trial_id,
            lr,
            step: t,
            objective,
            best_so_far: so_far,
        });
    }
    Ok(rows)
}

/// One constant-hyperparameter stretch of a lineage.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub trial_id: TrialId,
    pub generation: u32,
    pub start_step: u64,
    pub end_step: u64,
    pub lr: f64,
}

/// Hyperparameter schedule that produced `target`: its ancestors from the
/// root down, each over the steps it trained. Empty when the lineage is
/// not fully recorded or the target has not completed.
pub fn extract_schedule(trials: &[Trial], target: TrialId, steps_per_trial: u64) -> Vec<Segment> {
    let by_id: HashMap<TrialId, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    if !by_id.get(&target).is_some_and(|t| t.is_completed()) {
        return Vec::new();
    }
    let Ok(graph) = extract_dependency_graph(&[target], trials) else {
        return Vec::new();
    };
    // The closure of one target is a chain, so execution order is root first.
    graph
        .execution_order
        .iter()
        .map(|id| {
            let t = by_id[id];
            let start = u64::from(t.generation) * steps_per_trial;
            Segment {
                trial_id: t.trial_id,
                generation: t.generation,
                start_step: start,
                end_step: start + steps_per_trial,
                lr: t.hparams[LR].as_f64().unwrap_or(f64::NAN),
            }
        })
        .collect()
}

/// Completed trial holding the run's final objective.
pub fn best_final_trial(run: &RunResult) -> Option<TrialId> {
    let step = run.final_step()?;
    run.points()
        .into_iter()
        .filter(|p| p.step == step)
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .map(|p| p.trial_id)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleRow {
    pub plan: String,
    pub seed: u64,
    pub trial_id: TrialId,
    pub generation: u32,
    pub start_step: u64,
    pub end_step: u64,
    pub lr: f64,
    /// Steady-state optimum of the phase the segment starts in.
    pub oracle_lr: f64,
    /// `max(lr, oracle) / min(lr, oracle)`.
    pub ratio: f64,
}

pub fn schedule_rows(
    run: &RunResult,
    problem: &ToyProblemSpec,
    oracle: &PhaseOracle,
) -> Vec<ScheduleRow> {
    let Some(target) = best_final_trial(run) else {
        return Vec::new();
    };
    extract_schedule(&run.trials, target, run.config.steps_per_trial)
        .into_iter()
        .map(|s| {
            let oracle_lr = oracle.phase_optimal_lr(problem, s.start_step);
            ScheduleRow {
                plan: run.plan.clone(),
                seed: run.seed,
                trial_id: s.trial_id,
                generation: s.generation,
                start_step: s.start_step,
                end_step: s.end_step,
                lr: s.lr,
                oracle_lr,
                ratio: s.lr.max(oracle_lr) / s.lr.min(oracle_lr),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SemMetric {
    /// Lowest objective reported within the resource level.
    BestSoFar,
    /// Best model at the end of the last complete generation.
    FinalObjective,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SemRow {
    pub plan: String,
    pub method: Method,
    pub metric: SemMetric,
    pub resource: u64,
    pub runs: usize,
    pub mean: f64,
    pub sem: f64,
}

/// Run-to-run spread per plan at `levels` evenly spaced resource levels,
/// plus the final objective at the last level.
pub fn sensitivity(runs: &[RunResult], levels: u32) -> Result<Vec<SemRow>, BenchError> {
    sensitivity_refs(&runs.iter().collect::<Vec<_>>(), levels)
}

pub fn sensitivity_refs(runs: &[&RunResult], levels: u32) -> Result<Vec<SemRow>, BenchError> {
    let mut plans: Vec<&str> = Vec::new();
    for r in runs {
        if !plans.contains(&r.plan.as_str()) {
            plans.push(&r.plan);
        }
    }
    let mut rows = Vec::new();
    for plan in plans {
        let group: Vec<&RunResult> = runs.iter().copied().filter(|r| r.plan == plan).collect();
        if group.len() < 2 {
            return Err(PlanError::Unsupported(format!(
                "sensitivity of {plan} needs at least two repeats"
            ))
            .into());
        }
        let method = group[0].method;
        let total = group.iter().map(|r| r.resource()).min().unwrap_or(0);
        let mut push = |metric, resource, values: Vec<f64>| {
            if values.len() == group.len() {
                rows.push(SemRow {
                    plan: plan.to_string(),
                    method,
                    metric,
                    resource,
                    runs: values.len(),
                    mean: mean(&values),
                    sem: sem(&values),
                });
            }
        };
        for k in 1..=levels.max(1) {
            let level = total * u64::from(k) / u64::from(levels.max(1));
            let values = group.iter().filter_map(|r| r.best_so_far(level)).collect();
            push(SemMetric::BestSoFar, level, values);
        }
        let finals = group.iter().filter_map(|r| r.final_objective()).collect();
        push(SemMetric::FinalObjective, total, finals);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleRow {
    pub population: u32,
    pub workers: u32,
    pub seed: u64,
    pub generations: u32,
    pub makespan: f64,
    pub worker_steps: u64,
    pub generations_per_time: f64,
    pub generations_per_worker_step: f64,
    pub worker_steps_per_generation: f64,
}

/// Throughput over a grid of population sizes and worker counts. Every run
/// trains `base` until `generations` generations are complete.
pub fn scalability(
    base: &ExperimentPlan,
    populations: &[u32],
    workers: &[u32],
    generations: u32,
    parallel: bool,
) -> Result<Vec<ScaleRow>, BenchError> {
    let mut plans = Vec::new();
    for &pop in populations {
        for &w in workers {
            let mut p = base.clone();
            p.method = Method::Pbt;
            p.name = format!("{}-p{pop}-w{w}", base.name);
            p.population_size = pop;
            p.worker_budget = w;
            p.max_generations = Some(generations);
            p.total_resource_budget = u64::MAX;
            plans.push(p);
        }
    }
    let runs = run_all(&plans, parallel)?;
    Ok(runs
        .iter()
        .map(|run| {
            let pop = run.config.population_size;
            let generations = run.complete_generations();
            let g = f64::from(generations.max(1));
            let steps = run.resource();
            ScaleRow {
                population: pop,
                workers: plans
                    .iter()
                    .find(|p| p.name == run.plan)
                    .map_or(0, |p| p.worker_budget),
                seed: run.seed,
                generations,
                makespan: run.report.makespan,
                worker_steps: steps,
                generations_per_time: f64::from(generations) / run.report.makespan,
                generations_per_worker_step: f64::from(generations) / steps as f64,
                worker_steps_per_generation: steps as f64 / g,
            }
        })
        .collect())
}

/// Coefficient of determination of generations per time against workers,
/// for one population size.
pub fn worker_scaling_r2(rows: &[ScaleRow], population: u32) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.population == population)
        .map(|r| (f64::from(r.workers), r.generations_per_time))
        .collect();
    linear_fit(&pts).map(|f| f.r2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub strategy: OpponentStrategy,
    pub seed: u64,
    pub final_objective: f64,
    pub trials: usize,
}

/// Matched-seed runs of `base` that differ only in opponent strategy.
pub fn opponent_ablation(
    base: &ExperimentPlan,
    strategies: &[OpponentStrategy],
    parallel: bool,
) -> Result<(Vec<RunResult>, Vec<AblationRow>), BenchError> {
    let plans: Vec<ExperimentPlan> = strategies
        .iter()
        .map(|&s| {
            let mut p = base.clone();
            p.opponent_strategy = s;
            p.name = format!("{}-{}", base.name, strategy_name(s));
            p
        })
        .collect();
    let runs = run_all(&plans, parallel)?;
    let rows = runs
        .iter()
        .map(|r| AblationRow {
            strategy: r.config.opponent_strategy,
            seed: r.seed,
            final_objective: r.final_objective().unwrap_or(f64::NAN),
            trials: r.trials.len(),
        })
        .collect();
    Ok((runs, rows))
}

pub fn strategy_name(s: OpponentStrategy) -> &'static str {
    match s {
        OpponentStrategy::PastGeneration => "past_generation",
        OpponentStrategy::SameGeneration => "same_generation",
        OpponentStrategy::AnyGeneration => "any_generation",
    }
}
