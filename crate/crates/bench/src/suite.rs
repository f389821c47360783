//! A suite file bundles the comparison plans with the follow-up experiments
//! that reuse them, and `run_suite` writes one CSV per experiment.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use pbt_core::model::OpponentStrategy;

use crate::experiments::{
    continue_training, opponent_ablation, run_comparison, scalability, schedule_rows,
    sensitivity_refs, AblationRow, Comparison, ContinueRow, ScaleRow, ScheduleRow, SemRow,
};
use crate::oracle::{log_grid, PhaseOracle};
use crate::plan::{ExperimentPlan, PlanError};
use crate::run::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinueSpec {
    pub plan: String,
    /// Worker-steps spent when the best model is picked.
    pub cut_resource: u64,
    pub extra_steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub plans: Vec<String>,
    /// Log-spaced constant learning rates swept for the oracle.
    pub oracle_lr_min: f64,
    pub oracle_lr_max: f64,
    pub oracle_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub plans: Vec<String>,
    pub levels: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilitySpec {
    pub base: ExperimentPlan,
    pub populations: Vec<u32>,
    pub workers: Vec<u32>,
    pub generations: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub base: ExperimentPlan,
    pub strategies: Vec<OpponentStrategy>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub comparison: Vec<ExperimentPlan>,
    #[serde(default)]
    pub continue_training: Option<ContinueSpec>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub sensitivity: Option<SensitivitySpec>,
    #[serde(default)]
    pub scalability: Option<ScalabilitySpec>,
    #[serde(default)]
    pub ablation: Option<AblationSpec>,
}

impl Suite {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn plan(&self, name: &str) -> Result<&ExperimentPlan, PlanError> {
        self.comparison
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| PlanError::Unsupported(format!("no comparison plan named {name}")))
    }
}

pub struct SuiteOutput {
    pub comparison: Comparison,
    pub continuation: Vec<ContinueRow>,
    pub schedule: Vec<ScheduleRow>,
    pub sem: Vec<SemRow>,
    pub scalability: Vec<ScaleRow>,
    pub ablation: Vec<AblationRow>,
}

pub fn run_suite(suite: &Suite, parallel: bool) -> Result<SuiteOutput, BenchError> {
    let comparison = run_comparison(&suite.comparison, parallel)?;

    let mut continuation = Vec::new();
    if let Some(spec) = &suite.continue_training {
        let plan = suite.plan(&spec.plan)?;
        for run in comparison.runs_of(&spec.plan) {
            continuation.extend(continue_training(
                run,
                &plan.problem,
                spec.cut_resource,
                spec.extra_steps,
            )?);
        }
    }

    let mut schedule = Vec::new();
    if let Some(spec) = &suite.schedule {
        for name in &spec.plans {
            let plan = suite.plan(name)?;
            let shape = plan.shape();
            let horizon = shape.steps_per_trial * u64::from(shape.generations);
            let lrs = log_grid(spec.oracle_lr_min, spec.oracle_lr_max, spec.oracle_points);
            for run in comparison.runs_of(name) {
                let oracle = PhaseOracle::sweep(&plan.problem, lrs.clone(), horizon, run.seed);
                schedule.extend(schedule_rows(run, &plan.problem, &oracle));
            }
        }
    }

    let mut sem = Vec::new();
    if let Some(spec) = &suite.sensitivity {
        let runs: Vec<_> = comparison
            .runs
            .iter()
            .filter(|r| spec.plans.contains(&r.plan))
            .collect();
        sem = sensitivity_refs(&runs, spec.levels)?;
    }

    let scale = match &suite.scalability {
        Some(s) => scalability(&s.base, &s.populations, &s.workers, s.generations, parallel)?,
        None => Vec::new(),
    };
    let ablation = match &suite.ablation {
        Some(a) => opponent_ablation(&a.base, &a.strategies, parallel)?.1,
        None => Vec::new(),
    };
    Ok(SuiteOutput {
        comparison,
        continuation,
        schedule,
        sem,
        scalability: scale,
        ablation,
    })
}

/// Writes one CSV per experiment into `dir`. Sections absent from the suite
/// leave an empty file.
pub fn write_csvs(out: &SuiteOutput, dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    write_rows(
        &dir.join("resource_curve.csv"),
        &out.comparison.resource_curve,
    )?;
    write_rows(&dir.join("step_curve.csv"), &out.comparison.step_curve)?;
    write_rows(&dir.join("continue.csv"), &out.continuation)?;
    write_rows(&dir.join("schedule.csv"), &out.schedule)?;
    write_rows(&dir.join("sem.csv"), &out.sem)?;
    write_rows(&dir.join("scalability.csv"), &out.scalability)?;
    write_rows(&dir.join("ablation.csv"), &out.ablation)?;
    Ok(())
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
