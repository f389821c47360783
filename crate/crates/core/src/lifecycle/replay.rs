//! Training replay: re-running a lineage with its recorded hyperparameters.

use std::collections::HashMap;

use crate::evolution::{next_trial_id, DeferReason, Suggestion, SuggestionDecision};
use crate::model::{Measurement, ReplayEntry, ReplayPlan, StudyConfig, Trial, TrialId};
use crate::service::{ServiceError, TrialService};

use super::{extract_dependency_graph, LifecycleError};

/// Builds the replay plan for `targets` of a source study.
pub fn build_replay_plan(
    source_study_id: &str,
    trials: &[Trial],
    targets: &[TrialId],
) -> Result<ReplayPlan, LifecycleError> {
    let graph = extract_dependency_graph(targets, trials)?;
    let by_id: HashMap<TrialId, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let entries = graph
        .execution_order
        .iter()
        .map(|id| {
            let t = by_id[id];
            ReplayEntry {
                source_trial_id: t.trial_id,
                source_parent_trial_id: t.parent_trial_id,
                generation: t.generation,
                hparams: t.hparams.clone(),
            }
        })
        .collect();
    Ok(ReplayPlan {
        source_study_id: source_study_id.to_string(),
        entries,
    })
}

/// Config of a replay study: the source config (including its seed) with a
/// new id and the plan attached.
pub fn replay_config(source: &StudyConfig, out_study_id: &str, plan: ReplayPlan) -> StudyConfig {
    let mut config = source.clone();
    config.study_id = out_study_id.to_string();
    config.replay = Some(plan);
    config
}

/// Creates a replay study for `targets` through `service`. Workers then run
/// it like any other study.
pub fn start_replay(
    service: &dyn TrialService,
    source_study_id: &str,
    targets: &[TrialId],
    out_study_id: &str,
) -> Result<StudyConfig, LifecycleError> {
    let source = service.get_study(source_study_id)?;
    let trials = service.list_trials(source_study_id)?;
    let plan = build_replay_plan(source_study_id, &trials, targets)?;
    let config = replay_config(&source.config, out_study_id, plan);
    service.create_study(&config)?;
    Ok(config)
}

fn live_by_source(trials: &[Trial]) -> HashMap<TrialId, &Trial> {
    trials
        .iter()
        .filter(|t| !t.is_stopped())
        .filter_map(|t| t.replay_of.map(|src| (src, t)))
        .collect()
}

/// True once every plan entry has a completed counterpart.
pub fn replay_complete(trials: &[Trial], plan: &ReplayPlan) -> bool {
    let live = live_by_source(trials);
    plan.entries.iter().all(|e| {
        live.get(&e.source_trial_id)
            .is_some_and(|t| t.is_completed())
    })
}

/// Next replay trial: the first plan entry without a live counterpart whose
/// parent counterpart has completed. Makes no random draws.
pub fn replay_suggestion(trials: &[Trial], config: &StudyConfig, plan: &ReplayPlan) -> Suggestion {
    let live = live_by_source(trials);
    for entry in &plan.entries {
        if live.contains_key(&entry.source_trial_id) {
            continue;
        }
        let mut trial = Trial::seed(
            next_trial_id(trials),
            config.study_id.clone(),
            entry.hparams.clone(),
        );
        trial.replay_of = Some(entry.source_trial_id);
        trial.generation = entry.generation;
        if let Some(src_parent) = entry.source_parent_trial_id {
            match live.get(&src_parent) {
                Some(p) if p.is_completed() => {
                    trial.parent_trial_id = Some(p.trial_id);
                    trial.warm_start_checkpoint_path = p.final_checkpoint_path.clone();
                }
                _ => continue,
            }
        }
        return Suggestion::New(Box::new(SuggestionDecision {
            trial,
            tournament: None,
        }));
    }
    if replay_complete(trials, plan) {
        Suggestion::Defer(DeferReason::StudyComplete)
    } else {
        Suggestion::Defer(DeferReason::AwaitingCompletions)
    }
}

/// First difference between source and replayed measurement logs, compared
/// on step and objectives. Checkpoint paths differ by construction.
pub fn replay_mismatch(source: &[Trial], replayed: &[Trial]) -> Option<String> {
    let src: HashMap<TrialId, &Trial> = source.iter().map(|t| (t.trial_id, t)).collect();
    let key = |m: &Measurement| {
        (
            m.step,
            m.objectives
                .iter()
                .map(|o| o.map(f64::to_bits))
                .collect::<Vec<_>>(),
        )
    };
    for r in replayed.iter().filter(|t| t.is_completed()) {
        let Some(of) = r.replay_of else {
            return Some(format!("trial {} is not a replay", r.trial_id));
        };
        let Some(s) = src.get(&of) else {
            return Some(format!("trial {} replays unknown {of}", r.trial_id));
        };
        let a: Vec<_> = s.measurements.iter().map(key).collect();
        let b: Vec<_> = r.measurements.iter().map(key).collect();
        if a != b {
            return Some(format!("trial {} differs from source {of}", r.trial_id));
        }
    }
    None
}

impl From<ServiceError> for LifecycleError {
    fn from(e: ServiceError) -> Self {
        LifecycleError::Service(e)
    }
}
