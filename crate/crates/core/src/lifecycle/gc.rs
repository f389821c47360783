//! Checkpoint garbage collection.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::evolution::{last_complete_generation, study_complete};
use crate::model::{OpponentStrategy, StudyConfig, Trial, TrialId};
use crate::worker::CheckpointStore;

use super::replay_complete;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct GcReport {
    pub dry_run: bool,
    /// Deleted, or that would be deleted in a dry run.
    pub deleted: Vec<String>,
    pub retained: Vec<String>,
    pub errors: Vec<String>,
    /// Set when some deletion failed and a rerun may succeed.
    pub retryable: bool,
}

/// Completed trials whose final checkpoint may still seed a child.
///
/// A future tournament is started by a trial that is pending, has not yet
/// initiated, or has a pending child it initiated (it initiates again if
/// that child is stopped). Let `g_low` be the lowest generation among them,
/// or 0 while seed slots remain. Under past-generation selection with
/// `k <= 2` children never fall below their initiator's generation, so any
/// trial below `g_low - k + 1` is out of every future window.
pub fn retained_finals(config: &StudyConfig, trials: &[Trial]) -> BTreeSet<TrialId> {
    let completed = trials.iter().filter(|t| t.is_completed());
    if let Some(plan) = &config.replay {
        if replay_complete(trials, plan) {
            return BTreeSet::new();
        }
        return completed.map(|t| t.trial_id).collect();
    }
    if study_complete(trials, config) {
        return BTreeSet::new();
    }
    let can_initiate = |t: &&Trial| config.max_generations.is_none_or(|g| t.generation + 1 < g);
    let seeds_open = last_complete_generation(trials, config.population_size) < 0;
    let pending_initiators: BTreeSet<TrialId> = trials
        .iter()
        .filter(|t| t.is_pending())
        .filter_map(|t| t.initiator_parent_trial_id)
        .collect();
    let g_low = trials
        .iter()
        .filter(|t| {
            t.is_pending()
                || (t.is_completed() && !t.initiated_reproduction)
                || pending_initiators.contains(&t.trial_id)
        })
        .map(|t| t.generation)
        .chain(seeds_open.then_some(0))
        .min();
    let Some(g_low) = g_low else {
        return BTreeSet::new();
    };
    let k = config.opponent_window_k;
    let lower = match config.opponent_strategy {
        OpponentStrategy::SameGeneration => g_low,
        OpponentStrategy::PastGeneration if k <= 2 => g_low.saturating_sub(k.saturating_sub(1)),
        OpponentStrategy::PastGeneration | OpponentStrategy::AnyGeneration => 0,
    };
    completed
        .filter(can_initiate)
        .filter(|t| t.generation >= lower)
        .map(|t| t.trial_id)
        .collect()
}

/// Deletes evaluated checkpoints that no trial can need again.
///
/// Never deleted: unevaluated checkpoints, warm-start sources of pending
/// trials, the newest checkpoint of a pending trial (it may become its
/// final one), finals of trials that can still parent, and with
/// `keep_final` every completed trial's final checkpoint.
pub fn garbage_collect(
    config: &StudyConfig,
    trials: &[Trial],
    store: &dyn CheckpointStore,
    keep_final: bool,
    dry_run: bool,
) -> GcReport {
    let mut protected: BTreeSet<&str> = BTreeSet::new();
    let parents = retained_finals(config, trials);
    for t in trials {
        if t.is_pending() {
            protected.extend(t.warm_start_checkpoint_path.as_deref());
            protected.extend(t.measurements.last().map(|m| m.checkpoint_path.as_str()));
        }
        if t.is_completed() && (keep_final || parents.contains(&t.trial_id)) {
            protected.extend(t.final_checkpoint_path.as_deref());
        }
    }
    let evaluated: BTreeSet<&str> = trials
        .iter()
        .flat_map(|t| t.measurements.iter().map(|m| m.checkpoint_path.as_str()))
        .collect();

    let mut report = GcReport {
        dry_run,
        ..GcReport::default()
    };
    let existing = match store.list(&config.study_id) {
        Ok(paths) => paths,
        Err(e) => {
            report.errors.push(e.to_string());
            report.retryable = true;
            return report;
        }
    };
    for path in existing {
        if !evaluated.contains(path.as_str()) || protected.contains(path.as_str()) {
            report.retained.push(path);
            continue;
        }
        if dry_run {
            report.deleted.push(path);
            continue;
        }
        match store.delete(&path) {
            Ok(_) => report.deleted.push(path),
            Err(e) => {
                report.errors.push(format!("{path}: {e}"));
                report.retryable = true;
            }
        }
    }
    report
}
