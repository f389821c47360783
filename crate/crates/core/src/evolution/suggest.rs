use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{sample_hparams, HParams, StudyConfig, Trial, TrialId};

use super::selection::completed_in_generation;
use super::{
    binary_tournament, get_oldest_uninitiated, last_complete_generation, mutate, select_opponents,
    EvolutionError,
};

/// Who met whom in the tournament behind a child trial.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TournamentRecord {
    pub initiator: TrialId,
    pub opponent: Option<TrialId>,
    pub winner: TrialId,
    pub pool_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuggestionDecision {
    pub trial: Trial,
    /// Absent for generation-0 seeds.
    pub tournament: Option<TournamentRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeferReason {
    /// Nothing can start until more trials complete.
    AwaitingCompletions,
    /// The final generation is filled and nothing is pending.
    StudyComplete,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Suggestion {
    New(Box<SuggestionDecision>),
    Defer(DeferReason),
}

pub fn next_trial_id(trials: &[Trial]) -> TrialId {
    TrialId(trials.iter().map(|t| t.trial_id.0 + 1).max().unwrap_or(0))
}

/// True once no further trial can be suggested in a bounded study.
///
/// Under past- and same-generation selection this coincides with the final
/// generation holding `population_size` completed trials. Any-generation
/// selection can leave the final generation short, since children of old
/// winners land in earlier generations.
pub fn study_complete(trials: &[Trial], config: &StudyConfig) -> bool {
    config.max_generations.is_some()
        && last_complete_generation(trials, config.population_size) >= 0
        && !trials.iter().any(Trial::is_pending)
        && get_oldest_uninitiated(trials, config.max_generations).is_none()
}

/// Next generation-0 assignment: the first `initial_hparams` entry not yet
/// held by a live seed, then random samples.
fn seed_hparams<R: Rng + ?Sized>(trials: &[Trial], config: &StudyConfig, rng: &mut R) -> HParams {
    let mut live: Vec<&HParams> = trials
        .iter()
        .filter(|t| t.generation == 0 && !t.is_stopped())
        .map(|t| &t.hparams)
        .collect();
    for candidate in &config.initial_hparams {
        match live.iter().position(|h| *h == candidate) {
            Some(i) => {
                live.swap_remove(i);
            }
            None => return candidate.clone(),
        }
    }
    sample_hparams(&config.specs, rng)
}

/// Decides the next trial to run, or why none can start yet.
///
/// Generation 0 is filled with seeds first. After that, the oldest
/// uninitiated completed trial faces one random opponent and the winner's
/// mutated hyperparameters start the next generation from its checkpoint.
/// The caller must mark the initiator as having initiated reproduction.
pub fn get_new_suggestion<R: Rng + ?Sized>(
    trials: &[Trial],
    config: &StudyConfig,
    rng: &mut R,
) -> Result<Suggestion, EvolutionError> {
    let pop = config.population_size;
    let lcg = last_complete_generation(trials, pop);
    let next_id = next_trial_id(trials);

    if lcg < 0 {
        let live_seeds = trials
            .iter()
            .filter(|t| t.generation == 0 && !t.is_stopped())
            .count();
        if live_seeds >= pop as usize {
            return Ok(Suggestion::Defer(DeferReason::AwaitingCompletions));
        }
        let hparams = seed_hparams(trials, config, rng);
        let trial = Trial::seed(next_id, config.study_id.clone(), hparams);
        return Ok(Suggestion::New(Box::new(SuggestionDecision {
            trial,
            tournament: None,
        })));
    }

    if study_complete(trials, config) {
        return Ok(Suggestion::Defer(DeferReason::StudyComplete));
    }
    let Some(initiator) = get_oldest_uninitiated(trials, config.max_generations) else {
        return Ok(Suggestion::Defer(DeferReason::AwaitingCompletions));
    };
    // With nothing pending, the generation cannot grow any further.
    if config.budget_mode()
        && completed_in_generation(trials, initiator.generation) < pop as usize
        && trials.iter().any(Trial::is_pending)
    {
        return Ok(Suggestion::Defer(DeferReason::AwaitingCompletions));
    }

    let mut pool = select_opponents(
        initiator,
        trials,
        config.opponent_strategy,
        config.opponent_window_k,
    );
    if let Some(g) = config.max_generations {
        pool.retain(|t| t.generation + 1 < g);
    }
    let outcome = binary_tournament(
        initiator,
        &pool,
        config.fitness_mode,
        &config.objective_directions,
        rng,
    )?;
    let parent = outcome.parent;
    let checkpoint = parent
        .final_checkpoint_path
        .clone()
        .ok_or(EvolutionError::MissingCheckpoint(parent.trial_id))?;

    let mut child = Trial::seed(
        next_id,
        config.study_id.clone(),
        mutate(&parent.hparams, &config.specs, rng),
    );
    child.generation = parent.generation + 1;
    child.parent_trial_id = Some(parent.trial_id);
    child.initiator_parent_trial_id = Some(initiator.trial_id);
    child.warm_start_checkpoint_path = Some(checkpoint);

    let tournament = TournamentRecord {
        initiator: initiator.trial_id,
        opponent: outcome.opponent.map(|t| t.trial_id),
        winner: parent.trial_id,
        pool_size: pool.len(),
    };
    Ok(Suggestion::New(Box::new(SuggestionDecision {
        trial: child,
        tournament: Some(tournament),
    })))
}
