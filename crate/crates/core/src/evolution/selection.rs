//! Generation bookkeeping, initiator choice, opponent pools and the binary
//! tournament.

use rand::Rng;

use crate::model::{
    compare_fitness, Direction, FitnessMode, FitnessOrdering, OpponentStrategy, Trial,
};

use super::EvolutionError;

pub(crate) fn completed_in_generation(trials: &[Trial], generation: u32) -> usize {
    trials
        .iter()
        .filter(|t| t.is_completed() && t.generation == generation)
        .count()
}

/// Largest `g` such that every generation `0..=g` has at least
/// `population_size` completed trials; `-1` while generation 0 is incomplete.
pub fn last_complete_generation(trials: &[Trial], population_size: u32) -> i64 {
    let max_gen = trials.iter().map(|t| t.generation).max();
    let Some(max_gen) = max_gen else { return -1 };
    let mut counts = vec![0usize; max_gen as usize + 1];
    for t in trials.iter().filter(|t| t.is_completed()) {
        counts[t.generation as usize] += 1;
    }
    let mut last = -1;
    for (g, &c) in counts.iter().enumerate() {
        if c < population_size as usize {
            break;
        }
        last = g as i64;
    }
    last
}

/// Ordering key for "oldest": generation, then completion order, then id.
fn age_key(t: &Trial) -> (u32, u64, u64) {
    (
        t.generation,
        t.completion_index.unwrap_or(u64::MAX),
        t.trial_id.0,
    )
}

/// Oldest completed trial that has not initiated a reproduction.
///
/// With `max_generations` set, trials of the final generation never initiate.
pub fn get_oldest_uninitiated(trials: &[Trial], max_generations: Option<u32>) -> Option<&Trial> {
    trials
        .iter()
        .filter(|t| t.is_completed() && !t.initiated_reproduction)
        .filter(|t| max_generations.is_none_or(|g| t.generation + 1 < g))
        .min_by_key(|t| age_key(t))
}

/// Completed trials eligible to face `initiator`, in trial-id order.
pub fn select_opponents<'a>(
    initiator: &Trial,
    trials: &'a [Trial],
    strategy: OpponentStrategy,
    k: u32,
) -> Vec<&'a Trial> {
    let g = initiator.generation;
    let lo = g.saturating_sub(k.saturating_sub(1));
    trials
        .iter()
        .filter(|t| t.is_completed() && t.trial_id != initiator.trial_id)
        .filter(|t| match strategy {
            OpponentStrategy::PastGeneration => lo <= t.generation && t.generation <= g,
            OpponentStrategy::SameGeneration => t.generation == g,
            OpponentStrategy::AnyGeneration => true,
        })
        .collect()
}

/// Result of one binary tournament.
#[derive(Debug, Clone, Copy)]
pub struct TournamentOutcome<'a> {
    pub parent: &'a Trial,
    pub opponent: Option<&'a Trial>,
}

/// Initiator against one uniformly drawn opponent; ties and incomparable
/// fitness go to the initiator.
pub fn binary_tournament<'a, R: Rng + ?Sized>(
    initiator: &'a Trial,
    opponents: &[&'a Trial],
    mode: FitnessMode,
    directions: &[Direction],
    rng: &mut R,
) -> Result<TournamentOutcome<'a>, EvolutionError> {
    let own = initiator
        .fitness(directions)
        .ok_or(EvolutionError::NoMeasurements(initiator.trial_id))?;
    if opponents.is_empty() {
        return Ok(TournamentOutcome {
            parent: initiator,
            opponent: None,
        });
    }
    let opponent = opponents[rng.random_range(0..opponents.len())];
    let theirs = opponent
        .fitness(directions)
        .ok_or(EvolutionError::NoMeasurements(opponent.trial_id))?;
    let parent = match compare_fitness(&own, &theirs, mode)? {
        FitnessOrdering::BBetter => opponent,
        FitnessOrdering::ABetter | FitnessOrdering::Tied | FitnessOrdering::Incomparable => {
            initiator
        }
    };
    Ok(TournamentOutcome {
        parent,
        opponent: Some(opponent),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HParams, Measurement, TrialId, TrialStatus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn done(id: u64, generation: u32, completion: u64, loss: f64) -> Trial {
        let mut t = Trial::seed(TrialId(id), "s", HParams::new());
        t.generation = generation;
        if generation > 0 {
            t.parent_trial_id = Some(TrialId(0));
            t.warm_start_checkpoint_path = Some("p".into());
        }
        t.status = TrialStatus::Completed;
        t.completion_index = Some(completion);
        t.measurements
            .push(Measurement::new(10, vec![Some(loss)], format!("c{id}")));
        t.final_checkpoint_path = Some(format!("c{id}"));
        t
    }

    fn gen_counts(counts: &[usize]) -> Vec<Trial> {
        let mut out = Vec::new();
        let mut id = 0;
        for (g, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                out.push(done(id, g as u32, id, 1.0));
                id += 1;
            }
        }
        out
    }

    #[test]
    fn last_complete_generation_examples() {
        assert_eq!(last_complete_generation(&gen_counts(&[20]), 20), 0);
        assert_eq!(last_complete_generation(&gen_counts(&[19]), 20), -1);
        assert_eq!(last_complete_generation(&gen_counts(&[20, 20, 7]), 20), 1);
        assert_eq!(last_complete_generation(&[], 20), -1);
    }

    #[test]
    fn pending_trials_do_not_count_as_complete() {
        let mut trials = gen_counts(&[5]);
        trials[4].status = TrialStatus::Pending;
        assert_eq!(last_complete_generation(&trials, 5), -1);
    }

    #[test]
    fn oldest_uninitiated_examples() {
        let t1 = done(1, 0, 0, 1.0);
        let t2 = done(2, 0, 1, 1.0);
        assert_eq!(
            get_oldest_uninitiated(&[t1.clone(), t2.clone()], None)
                .unwrap()
                .trial_id,
            TrialId(1)
        );
        let mut t1i = t1.clone();
        t1i.initiated_reproduction = true;
        assert_eq!(
            get_oldest_uninitiated(&[t1i, t2], None).unwrap().trial_id,
            TrialId(2)
        );
        let t3 = done(3, 1, 0, 1.0);
        let t4 = done(4, 0, 5, 1.0);
        assert_eq!(
            get_oldest_uninitiated(&[t3, t4], None).unwrap().trial_id,
            TrialId(4)
        );
    }

    #[test]
    fn final_generation_never_initiates() {
        let trials = vec![done(1, 2, 0, 1.0)];
        assert!(get_oldest_uninitiated(&trials, Some(3)).is_none());
        assert!(get_oldest_uninitiated(&trials, Some(4)).is_some());
    }

    #[test]
    fn past_generation_window() {
        let trials: Vec<Trial> = (1..=4).map(|g| done(g as u64, g, 0, 1.0)).collect();
        let initiator = done(99, 3, 0, 1.0);
        let pool = select_opponents(&initiator, &trials, OpponentStrategy::PastGeneration, 2);
        let gens: Vec<u32> = pool.iter().map(|t| t.generation).collect();
        assert_eq!(gens, vec![2, 3]);
    }

    #[test]
    fn opponents_exclude_initiator() {
        let trials: Vec<Trial> = (0..3).map(|i| done(i, 0, i, 1.0)).collect();
        for strategy in [
            OpponentStrategy::PastGeneration,
            OpponentStrategy::SameGeneration,
            OpponentStrategy::AnyGeneration,
        ] {
            let pool = select_opponents(&trials[0], &trials, strategy, 2);
            assert!(pool.iter().all(|t| t.trial_id != trials[0].trial_id));
            assert_eq!(pool.len(), 2);
        }
    }

    #[test]
    fn any_generation_takes_every_other_completed_trial() {
        let mut trials: Vec<Trial> = (0..5).map(|g| done(g as u64, g, 0, 1.0)).collect();
        let mut pending = done(10, 1, 0, 1.0);
        pending.status = TrialStatus::Pending;
        trials.push(pending);
        let pool = select_opponents(&trials[2], &trials, OpponentStrategy::AnyGeneration, 2);
        let ids: Vec<u64> = pool.iter().map(|t| t.trial_id.0).collect();
        assert_eq!(ids, vec![0, 1, 3, 4]);
    }

    #[test]
    fn tournament_prefers_lower_loss() {
        let init = done(1, 0, 0, 0.5);
        let opp = done(2, 0, 1, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = binary_tournament(
            &init,
            &[&opp],
            FitnessMode::Priority,
            &[Direction::Minimize],
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.parent.trial_id, TrialId(2));
    }

    #[test]
    fn empty_pool_parent_is_initiator() {
        let init = done(1, 0, 0, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = binary_tournament(
            &init,
            &[],
            FitnessMode::Priority,
            &[Direction::Minimize],
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.parent.trial_id, TrialId(1));
        assert!(out.opponent.is_none());
    }

    #[test]
    fn ties_go_to_initiator() {
        let init = done(1, 0, 0, 0.5);
        let opp = done(2, 0, 1, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = binary_tournament(
            &init,
            &[&opp],
            FitnessMode::Priority,
            &[Direction::Minimize],
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.parent.trial_id, TrialId(1));
    }

    #[test]
    fn initiator_without_measurements_is_a_contract_violation() {
        let mut init = done(1, 0, 0, 0.5);
        init.measurements.clear();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = binary_tournament(
            &init,
            &[],
            FitnessMode::Priority,
            &[Direction::Minimize],
            &mut rng,
        );
        assert!(matches!(
            err,
            Err(EvolutionError::NoMeasurements(TrialId(1)))
        ));
    }

    /// Frequency oracle: with equal fitness, each of 3 opponents is drawn a third of the time.
    #[test]
    fn opponent_draw_is_uniform() {
        let init = done(0, 0, 0, 1.0);
        let opps: Vec<Trial> = (1..=3).map(|i| done(i, 0, i, 1.0)).collect();
        let refs: Vec<&Trial> = opps.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = [0usize; 3];
        let n = 10_000;
        for _ in 0..n {
            let out = binary_tournament(
                &init,
                &refs,
                FitnessMode::Priority,
                &[Direction::Minimize],
                &mut rng,
            )
            .unwrap();
            counts[out.opponent.unwrap().trial_id.0 as usize - 1] += 1;
        }
        for c in counts {
            let frac = c as f64 / n as f64;
            assert!((frac - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }
}
