//! Acceptance suite. Each test checks one exit criterion and prints a single
//! PASS/FAIL line before asserting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pbt_bench::experiments::{
    opponent_ablation, run_comparison, scalability, worker_scaling_r2, Comparison,
};
use pbt_bench::metrics::{median, sem};
use pbt_bench::{RunResult, Suite};
use pbt_core::evolution::{binary_tournament, mutate, select_opponents};
use pbt_core::lifecycle::{garbage_collect, start_replay};
use pbt_core::model::{Direction, FitnessMode, OpponentStrategy, Scale};
use pbt_core::service::{
    Controller, FileStore, MemoryStore, TrialAssignment, TrialList, TrialService, TrialStore,
    WireRequest, WireResponse,
};
use pbt_core::worker::{
    checkpoint_path, simulate, Checkpoint, CheckpointStore, ClusterConfig, MemoryCheckpointStore,
    SimEventKind, ToyProblemSpec,
};
use pbt_core::{
    HParams, Measurement, ParamValue, ParameterSpec, StudyConfig, Trial, TrialId, TrialStatus,
};

const PLANS: &str = include_str!("../plans/toy.json");

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("{tag} criterion {n:>2} ({title}): {detail}");
    assert!(ok, "criterion {n} ({title}) failed: {detail}");
}

const STRATEGIES: [OpponentStrategy; 3] = [
    OpponentStrategy::PastGeneration,
    OpponentStrategy::SameGeneration,
    OpponentStrategy::AnyGeneration,
];

// ---------------------------------------------------------------------------
// Reference model of the reproduction loop, written against raw rand calls.

const LR_BOUNDS: [f64; 2] = [1e-4, 1e-1];

#[derive(Clone, Debug)]
struct RefTrial {
    id: u64,
    generation: u32,
    parent: Option<u64>,
    initiator: Option<u64>,
    lr: f64,
    completed: bool,
    loss: f64,
    completion: u64,
    initiated: bool,
}

#[derive(Debug, PartialEq)]
enum RefDecision {
    Trial {
        id: u64,
        generation: u32,
        parent: Option<u64>,
        initiator: Option<u64>,
        lr: f64,
    },
    Wait,
    Done,
}

struct Reference {
    population: usize,
    workers: usize,
    generations: u32,
    strategy: OpponentStrategy,
    trials: Vec<RefTrial>,
    completions: u64,
    rng: ChaCha8Rng,
}

impl Reference {
    fn new(config: &StudyConfig) -> Self {
        Self {
            population: config.population_size as usize,
            workers: config.worker_budget as usize,
            generations: config.max_generations.expect("bounded"),
            strategy: config.opponent_strategy,
            trials: Vec::new(),
            completions: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }

    fn completed_in(&self, g: u32) -> usize {
        self.trials
            .iter()
            .filter(|t| t.completed && t.generation == g)
            .count()
    }

    fn last_complete_generation(&self) -> i64 {
        let mut g = 0;
        while self.completed_in(g) >= self.population {
            g += 1;
        }
        i64::from(g) - 1
    }

    fn request(&mut self) -> RefDecision {
        let id = self.trials.len() as u64;
        let lcg = self.last_complete_generation();
        if lcg < 0 {
            if self.trials.iter().filter(|t| t.generation == 0).count() >= self.population {
                return RefDecision::Wait;
            }
            let u: f64 = self.rng.random();
            let (lo, hi) = (LR_BOUNDS[0].ln(), LR_BOUNDS[1].ln());
            let lr = (lo + u * (hi - lo)).exp().clamp(LR_BOUNDS[0], LR_BOUNDS[1]);
            self.push(id, 0, None, None, lr);
            return RefDecision::Trial {
                id,
                generation: 0,
                parent: None,
                initiator: None,
                lr,
            };
        }
        let last = self.generations;
        let any_pending = self.trials.iter().any(|t| !t.completed);
        let initiator = self
            .trials
            .iter()
            .filter(|t| t.completed && !t.initiated && t.generation + 1 < last)
            .min_by_key(|t| (t.generation, t.completion, t.id))
            .cloned();
        let Some(init) = initiator else {
            return if any_pending {
                RefDecision::Wait
            } else {
                RefDecision::Done
            };
        };
        if self.workers < self.population
            && self.completed_in(init.generation) < self.population
            && any_pending
        {
            return RefDecision::Wait;
        }
        let g = init.generation;
        let pool: Vec<RefTrial> = self
            .trials
            .iter()
            .filter(|t| t.completed && t.id != init.id && t.generation + 1 < last)
            .filter(|t| match self.strategy {
                OpponentStrategy::PastGeneration => t.generation + 1 >= g && t.generation <= g,
                OpponentStrategy::SameGeneration => t.generation == g,
                OpponentStrategy::AnyGeneration => true,
            })
            .cloned()
            .collect();
        let parent = if pool.is_empty() {
            init.clone()
        } else {
            let opponent = pool[self.rng.random_range(0..pool.len())].clone();
            if opponent.loss < init.loss {
                opponent
            } else {
                init.clone()
            }
        };
        let factor = if self.rng.random_bool(0.5) { 1.2 } else { 0.8 };
        let lr = (parent.lr * factor).clamp(LR_BOUNDS[0], LR_BOUNDS[1]);
        let generation = parent.generation + 1;
        self.trials
            .iter_mut()
            .find(|t| t.id == init.id)
            .unwrap()
            .initiated = true;
        self.push(id, generation, Some(parent.id), Some(init.id), lr);
        RefDecision::Trial {
            id,
            generation,
            parent: Some(parent.id),
            initiator: Some(init.id),
            lr,
        }
    }

    fn push(
        &mut self,
        id: u64,
        generation: u32,
        parent: Option<u64>,
        initiator: Option<u64>,
        lr: f64,
    ) {
        self.trials.push(RefTrial {
            id,
            generation,
            parent,
            initiator,
            lr,
            completed: false,
            loss: f64::NAN,
            completion: u64::MAX,
            initiated: false,
        });
    }

    fn complete(&mut self, id: u64, loss: f64) {
        let t = &mut self.trials[id as usize];
        t.completed = true;
        t.loss = loss;
        t.completion = self.completions;
        self.completions += 1;
    }
}

fn observed(a: &TrialAssignment) -> RefDecision {
    match a {
        TrialAssignment::Trial { trial } => RefDecision::Trial {
            id: trial.trial_id.0,
            generation: trial.generation,
            parent: trial.parent_trial_id.map(|p| p.0),
            initiator: trial.initiator_parent_trial_id.map(|p| p.0),
            lr: trial.hparams["lr"].as_f64().unwrap(),
        },
        TrialAssignment::Defer {
            study_complete: true,
            ..
        } => RefDecision::Done,
        TrialAssignment::Defer { .. } => RefDecision::Wait,
    }
}

// ---------------------------------------------------------------------------
// Scripted schedules shared by the conformance and restart checks.

fn schedule(i: u64) -> (StudyConfig, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5c4e_d01e ^ i);
    let mut c = StudyConfig::new(
        format!("sched-{i}"),
        vec![ParameterSpec::float(
            "lr",
            LR_BOUNDS[0],
            LR_BOUNDS[1],
            Scale::Log,
        )],
        5,
    );
    c.worker_budget = rng.random_range(1..=5);
    c.opponent_strategy = STRATEGIES[rng.random_range(0..3)];
    c.max_generations = Some(3);
    c.steps_per_trial = 10;
    c.seed = rng.random();
    c.defer_retry_ms = 0;
    (c, rng.random())
}

type Call<'a> = dyn FnMut(WireRequest) -> WireResponse + 'a;

struct Transcript {
    responses: Vec<Vec<u8>>,
    trials: Vec<Trial>,
    decisions: usize,
}

fn exchange(call: &mut Call<'_>, out: &mut Vec<Vec<u8>>, request: WireRequest) -> WireResponse {
    let response = call(request);
    out.push(serde_json::to_vec(&response).unwrap());
    response
}

/// Drives a study with `worker_budget` simulated workers. Request/complete
/// choices and losses come from `script_seed`; losses are coarse so ties occur.
fn drive(
    config: &StudyConfig,
    script_seed: u64,
    call: &mut Call<'_>,
    mut reference: Option<&mut Reference>,
) -> Result<Transcript, String> {
    let mut script = ChaCha8Rng::seed_from_u64(script_seed);
    let study_id = config.study_id.clone();
    let mut out = Vec::new();
    let mut decisions = 0;
    exchange(
        call,
        &mut out,
        WireRequest::CreateStudy {
            config: config.clone(),
        },
    )
    .into_result::<serde_json::Value>()
    .map_err(|e| e.to_string())?;
    let workers = config.worker_budget as usize;
    let mut running: Vec<(TrialId, u32)> = Vec::new();
    loop {
        if decisions > 10_000 {
            return Err("script did not terminate".into());
        }
        if running.is_empty() || (running.len() < workers && script.random_bool(0.5)) {
            let request = WireRequest::RequestTrial {
                study_id: study_id.clone(),
                worker_id: format!("w{}", running.len()),
            };
            let assignment: TrialAssignment = exchange(call, &mut out, request)
                .into_result()
                .map_err(|e| e.to_string())?;
            decisions += 1;
            let got = observed(&assignment);
            if let Some(r) = reference.as_deref_mut() {
                let want = r.request();
                if want != got {
                    return Err(format!(
                        "decision {decisions}: expected {want:?}, got {got:?}"
                    ));
                }
            }
            match got {
                RefDecision::Trial { id, generation, .. } => {
                    running.push((TrialId(id), generation))
                }
                RefDecision::Done => break,
                RefDecision::Wait if running.is_empty() => {
                    return Err(format!(
                        "decision {decisions}: deferred with nothing running"
                    ))
                }
                RefDecision::Wait => {}
            }
            continue;
        }
        let (trial_id, generation) = running.swap_remove(script.random_range(0..running.len()));
        let loss = f64::from(script.random_range(0..6u32)) / 6.0;
        let path = checkpoint_path(
            &study_id,
            trial_id,
            u64::from(generation + 1) * config.steps_per_trial,
        );
        exchange(
            call,
            &mut out,
            WireRequest::ReportMeasurement {
                study_id: study_id.clone(),
                trial_id,
                measurement: Measurement::new(
                    config.steps_per_trial,
                    vec![Some(loss)],
                    path.clone(),
                ),
            },
        )
        .into_result::<serde_json::Value>()
        .map_err(|e| e.to_string())?;
        exchange(
            call,
            &mut out,
            WireRequest::CompleteTrial {
                study_id: study_id.clone(),
                trial_id,
                final_checkpoint_path: path,
            },
        )
        .into_result::<serde_json::Value>()
        .map_err(|e| e.to_string())?;
        if let Some(r) = reference.as_deref_mut() {
            r.complete(trial_id.0, loss);
        }
    }
    let trials = exchange(call, &mut out, WireRequest::ListTrials { study_id })
        .into_result::<TrialList>()
        .map_err(|e| e.to_string())?
        .trials;
    if let Some(r) = reference {
        if r.trials.len() != trials.len() {
            return Err(format!(
                "{} trials, reference has {}",
                trials.len(),
                r.trials.len()
            ));
        }
        for (t, want) in trials.iter().zip(&r.trials) {
            let same = t.trial_id.0 == want.id
                && t.generation == want.generation
                && t.parent_trial_id.map(|p| p.0) == want.parent
                && t.initiator_parent_trial_id.map(|p| p.0) == want.initiator
                && t.is_completed() == want.completed
                && t.initiated_reproduction == want.initiated
                && t.hparams["lr"].as_f64() == Some(want.lr);
            if !same {
                return Err(format!(
                    "final state of trial {} differs: {t:?} vs {want:?}",
                    t.trial_id
                ));
            }
        }
    }
    Ok(Transcript {
        responses: out,
        trials,
        decisions,
    })
}

fn memory_call(controller: &Controller) -> impl FnMut(WireRequest) -> WireResponse + '_ {
    move |req| controller.handle(req)
}

#[test]
fn criterion_01_reproduction_loop_matches_reference() {
    let started = Instant::now();
    let controller = Controller::new(Arc::new(MemoryStore::new()));
    let mut failures = Vec::new();
    let mut decisions = 0;
    for i in 0..1000 {
        let (config, script) = schedule(i);
        let mut reference = Reference::new(&config);
        match drive(
            &config,
            script,
            &mut memory_call(&controller),
            Some(&mut reference),
        ) {
            Ok(t) => decisions += t.decisions,
            Err(e) => failures.push(format!("schedule {i}: {e}")),
        }
    }
    let elapsed = started.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(10);
    verdict(
        1,
        "reproduction loop conformance",
        ok,
        &format!(
            "1000 schedules, {decisions} decisions, {} mismatches, {:.2}s (limit 10s){}",
            failures.len(),
            elapsed.as_secs_f64(),
            failures
                .first()
                .map(|f| format!("; first: {f}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

fn random_trials(rng: &mut ChaCha8Rng) -> Vec<Trial> {
    let n = rng.random_range(2..30);
    (0..n)
        .map(|i| {
            let mut t = Trial::seed(TrialId(i), "s", HParams::new());
            t.generation = rng.random_range(0..6);
            if t.generation > 0 {
                t.parent_trial_id = Some(TrialId(0));
                t.warm_start_checkpoint_path = Some("p".into());
            }
            if rng.random_bool(0.85) {
                t.status = TrialStatus::Completed;
                t.completion_index = Some(rng.random_range(0..100));
                let loss = f64::from(rng.random_range(0..10u32));
                t.measurements
                    .push(Measurement::new(1, vec![Some(loss)], format!("c{i}")));
                t.final_checkpoint_path = Some(format!("c{i}"));
            }
            t
        })
        .collect()
}

fn mutation_violation(rng: &mut ChaCha8Rng) -> Option<String> {
    let lo: f64 = rng.random_range(1e-6..1.0);
    let hi = lo * rng.random_range(1.5..1e4);
    let values: Vec<f64> = {
        let mut v: Vec<f64> = (0..rng.random_range(1..8))
            .map(|_| f64::from(rng.random_range(0..100u32)))
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let ilo: i64 = rng.random_range(-5..5);
    let ihi = ilo + rng.random_range(1..6);
    let specs = vec![
        ParameterSpec::float("log", lo, hi, Scale::Log),
        ParameterSpec::float("lin", lo, hi, Scale::Linear),
        ParameterSpec::discrete("d", values.clone()),
        ParameterSpec::integer("i", ilo, ihi),
    ];
    let pick = |rng: &mut ChaCha8Rng| {
        // Bias towards the bounds so clamping is exercised.
        match rng.random_range(0..4) {
            0 => lo,
            1 => hi,
            _ => rng.random_range(lo..=hi),
        }
    };
    let parent = HParams::from([
        ("log".to_string(), ParamValue::Float(pick(rng))),
        ("lin".to_string(), ParamValue::Float(pick(rng))),
        (
            "d".to_string(),
            ParamValue::Float(values[rng.random_range(0..values.len())]),
        ),
        (
            "i".to_string(),
            ParamValue::Int(rng.random_range(ilo..=ihi)),
        ),
    ]);
    let child = mutate(&parent, &specs, rng);
    for name in ["log", "lin"] {
        let p = parent[name].as_f64().unwrap();
        let c = child[name].as_f64().unwrap();
        let allowed = [(p * 0.8).clamp(lo, hi), (p * 1.2).clamp(lo, hi)];
        if !(lo..=hi).contains(&c) || !allowed.contains(&c) {
            return Some(format!("{name}: {p} -> {c} not in {allowed:?}"));
        }
    }
    let idx = |v: f64| values.iter().position(|&x| x == v);
    match (
        idx(parent["d"].as_f64().unwrap()),
        child["d"].as_f64().and_then(idx),
    ) {
        (Some(a), Some(b)) if a.abs_diff(b) <= 1 => {}
        other => return Some(format!("discrete move {other:?} over {values:?}")),
    }
    match (&parent["i"], &child["i"]) {
        (ParamValue::Int(a), ParamValue::Int(b))
            if a.abs_diff(*b) <= 1 && (ilo..=ihi).contains(b) => {}
        other => return Some(format!("integer move {other:?}")),
    }
    None
}

fn tournament_violation(rng: &mut ChaCha8Rng) -> Option<String> {
    let trials = random_trials(rng);
    let candidates: Vec<&Trial> = trials.iter().filter(|t| t.is_completed()).collect();
    if candidates.is_empty() {
        return None;
    }
    let initiator = candidates[rng.random_range(0..candidates.len())];
    let g = initiator.generation;
    let pool = select_opponents(initiator, &trials, OpponentStrategy::PastGeneration, 2);
    let window: BTreeSet<TrialId> = trials
        .iter()
        .filter(|t| t.is_completed() && t.trial_id != initiator.trial_id)
        .filter(|t| t.generation + 1 >= g && t.generation <= g)
        .map(|t| t.trial_id)
        .collect();
    let pool_ids: BTreeSet<TrialId> = pool.iter().map(|t| t.trial_id).collect();
    if pool_ids != window {
        return Some(format!(
            "pool {pool_ids:?} != window {window:?} at generation {g}"
        ));
    }
    let outcome = binary_tournament(
        initiator,
        &pool,
        FitnessMode::Priority,
        &[Direction::Minimize],
        rng,
    )
    .unwrap();
    match outcome.opponent {
        None if !pool.is_empty() => Some("no opponent drawn from a non-empty pool".into()),
        None => {
            (outcome.parent.trial_id != initiator.trial_id).then(|| "lone initiator lost".into())
        }
        Some(o) => {
            if !window.contains(&o.trial_id) {
                return Some(format!("opponent {} outside the window", o.trial_id));
            }
            let opponent_better = o.last_objective() < initiator.last_objective();
            let expected = if opponent_better {
                o.trial_id
            } else {
                initiator.trial_id
            };
            (outcome.parent.trial_id != expected)
                .then(|| format!("wrong winner {}", outcome.parent.trial_id))
        }
    }
}

/// Each completed trial outside the final generation initiated exactly one
/// child, and every child's parent lies in its initiator's window.
fn lineage_violation(trials: &[Trial], config: &StudyConfig) -> Option<String> {
    let by_id: HashMap<TrialId, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let mut children: HashMap<TrialId, usize> = HashMap::new();
    for t in trials.iter().filter(|t| !t.is_stopped()) {
        if let Some(init) = t.initiator_parent_trial_id {
            *children.entry(init).or_default() += 1;
            let ig = by_id[&init].generation;
            let pg = by_id[&t.parent_trial_id.unwrap()].generation;
            if config.opponent_strategy == OpponentStrategy::PastGeneration
                && !(pg + 1 >= ig && pg <= ig)
            {
                return Some(format!(
                    "trial {} parented outside window of {init}",
                    t.trial_id
                ));
            }
        }
    }
    let last = config.max_generations.unwrap();
    for t in trials
        .iter()
        .filter(|t| t.is_completed() && t.generation + 1 < last)
    {
        let n = children.get(&t.trial_id).copied().unwrap_or(0);
        if n != 1 || !t.initiated_reproduction {
            return Some(format!("trial {} initiated {n} children", t.trial_id));
        }
    }
    None
}

#[test]
fn criterion_02_evolution_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = Vec::new();
    for _ in 0..10_000 {
        violations.extend(mutation_violation(&mut rng));
        violations.extend(tournament_violation(&mut rng));
    }
    let controller = Controller::new(Arc::new(MemoryStore::new()));
    let mut studies = 0;
    for i in 0..400 {
        let (mut config, script) = schedule(10_000 + i);
        config.opponent_strategy = OpponentStrategy::PastGeneration;
        config.max_generations = Some(rng.random_range(2..=5));
        match drive(&config, script, &mut memory_call(&controller), None) {
            Ok(t) => violations.extend(lineage_violation(&t.trials, &config)),
            Err(e) => violations.push(e),
        }
        studies += 1;
    }
    verdict(
        2,
        "evolution properties",
        violations.is_empty(),
        &format!(
            "10000 mutations, 10000 tournaments, {studies} studies, {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!("; first: {v}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

fn toy_config(id: &str, pop: u32, workers: u32, generations: u32, seed: u64) -> StudyConfig {
    let mut c = StudyConfig::new(
        id,
        vec![ParameterSpec::float("lr", 1e-5, 1e-1, Scale::Log)],
        pop,
    );
    c.worker_budget = workers;
    c.steps_per_trial = 100;
    c.max_generations = Some(generations);
    c.seed = seed;
    c.defer_retry_ms = 0;
    c
}

#[test]
fn criterion_03_single_worker_budget_mode_is_synchronous() {
    let problem = ToyProblemSpec::shifted_optimum(50);
    let mut violations = Vec::new();
    let mut runs = 0;
    // Any-generation opponents let a generation-g initiator lose to a newer
    // trial, so its child skips ahead of generation g + 1.
    for strategy in [
        OpponentStrategy::PastGeneration,
        OpponentStrategy::SameGeneration,
    ] {
        for seed in 0..20 {
            let service = Controller::new(Arc::new(MemoryStore::new()));
            let store = MemoryCheckpointStore::new();
            let mut config = toy_config("sync", 5, 1, 3, seed);
            config.opponent_strategy = strategy;
            service.create_study(&config).unwrap();
            let report = simulate(
                &service,
                &store,
                &config,
                &problem,
                &ClusterConfig::homogeneous(1),
            )
            .unwrap();
            runs += 1;
            let mut completed: BTreeMap<u32, usize> = BTreeMap::new();
            for e in &report.events {
                match e.kind {
                    SimEventKind::Completed { generation, .. } => {
                        *completed.entry(generation).or_default() += 1
                    }
                    SimEventKind::Suggested {
                        trial_id,
                        generation,
                        ..
                    } if generation > 0 => {
                        let before = completed.get(&(generation - 1)).copied().unwrap_or(0);
                        if before < 5 {
                            violations.push(format!(
                                "{strategy:?} seed {seed}: trial {trial_id} of generation {generation} after {before} completions"
                            ));
                        }
                    }
                    _ => {}
                }
            }
            if !service.get_study("sync").unwrap().study_complete {
                violations.push(format!("{strategy:?} seed {seed}: study incomplete"));
            }
        }
    }
    verdict(
        3,
        "single-worker synchronization",
        violations.is_empty(),
        &format!(
            "{runs} event logs, {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!("; first: {v}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

const SPEEDS: [f64; 5] = [1.0, 1.3, 0.7, 1.1, 0.9];

fn recovery_violation(seed: u64, kill_at: usize) -> Option<String> {
    let problem = ToyProblemSpec::shifted_optimum(50);
    let store: Arc<dyn TrialStore> = Arc::new(MemoryStore::new());
    let checkpoints = MemoryCheckpointStore::new();
    let mut config = toy_config("recover", 5, 5, 4, seed);
    config.opponent_strategy = OpponentStrategy::SameGeneration;
    let mut cluster = ClusterConfig::homogeneous(5);
    cluster.speeds = SPEEDS.to_vec();
    cluster.kill_after_events = Some(kill_at);
    {
        let service = Controller::new(store.clone());
        service.create_study(&config).unwrap();
        let report = simulate(&service, &checkpoints, &config, &problem, &cluster).unwrap();
        if !report.killed {
            return Some(format!("kill point {kill_at} past the end of the run"));
        }
    }
    let service = Controller::new(store);
    let recovered = service.recover_study("recover").unwrap();
    cluster.kill_after_events = None;
    let report = simulate(&service, &checkpoints, &config, &problem, &cluster).unwrap();
    let status = service.get_study("recover").unwrap();
    if report.stalled || !status.study_complete {
        return Some(format!("kill at {kill_at}: did not complete after resume"));
    }
    let trials = service.list_trials("recover").unwrap();
    let mut per_generation: BTreeMap<u32, usize> = BTreeMap::new();
    for t in trials.iter().filter(|t| t.is_completed()) {
        *per_generation.entry(t.generation).or_default() += 1;
    }
    if per_generation != (0..4).map(|g| (g, 5)).collect::<BTreeMap<_, _>>() {
        return Some(format!(
            "kill at {kill_at}: completed per generation {per_generation:?}"
        ));
    }
    if trials.iter().filter(|t| t.is_stopped()).count() != recovered.stopped.len() {
        return Some(format!("kill at {kill_at}: unexpected stopped trials"));
    }
    lineage_violation(&trials, &config).map(|v| format!("kill at {kill_at}: {v}"))
}

#[test]
fn criterion_04_recovery_after_kill() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut passed = 0;
    let mut failures = Vec::new();
    for run in 0..10 {
        // Event count of an uninterrupted study bounds the kill point.
        let total = {
            let service = Controller::new(Arc::new(MemoryStore::new()));
            let mut config = toy_config("recover", 5, 5, 4, run);
            config.opponent_strategy = OpponentStrategy::SameGeneration;
            service.create_study(&config).unwrap();
            let mut cluster = ClusterConfig::homogeneous(5);
            cluster.speeds = SPEEDS.to_vec();
            let checkpoints = MemoryCheckpointStore::new();
            let problem = ToyProblemSpec::shifted_optimum(50);
            simulate(&service, &checkpoints, &config, &problem, &cluster)
                .unwrap()
                .events
                .len()
        };
        let kill_at = rng.random_range(1..total / 2);
        match recovery_violation(run, kill_at) {
            None => passed += 1,
            Some(e) => failures.push(e),
        }
    }
    verdict(
        4,
        "recovery after kill",
        passed == 10,
        &format!(
            "{passed}/10 runs{}",
            failures
                .first()
                .map(|f| format!("; first: {f}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

fn closure(trials: &[Trial], targets: &[TrialId]) -> BTreeSet<TrialId> {
    let by_id: HashMap<TrialId, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    let mut out = BTreeSet::new();
    for &target in targets {
        let mut cur = Some(target);
        while let Some(id) = cur {
            out.insert(id);
            cur = by_id[&id].parent_trial_id;
        }
    }
    out
}

fn measurement_bytes(t: &Trial) -> Vec<u8> {
    let log: Vec<(u64, &Vec<Option<f64>>)> = t
        .measurements
        .iter()
        .map(|m| (m.step, &m.objectives))
        .collect();
    serde_json::to_vec(&log).unwrap()
}

#[test]
fn criterion_05_replay_is_deterministic() {
    let problem = ToyProblemSpec::shifted_optimum(50);
    let service = Controller::new(Arc::new(MemoryStore::new()));
    let checkpoints = MemoryCheckpointStore::new();
    let config = toy_config("source", 5, 5, 4, 5);
    service.create_study(&config).unwrap();
    let mut cluster = ClusterConfig::homogeneous(5);
    cluster.speeds = vec![1.0, 1.7, 0.6, 1.2, 0.8];
    simulate(&service, &checkpoints, &config, &problem, &cluster).unwrap();
    let source = service.list_trials("source").unwrap();
    let finals: Vec<&Trial> = source
        .iter()
        .filter(|t| t.is_completed() && t.generation == 3)
        .collect();
    let best = finals
        .iter()
        .min_by(|a, b| {
            a.last_objective()
                .unwrap()
                .total_cmp(&b.last_objective().unwrap())
        })
        .unwrap()
        .trial_id;
    let subset = vec![finals[0].trial_id, finals[finals.len() - 1].trial_id];

    let mut problems = Vec::new();
    let mut replayed = 0;
    for (out, targets) in [("replay-best", vec![best]), ("replay-subset", subset)] {
        let replay = start_replay(&service, "source", &targets, out).unwrap();
        simulate(
            &service,
            &checkpoints,
            &replay,
            &problem,
            &ClusterConfig::homogeneous(3),
        )
        .unwrap();
        let trials = service.list_trials(out).unwrap();
        let executed: Vec<TrialId> = trials.iter().filter_map(|t| t.replay_of).collect();
        let executed_set: BTreeSet<TrialId> = executed.iter().copied().collect();
        if executed.len() != executed_set.len() || executed_set != closure(&source, &targets) {
            problems.push(format!("{out}: executed {executed_set:?}"));
        }
        for t in &trials {
            let src = &source[t.replay_of.unwrap().0 as usize];
            if !t.is_completed() || measurement_bytes(t) != measurement_bytes(src) {
                problems.push(format!(
                    "{out}: trial {} differs from {}",
                    t.trial_id, src.trial_id
                ));
            }
            replayed += 1;
        }
    }
    verdict(
        5,
        "replay determinism",
        problems.is_empty(),
        &format!("{replayed} replayed trials, {} mismatches", problems.len()),
    );
}

// ---------------------------------------------------------------------------

fn gc_violation(i: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6c ^ (i << 8));
    let pop = rng.random_range(2..=4);
    let mut config = StudyConfig::new(
        format!("gc-{i}"),
        vec![ParameterSpec::float("lr", 1e-4, 1e-1, Scale::Log)],
        pop,
    );
    config.worker_budget = rng.random_range(1..=pop);
    config.opponent_strategy = STRATEGIES[rng.random_range(0..3)];
    config.max_generations = Some(rng.random_range(2..=4));
    config.steps_per_trial = 2;
    config.seed = rng.random();
    let study = config.study_id.clone();
    let service = Controller::new(Arc::new(MemoryStore::new()));
    let store = MemoryCheckpointStore::new();
    service.create_study(&config).unwrap();

    let mut running: Vec<Trial> = Vec::new();
    let mut deleted: BTreeSet<String> = BTreeSet::new();
    for _ in 0..10_000 {
        match rng.random_range(0..4) {
            0 => {
                let trials = service.list_trials(&study).unwrap();
                let report = garbage_collect(&config, &trials, &store, rng.random_bool(0.3), false);
                deleted.extend(report.deleted);
            }
            1 if running.len() < config.worker_budget as usize => {
                match service.request_trial(&study, "w").unwrap() {
                    TrialAssignment::Trial { trial } => {
                        if let Some(p) = &trial.warm_start_checkpoint_path {
                            if deleted.contains(p) || !store.exists(p) {
                                return Some(format!(
                                    "trial {} warm-starts from deleted {p}",
                                    trial.trial_id
                                ));
                            }
                        }
                        running.push(*trial);
                    }
                    TrialAssignment::Defer {
                        study_complete: true,
                        ..
                    } => break,
                    TrialAssignment::Defer { .. } if running.is_empty() => {
                        return Some("stalled".into())
                    }
                    TrialAssignment::Defer { .. } => {}
                }
            }
            _ if !running.is_empty() => {
                let k = rng.random_range(0..running.len());
                let t = &mut running[k];
                let local = t.measurements.len() as u64 + 1;
                let path = checkpoint_path(&study, t.trial_id, u64::from(t.generation) * 2 + local);
                store
                    .write(&Checkpoint {
                        path: path.clone(),
                        variables: Default::default(),
                        step: local,
                        trial_id: t.trial_id,
                    })
                    .unwrap();
                let m =
                    Measurement::new(local, vec![Some(rng.random_range(0.0..1.0))], path.clone());
                service.report_measurement(&study, t.trial_id, &m).unwrap();
                t.measurements.push(m);
                if local == 2 {
                    service.complete_trial(&study, t.trial_id, &path).unwrap();
                    running.swap_remove(k);
                }
            }
            _ => {}
        }
    }
    let trials = service.list_trials(&study).unwrap();
    if !service.get_study(&study).unwrap().study_complete {
        return Some("study did not complete".into());
    }
    garbage_collect(&config, &trials, &store, true, false);
    let remaining: BTreeSet<String> = store.list(&study).unwrap().into_iter().collect();
    let finals: BTreeSet<String> = trials
        .iter()
        .filter_map(|t| t.final_checkpoint_path.clone())
        .collect();
    let extra: Vec<&String> = remaining.difference(&finals).collect();
    (!extra.is_empty()).then(|| format!("non-final checkpoints survive: {extra:?}"))
}

#[test]
fn criterion_06_gc_never_breaks_warm_starts() {
    let violations: Vec<String> = (0..1000)
        .filter_map(|i| gc_violation(i).map(|v| format!("interleaving {i}: {v}")))
        .collect();
    verdict(
        6,
        "checkpoint GC safety",
        violations.is_empty(),
        &format!(
            "1000 interleavings, {} violations{}",
            violations.len(),
            violations
                .first()
                .map(|v| format!("; first: {v}"))
                .unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

fn suite() -> Suite {
    Suite::from_json(PLANS).unwrap()
}

fn comparison() -> &'static (Comparison, Duration) {
    static CELL: OnceLock<(Comparison, Duration)> = OnceLock::new();
    CELL.get_or_init(|| {
        let started = Instant::now();
        let c = run_comparison(&suite().comparison, true).unwrap();
        (c, started.elapsed())
    })
}

fn runs<'a>(c: &'a Comparison, plan: &'a str) -> Vec<&'a RunResult> {
    let runs: Vec<&RunResult> = c.runs_of(plan).collect();
    assert_eq!(runs.len(), 5, "plan {plan}");
    runs
}

#[test]
fn criterion_07_pbt_converges_better_than_baselines() {
    let (c, elapsed) = comparison();
    let pbt20 = runs(c, "pbt-20");
    let pbt5 = runs(c, "pbt-5");
    let grid = runs(c, "grid");
    let random = runs(c, "random");
    let fin = |r: &RunResult| r.final_objective().unwrap_or(f64::INFINITY);
    let beats = |other: &[&RunResult]| {
        pbt20
            .iter()
            .zip(other)
            .filter(|(p, o)| fin(p) < fin(o))
            .count()
    };
    let vs_grid = beats(&grid);
    let vs_random = beats(&random);
    let vs_small = pbt20
        .iter()
        .zip(&pbt5)
        .filter(|(big, small)| {
            let step = big.final_step().unwrap().min(small.final_step().unwrap());
            big.best_at_step(step).unwrap() <= small.best_at_step(step).unwrap()
        })
        .count();
    let ok = vs_grid >= 4 && vs_random >= 4 && vs_small >= 3 && *elapsed < Duration::from_secs(300);
    verdict(
        7,
        "convergence against baselines",
        ok,
        &format!(
            "pop-20 beats grid {vs_grid}/5, random {vs_random}/5 (need 4); pop-20 >= pop-5 {vs_small}/5 (need 3); {:.1}s (limit 300s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_pbt_is_more_stable_than_random() {
    let (c, _) = comparison();
    let finals = |plan: &str| -> Vec<f64> {
        runs(c, plan)
            .iter()
            .map(|r| r.final_objective().unwrap())
            .collect()
    };
    let pbt = sem(&finals("pbt-20"));
    let random = sem(&finals("random"));
    verdict(
        8,
        "run-to-run stability",
        pbt <= random,
        &format!("SEM of final objective: pbt {pbt:.3e}, random {random:.3e}"),
    );
}

#[test]
fn criterion_09_throughput_scales_with_workers() {
    let spec = suite().scalability.expect("scalability section");
    let rows = scalability(
        &spec.base,
        &spec.populations,
        &spec.workers,
        spec.generations,
        true,
    )
    .unwrap();
    let r2 = worker_scaling_r2(&rows, 20).unwrap_or(f64::NAN);
    let ratios: Vec<f64> = spec
        .workers
        .iter()
        .map(|&w| {
            let per_gen = |pop: u32| {
                rows.iter()
                    .find(|r| r.population == pop && r.workers == w)
                    .map(|r| r.worker_steps_per_generation)
                    .unwrap()
            };
            per_gen(20) / per_gen(5)
        })
        .collect();
    let ok = spec.workers == [1, 2, 3, 4, 5]
        && r2 >= 0.95
        && ratios.iter().all(|r| (r - 4.0).abs() <= 0.1);
    verdict(
        9,
        "scalability",
        ok,
        &format!("R^2 {r2:.4} over workers {:?} (need >= 0.95); work ratio per worker count {ratios:.3?} (need 4.0 +/- 0.1)", spec.workers),
    );
}

#[test]
fn criterion_10_past_generation_opponents_win_the_ablation() {
    let spec = suite().ablation.expect("ablation section");
    assert!(
        spec.base.cluster.speed_sigma > 0.0,
        "ablation needs heterogeneous workers"
    );
    let (_, rows) = opponent_ablation(&spec.base, &spec.strategies, true).unwrap();
    let med = |s: OpponentStrategy| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.strategy == s)
            .map(|r| r.final_objective)
            .collect();
        assert_eq!(v.len(), 5);
        median(&v)
    };
    let past = med(OpponentStrategy::PastGeneration);
    let same = med(OpponentStrategy::SameGeneration);
    let any = med(OpponentStrategy::AnyGeneration);
    verdict(
        10,
        "opponent strategy ablation",
        past <= same && past <= any,
        &format!("median final objective: past {past:.5e}, same {same:.5e}, any {any:.5e}"),
    );
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_11_restarts_change_no_response() {
    let steady_dir = tempfile::tempdir().unwrap();
    let restart_dir = tempfile::tempdir().unwrap();
    let steady = Controller::new(Arc::new(FileStore::open(steady_dir.path()).unwrap()));
    let mut compared = 0;
    let mut diffs = Vec::new();
    for i in 0..1000 {
        let (config, script) = schedule(i);
        let a = drive(&config, script, &mut memory_call(&steady), None);
        let mut restarting = |req: WireRequest| {
            Controller::new(Arc::new(FileStore::open(restart_dir.path()).unwrap())).handle(req)
        };
        let b = drive(&config, script, &mut restarting, None);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                compared += a.responses.len();
                if a.responses != b.responses {
                    diffs.push(format!("schedule {i}"));
                }
            }
            (a, b) => diffs.push(format!("schedule {i}: {:?} / {:?}", a.err(), b.err())),
        }
    }
    verdict(
        11,
        "statelessness under restarts",
        diffs.is_empty(),
        &format!(
            "1000 schedules, {compared} responses compared, {} differing",
            diffs.len()
        ),
    );
}
