use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::fitness::{Direction, FitnessMode};
use super::params::{root_names, Domain, HParams, ParamValue, ParameterSpec, Scale};
use super::trial::TrialId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpponentStrategy {
    /// The last `k` generations up to and including the initiator's.
    #[default]
    PastGeneration,
    SameGeneration,
    AnyGeneration,
}

/// Early-stopping policy run by the controller's poll hook.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EarlyStoppingConfig {
    #[default]
    None,
    /// Stop pending trials more than `max_lag` generations behind the last
    /// complete generation.
    StaleGeneration { max_lag: u32 },
}

/// One trial to re-execute in a replay study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub source_trial_id: TrialId,
    pub source_parent_trial_id: Option<TrialId>,
    pub generation: u32,
    pub hparams: HParams,
}

/// Replay mode: the controller walks `entries` (a topological order of the
/// source dependency graph) instead of running evolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayPlan {
    pub source_study_id: String,
    pub entries: Vec<ReplayEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub specs: Vec<ParameterSpec>,
    pub population_size: u32,
    /// Number of real parallel workers; budget mode when below `population_size`.
    pub worker_budget: u32,
    pub steps_per_trial: u64,
    #[serde(default)]
    pub fitness_mode: FitnessMode,
    pub objective_directions: Vec<Direction>,
    #[serde(default)]
    pub opponent_strategy: OpponentStrategy,
    #[serde(default = "default_window")]
    pub opponent_window_k: u32,
    #[serde(default)]
    pub seed: u64,
    /// Total number of generations; the study is complete once the last one
    /// is filled. Unbounded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<u32>,
    /// Explicit generation-0 assignments, used in order before sampling.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial_hparams: Vec<HParams>,
    #[serde(default)]
    pub early_stopping: EarlyStoppingConfig,
    #[serde(default = "default_retry_ms")]
    pub defer_retry_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<ReplayPlan>,
}

fn default_window() -> u32 {
    2
}

fn default_retry_ms() -> u64 {
    1000
}

impl StudyConfig {
    /// A single-objective (minimized) study with defaults for everything else.
    pub fn new(
        study_id: impl Into<String>,
        specs: Vec<ParameterSpec>,
        population_size: u32,
    ) -> Self {
        Self {
            study_id: study_id.into(),
            specs,
            population_size,
            worker_budget: population_size,
            steps_per_trial: 1000,
            fitness_mode: FitnessMode::Priority,
            objective_directions: vec![Direction::Minimize],
            opponent_strategy: OpponentStrategy::PastGeneration,
            opponent_window_k: default_window(),
            seed: 0,
            max_generations: None,
            initial_hparams: Vec::new(),
            early_stopping: EarlyStoppingConfig::None,
            defer_retry_ms: default_retry_ms(),
            replay: None,
        }
    }

    pub fn budget_mode(&self) -> bool {
        self.worker_budget < self.population_size
    }

    pub fn is_replay(&self) -> bool {
        self.replay.is_some()
    }
}

/// One broken rule of a study configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Lists every invariant the config breaks; empty means valid.
pub fn validate_study_config(config: &StudyConfig) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.study_id.is_empty()
        || !config
            .study_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        || config.study_id.starts_with('.')
    {
        out.push(Violation::new(
            "study_id",
            "must be non-empty [A-Za-z0-9._-] not starting with '.'",
        ));
    }
    if config.population_size == 0 {
        out.push(Violation::new("population_size", "must be positive"));
    }
    if config.worker_budget == 0 {
        out.push(Violation::new("worker_budget", "must be positive"));
    }
    if config.worker_budget > config.population_size {
        out.push(Violation::new(
            "worker_budget",
            "must not exceed population_size",
        ));
    }
    if config.steps_per_trial == 0 {
        out.push(Violation::new("steps_per_trial", "must be positive"));
    }
    if config.opponent_window_k == 0 {
        out.push(Violation::new("opponent_window_k", "must be at least 1"));
    }
    if config.objective_directions.is_empty() {
        out.push(Violation::new(
            "objective_directions",
            "at least one objective required",
        ));
    }
    if config.max_generations == Some(0) {
        out.push(Violation::new("max_generations", "must be positive"));
    }
    if let EarlyStoppingConfig::StaleGeneration { max_lag } = config.early_stopping {
        if max_lag == 0 {
            out.push(Violation::new("early_stopping.max_lag", "must be positive"));
        }
    }
    validate_specs(&config.specs, &mut out);
    if out.iter().all(|v| !v.field.starts_with("specs")) {
        for (i, hp) in config.initial_hparams.iter().enumerate() {
            if let Err(e) = super::params::check_assignment(&config.specs, hp) {
                out.push(Violation::new(format!("initial_hparams[{i}]"), e));
            }
        }
    }
    if let Some(plan) = &config.replay {
        validate_replay(plan, &mut out);
    }
    out
}

/// Checks parameter specs: domains, unique names, known children, single
/// parent per child, and acyclicity of the child-edge relation.
pub fn validate_specs(specs: &[ParameterSpec], out: &mut Vec<Violation>) {
    let mut names = HashSet::new();
    for spec in specs {
        let field = format!("specs.{}", spec.name);
        if spec.name.is_empty() {
            out.push(Violation::new("specs", "parameter name must be non-empty"));
        }
        if !names.insert(spec.name.as_str()) {
            out.push(Violation::new(&field, "duplicate parameter name"));
        }
        match &spec.domain {
            Domain::Integer { bounds } => {
                if bounds[0] >= bounds[1] {
                    out.push(Violation::new(
                        format!("{field}.bounds"),
                        "min must be < max",
                    ));
                }
            }
            Domain::Float { bounds, scale } => {
                if !(bounds[0].is_finite() && bounds[1].is_finite()) {
                    out.push(Violation::new(
                        format!("{field}.bounds"),
                        "bounds must be finite",
                    ));
                } else if bounds[0] >= bounds[1] {
                    out.push(Violation::new(
                        format!("{field}.bounds"),
                        "min must be < max",
                    ));
                }
                if *scale == Scale::Log && bounds[0] <= 0.0 {
                    out.push(Violation::new(
                        format!("{field}.scale"),
                        "log scale requires min > 0",
                    ));
                }
            }
            Domain::Discrete { feasible_values } => {
                if feasible_values.is_empty() {
                    out.push(Violation::new(
                        format!("{field}.feasible_values"),
                        "must be non-empty",
                    ));
                }
                if feasible_values.iter().any(|v| !v.is_finite())
                    || feasible_values.windows(2).any(|w| w[0] >= w[1])
                {
                    out.push(Violation::new(
                        format!("{field}.feasible_values"),
                        "must be finite and strictly increasing",
                    ));
                }
            }
            Domain::Categorical { feasible_values } => {
                if feasible_values.is_empty() {
                    out.push(Violation::new(
                        format!("{field}.feasible_values"),
                        "must be non-empty",
                    ));
                }
                let unique: HashSet<&String> = feasible_values.iter().collect();
                if unique.len() != feasible_values.len() {
                    out.push(Violation::new(
                        format!("{field}.feasible_values"),
                        "values must be unique",
                    ));
                }
            }
        }
        for edge in &spec.children {
            if !guard_fits(&spec.domain, &edge.guard) {
                out.push(Violation::new(
                    format!("{field}.children"),
                    format!("guard {} is not a value of `{}`", edge.guard, spec.name),
                ));
            }
        }
    }

    let by_name: HashMap<&str, &ParameterSpec> =
        specs.iter().map(|s| (s.name.as_str(), s)).collect();
    let mut parents: HashMap<&str, HashSet<&str>> = HashMap::new();
    for spec in specs {
        for edge in &spec.children {
            if !by_name.contains_key(edge.child.as_str()) {
                out.push(Violation::new(
                    format!("specs.{}.children", spec.name),
                    format!("unknown child `{}`", edge.child),
                ));
            }
            parents
                .entry(edge.child.as_str())
                .or_default()
                .insert(spec.name.as_str());
        }
    }
    for (child, ps) in &parents {
        if ps.len() > 1 {
            out.push(Violation::new(
                format!("specs.{child}"),
                "child parameter must have exactly one parent parameter",
            ));
        }
    }
    if has_cycle(specs, &by_name) {
        out.push(Violation::new(
            "specs",
            "child-edge relation must be acyclic",
        ));
    } else if !specs.is_empty() && root_names(specs).is_empty() {
        out.push(Violation::new("specs", "no root parameter"));
    }
}

fn guard_fits(domain: &Domain, guard: &ParamValue) -> bool {
    match domain {
        Domain::Integer { bounds } => guard
            .as_f64()
            .is_some_and(|x| x.fract() == 0.0 && bounds[0] as f64 <= x && x <= bounds[1] as f64),
        Domain::Float { bounds, .. } => guard
            .as_f64()
            .is_some_and(|x| bounds[0] <= x && x <= bounds[1]),
        Domain::Discrete { feasible_values } => {
            guard.as_f64().is_some_and(|x| feasible_values.contains(&x))
        }
        Domain::Categorical { feasible_values } => guard
            .as_str()
            .is_some_and(|s| feasible_values.iter().any(|v| v == s)),
    }
}

fn has_cycle(specs: &[ParameterSpec], by_name: &HashMap<&str, &ParameterSpec>) -> bool {
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: HashMap<&str, u8> = HashMap::new();
    fn visit<'a>(
        name: &'a str,
        by_name: &HashMap<&str, &'a ParameterSpec>,
        state: &mut HashMap<&'a str, u8>,
    ) -> bool {
        match state.get(name) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        state.insert(name, 1);
        if let Some(spec) = by_name.get(name) {
            for edge in &spec.children {
                if visit(edge.child.as_str(), by_name, state) {
                    return true;
                }
            }
        }
        state.insert(name, 2);
        false
    }
    specs
        .iter()
        .any(|s| visit(s.name.as_str(), by_name, &mut state))
}

fn validate_replay(plan: &ReplayPlan, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for (i, entry) in plan.entries.iter().enumerate() {
        if let Some(parent) = entry.source_parent_trial_id {
            if !seen.contains(&parent) {
                out.push(Violation::new(
                    format!("replay.entries[{i}]"),
                    "parent must precede child in the execution order",
                ));
            }
        }
        if !seen.insert(entry.source_trial_id) {
            out.push(Violation::new(
                format!("replay.entries[{i}]"),
                "duplicate source trial",
            ));
        }
    }
}
