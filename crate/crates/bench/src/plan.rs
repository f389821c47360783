//! Experiment plans and their translation into study configurations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use pbt_core::model::{OpponentStrategy, ParameterSpec, Scale, StudyConfig};
use pbt_core::worker::{ClusterConfig, ToyProblemSpec};
use pbt_core::{HParams, ParamValue};

/// Name of the tuned hyperparameter.
pub const LR: &str = "lr";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pbt,
    Grid,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Pbt => "pbt",
            Method::Grid => "grid",
            Method::Random => "random",
        }
    }
}

/// Learning-rate search space: an explicit list for grid search, a
/// log-uniform range otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSpace {
    Values(Vec<f64>),
    Range { min: f64, max: f64 },
}

/// Simulated worker pool. Speeds are `exp(N(0, speed_sigma))` drawn from the
/// run seed, so `speed_sigma = 0` gives identical workers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    #[serde(default)]
    pub speed_sigma: f64,
    #[serde(default)]
    pub trial_overhead: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub method: Method,
    /// PBT only; grid and random use one trial per arm.
    #[serde(default)]
    pub population_size: u32,
    pub worker_budget: u32,
    /// PBT only; grid and random arms train for their whole share of the budget.
    #[serde(default)]
    pub steps_per_trial: u64,
    /// Trainer steps summed over all workers.
    pub total_resource_budget: u64,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub opponent_strategy: OpponentStrategy,
    #[serde(default = "default_window")]
    pub opponent_window_k: u32,
    /// PBT only. Without a cap the study runs until the budget is spent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_generations: Option<u32>,
    pub lr: LrSpace,
    pub problem: ToyProblemSpec,
    #[serde(default)]
    pub cluster: ClusterSpec,
}

fn has_duplicates(values: &[f64]) -> bool {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.windows(2).any(|w| w[0] == w[1])
}

fn default_window() -> u32 {
    2
}

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("plan {plan}: {message}")]
    Invalid { plan: String, message: String },
    #[error("plans {a} and {b} differ in {what}")]
    Mismatched {
        a: String,
        b: String,
        what: &'static str,
    },
    #[error("cut at resource {cut} lies beyond the consumed budget {consumed}")]
    InvalidCut { cut: u64, consumed: u64 },
    #[error("{0}")]
    Unsupported(String),
}

/// Shape of one run: how many arms, how long each trains and for how many
/// generations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunShape {
    pub population_size: u32,
    pub steps_per_trial: u64,
    pub generations: u32,
}

impl RunShape {
    pub fn resource(&self) -> u64 {
        u64::from(self.population_size) * self.steps_per_trial * u64::from(self.generations)
    }
}

impl ExperimentPlan {
    fn invalid(&self, message: impl Into<String>) -> PlanError {
        PlanError::Invalid {
            plan: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        match (&self.method, &self.lr) {
            (Method::Grid, LrSpace::Values(v)) if v.is_empty() => {
                return Err(self.invalid("grid needs at least one learning rate"))
            }
            (Method::Grid, LrSpace::Values(v))
                if v.iter().any(|&x| !(x > 0.0 && x.is_finite())) =>
            {
                return Err(self.invalid("grid learning rates must be positive"))
            }
            (Method::Grid, LrSpace::Values(v)) if has_duplicates(v) => {
                return Err(self.invalid("grid learning rates must be distinct"))
            }
            (Method::Grid, LrSpace::Range { .. }) => {
                return Err(self.invalid("grid needs an explicit value list"))
            }
            (Method::Pbt | Method::Random, LrSpace::Values(_)) => {
                return Err(self.invalid("pbt and random search need a range"))
            }
            (_, LrSpace::Range { min, max }) if !(0.0 < *min && min < max) => {
                return Err(self.invalid("learning-rate range must satisfy 0 < min < max"))
            }
            _ => {}
        }
        if self.worker_budget == 0 {
            return Err(self.invalid("worker_budget must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(self.invalid("at least one seed is required"));
        }
        if self.method == Method::Pbt && (self.population_size == 0 || self.steps_per_trial == 0) {
            return Err(self.invalid("pbt needs population_size and steps_per_trial"));
        }
        let shape = self.shape();
        if shape.generations > 0 {
            self.problem
                .validate(shape.steps_per_trial)
                .map_err(|m| self.invalid(m))?;
        }
        Ok(())
    }

    /// Largest run of this method that fits the budget. Zero generations
    /// when not even one round fits. For PBT, `generations` counts rounds of
    /// `population_size` trials; past-generation selection can need more
    /// trials per generation, so fewer generations may complete.
    pub fn shape(&self) -> RunShape {
        let budget = self.total_resource_budget;
        match self.method {
            Method::Pbt => {
                let round = u64::from(self.population_size) * self.steps_per_trial;
                RunShape {
                    population_size: self.population_size,
                    steps_per_trial: self.steps_per_trial,
                    generations: budget.checked_div(round).unwrap_or(0) as u32,
                }
            }
            Method::Grid | Method::Random => {
                let arms = match &self.lr {
                    LrSpace::Values(v) => v.len() as u32,
                    LrSpace::Range { .. } => self.worker_budget,
                };
                // Whole evaluation intervals only.
                let per_arm = budget.checked_div(u64::from(arms)).unwrap_or(0);
                let e = self.problem.eval_every.max(1);
                let steps = per_arm / e * e;
                RunShape {
                    population_size: arms,
                    steps_per_trial: steps,
                    generations: u32::from(steps > 0),
                }
            }
        }
    }

    /// Study configuration for one seeded run.
    pub fn study_config(&self, seed: u64) -> StudyConfig {
        let shape = self.shape();
        let spec = match &self.lr {
            LrSpace::Values(v) => {
                let mut sorted = v.clone();
                sorted.sort_by(f64::total_cmp);
                ParameterSpec::discrete(LR, sorted)
            }
            LrSpace::Range { min, max } => ParameterSpec::float(LR, *min, *max, Scale::Log),
        };
        let id = format!("{}-s{seed}", self.name);
        let mut config = StudyConfig::new(id, vec![spec], shape.population_size);
        config.steps_per_trial = shape.steps_per_trial;
        config.seed = seed;
        config.max_generations = match self.method {
            Method::Pbt => self.max_generations,
            Method::Grid | Method::Random => Some(1),
        };
        config.opponent_strategy = self.opponent_strategy;
        config.opponent_window_k = self.opponent_window_k;
        config.defer_retry_ms = 0;
        if self.method == Method::Pbt {
            config.worker_budget = self.worker_budget.min(shape.population_size);
        } else {
            config.worker_budget = shape.population_size;
        }
        if let LrSpace::Values(v) = &self.lr {
            config.initial_hparams = v
                .iter()
                .map(|&x| HParams::from([(LR.to_string(), ParamValue::Float(x))]))
                .collect();
        }
        config
    }

    /// Simulated worker pool for one seeded run.
    pub fn cluster(&self, seed: u64) -> ClusterConfig {
        let workers = self.worker_budget as usize;
        let mut cluster = ClusterConfig::homogeneous(workers);
        cluster.trial_overhead = self.cluster.trial_overhead;
        if self.cluster.speed_sigma > 0.0 {
            let dist = LogNormal::new(0.0, self.cluster.speed_sigma)
                .expect("sigma is finite and positive");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
            cluster.speeds = (0..workers).map(|_| dist.sample(&mut rng)).collect();
        }
        cluster.step_budget = Some(self.total_resource_budget);
        cluster
    }
}
