//! Toy optimization problems standing in for real model training.
//!
//! The model is a vector `theta` trained by gradient descent on
//! `L(theta, t) = h/2 * sum_i (theta_i - mu_i(t))^2`.
//!
//! `lr_quadratic`: every coordinate follows the same target `mu(t)`, which
//! moves by `drift.velocity` per step.
//!
//! `shifted_optimum`: the first `ceil(d/2)` coordinates follow a moving
//! target whose speed in phase `p = floor(t / phase_length)` is
//! `v_p = velocity * decay^p`. The other coordinates sit at zero but their
//! gradient carries a disturbance `(-1)^t * jitter / decay^p`. Lag on the
//! moving coordinates costs about `v^2 / (2 h lr^2)` per coordinate, and the
//! disturbance makes the resting ones oscillate at a cost of about
//! `h lr^2 delta^2 / 8`. Their sum is minimized by
//! `lr*_p = sqrt(2 v_p / (h delta_p))`, which shrinks by `decay` each phase
//! while the optimal loss `v_p delta_p / 2` per coordinate pair stays
//! constant. No constant learning rate is optimal in more than one phase.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Tensor, Variables};

pub const THETA: &str = "theta";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    LrQuadratic,
    ShiftedOptimum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    #[serde(default)]
    pub velocity: f64,
    #[serde(default = "one")]
    pub decay: f64,
    /// Steps per phase; 0 disables phases.
    #[serde(default)]
    pub phase_length: u64,
}

impl Default for Drift {
    fn default() -> Self {
        Self {
            velocity: 0.0,
            decay: 1.0,
            phase_length: 0,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyProblemSpec {
    pub kind: ProblemKind,
    pub dimension: usize,
    #[serde(default)]
    pub noise_scale: f64,
    #[serde(default)]
    pub drift: Drift,
    pub eval_every: u64,
    #[serde(default = "one")]
    pub curvature: f64,
    #[serde(default)]
    pub jitter: f64,
    /// Standard deviation of the fresh initialization.
    #[serde(default = "one")]
    pub init_scale: f64,
}

impl ToyProblemSpec {
    pub fn lr_quadratic(dimension: usize, eval_every: u64) -> Self {
        Self {
            kind: ProblemKind::LrQuadratic,
            dimension,
            noise_scale: 0.0,
            drift: Drift::default(),
            eval_every,
            curvature: 1.0,
            jitter: 0.0,
            init_scale: 1.0,
        }
    }

    /// The shifted-optimum problem used by the bench.
    pub fn shifted_optimum(eval_every: u64) -> Self {
        Self {
            kind: ProblemKind::ShiftedOptimum,
            dimension: 4,
            noise_scale: 0.0,
            drift: Drift {
                velocity: 2.45e-4,
                decay: 0.83,
                phase_length: 500,
            },
            eval_every,
            curvature: 10.0,
            jitter: 1.0,
            init_scale: 1.0,
        }
    }

    pub fn validate(&self, steps_per_trial: u64) -> Result<(), String> {
        if self.dimension == 0 {
            return Err("dimension must be positive".into());
        }
        if self.eval_every == 0 || !steps_per_trial.is_multiple_of(self.eval_every) {
            return Err(format!(
                "eval_every {} must divide steps_per_trial {steps_per_trial}",
                self.eval_every
            ));
        }
        let positive = |x: f64| x > 0.0;
        if self.noise_scale.is_nan()
            || self.noise_scale < 0.0
            || !positive(self.curvature)
            || !positive(self.drift.decay)
        {
            return Err("noise_scale must be >= 0, curvature and decay > 0".into());
        }
        Ok(())
    }

    fn phase(&self, t: u64) -> u64 {
        t.checked_div(self.drift.phase_length).unwrap_or(0)
    }

    fn moving_dims(&self) -> usize {
        match self.kind {
            ProblemKind::LrQuadratic => self.dimension,
            ProblemKind::ShiftedOptimum => self.dimension.div_ceil(2),
        }
    }

    pub fn velocity_at(&self, t: u64) -> f64 {
        self.drift.velocity * self.drift.decay.powi(self.phase(t) as i32)
    }

    pub fn jitter_at(&self, t: u64) -> f64 {
        match self.kind {
            ProblemKind::LrQuadratic => 0.0,
            ProblemKind::ShiftedOptimum => {
                self.jitter / self.drift.decay.powi(self.phase(t) as i32)
            }
        }
    }

    /// Position of the moving target after `t` steps.
    pub fn target(&self, t: u64) -> f64 {
        let len = self.drift.phase_length;
        if len == 0 || self.drift.decay == 1.0 {
            return self.drift.velocity * t as f64;
        }
        let p = self.phase(t);
        let mut mu = 0.0;
        for q in 0..p {
            mu += self.drift.velocity * self.drift.decay.powi(q as i32) * len as f64;
        }
        mu + self.velocity_at(t) * (t - p * len) as f64
    }

    /// Steady-state optimal learning rate of the phase containing `t`,
    /// from the small-step approximation in the module docs.
    pub fn optimal_lr(&self, t: u64) -> Option<f64> {
        let delta = self.jitter_at(t);
        (self.kind == ProblemKind::ShiftedOptimum && delta > 0.0)
            .then(|| (2.0 * self.velocity_at(t) / (self.curvature * delta)).sqrt())
    }

    pub fn loss(&self, theta: &[f64], t: u64) -> f64 {
        let mu = self.target(t);
        let moving = self.moving_dims();
        let sq: f64 = theta
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let d = if i < moving { x - mu } else { x };
                d * d
            })
            .sum();
        0.5 * self.curvature * sq
    }

    pub fn fresh_variables(&self, seed: u64) -> Variables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let theta = (0..self.dimension)
            .map(|_| self.init_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Variables::from([(THETA.to_string(), Tensor::vector(theta))])
    }
}

/// One gradient step at global step `t`. Noise is drawn from a stream keyed
/// by `(seed, t)` so it does not depend on scheduling.
pub fn toy_train_step(theta: &mut [f64], lr: f64, t: u64, problem: &ToyProblemSpec, seed: u64) {
    let h = problem.curvature;
    let mu = problem.target(t);
    let moving = problem.moving_dims();
    let disturbance = if t.is_multiple_of(2) { 1.0 } else { -1.0 } * problem.jitter_at(t);
    let mut noise = (problem.noise_scale > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        rng.set_word_pos(u128::from(t) << 16);
        rng
    });
    for (i, x) in theta.iter_mut().enumerate() {
        let mut g = if i < moving {
            h * (*x - mu)
        } else {
            h * *x + disturbance
        };
        if let Some(rng) = noise.as_mut() {
            g += problem.noise_scale * rng.sample::<f64, _>(StandardNormal);
        }
        *x -= lr * g;
    }
}
