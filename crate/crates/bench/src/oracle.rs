//! Constant-learning-rate sweeps, used as the reference for which learning
//! rate is best over any stretch of training.

use pbt_core::worker::{toy_train_step, ToyProblemSpec, THETA};

/// Loss curves of constant learning rates trained from one fresh start.
#[derive(Clone, Debug)]
pub struct PhaseOracle {
    pub lrs: Vec<f64>,
    pub eval_every: u64,
    /// `losses[i][j]`: loss of `lrs[i]` after `(j + 1) * eval_every` steps.
    pub losses: Vec<Vec<f64>>,
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1).max(1) as f64).exp())
        .collect()
}

impl PhaseOracle {
    pub fn sweep(problem: &ToyProblemSpec, lrs: Vec<f64>, horizon: u64, seed: u64) -> Self {
        let every = problem.eval_every.max(1);
        let losses = lrs
            .iter()
            .map(|&lr| {
                let mut theta = problem.fresh_variables(seed)[THETA].values.clone();
                let mut curve = Vec::new();
                let mut t = 0;
                while t < horizon {
                    for _ in 0..every {
                        toy_train_step(&mut theta, lr, t, problem, seed);
                        t += 1;
                    }
                    let l = problem.loss(&theta, t);
                    curve.push(if l.is_finite() { l } else { f64::INFINITY });
                }
                curve
            })
            .collect();
        Self {
            lrs,
            eval_every: every,
            losses,
        }
    }

    /// Learning rate with the lowest mean loss over evaluations in `(start, end]`.
    pub fn best_lr_over(&self, start: u64, end: u64) -> f64 {
        self.lrs[self.best_index(start, end)]
    }

    /// Steady-state optimum of the phase containing `step`: the best constant
    /// rate over the second half of that phase, where start-up transients
    /// have decayed. Without phases the second half of the horizon is used.
    pub fn phase_optimal_lr(&self, problem: &ToyProblemSpec, step: u64) -> f64 {
        let horizon = self.losses.first().map_or(0, |c| c.len() as u64) * self.eval_every;
        let (start, len) = match problem.drift.phase_length {
            0 => (0, horizon),
            len => (step / len * len, len),
        };
        self.best_lr_over(start + len / 2, (start + len).min(horizon))
    }

    fn best_index(&self, start: u64, end: u64) -> usize {
        let lo = (start / self.eval_every) as usize;
        let hi = (end / self.eval_every) as usize;
        let score = |curve: &Vec<f64>| {
            let w = &curve[lo.min(curve.len())..hi.min(curve.len())];
            w.iter().sum::<f64>() / w.len().max(1) as f64
        };
        self.losses
            .iter()
            .enumerate()
            .min_by(|a, b| score(a.1).total_cmp(&score(b.1)))
            .map_or(0, |(i, _)| i)
    }
}
