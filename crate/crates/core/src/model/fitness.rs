//! Fitness tuples and their two comparison semantics.

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessMode {
    /// Lexicographic: later elements only break ties of earlier ones.
    #[default]
    Priority,
    /// Strict Pareto dominance on every element.
    Dominance,
}

/// Outcome of comparing two fitness tuples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitnessOrdering {
    ABetter,
    BBetter,
    /// Every element equal (both present, or both missing).
    Tied,
    Incomparable,
}

impl FitnessOrdering {
    pub fn reverse(self) -> Self {
        match self {
            FitnessOrdering::ABetter => FitnessOrdering::BBetter,
            FitnessOrdering::BBetter => FitnessOrdering::ABetter,
            other => other,
        }
    }
}

/// Ordered objective values of a trial. `None` marks a missing objective.
#[derive(Clone, Debug, PartialEq)]
pub struct Fitness {
    pub values: Vec<Option<f64>>,
    pub directions: Vec<Direction>,
}

impl Fitness {
    pub fn new(values: Vec<Option<f64>>, directions: Vec<Direction>) -> Self {
        Self { values, directions }
    }

    /// Values in the maximize convention: larger is better.
    fn normalized(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.values.iter().zip(&self.directions).map(|(v, d)| {
            v.map(|x| match d {
                Direction::Maximize => x,
                Direction::Minimize => -x,
            })
        })
    }
}

/// Compares two fitness tuples.
///
/// Dominance: `a` is better iff every element is strictly better; a tuple with
/// a missing element is incomparable to everything. Priority: lexicographic,
/// where a missing element loses to a present one.
pub fn compare_fitness(
    a: &Fitness,
    b: &Fitness,
    mode: FitnessMode,
) -> Result<FitnessOrdering, ModelError> {
    if a.values.len() != b.values.len()
        || a.directions.len() != a.values.len()
        || b.directions.len() != b.values.len()
    {
        return Err(ModelError::FitnessLength {
            left: a.values.len(),
            right: b.values.len(),
        });
    }
    if a.directions != b.directions {
        return Err(ModelError::FitnessDirections);
    }
    let pairs: Vec<(Option<f64>, Option<f64>)> = a.normalized().zip(b.normalized()).collect();
    Ok(match mode {
        FitnessMode::Dominance => dominance(&pairs),
        FitnessMode::Priority => priority(&pairs),
    })
}

fn dominance(pairs: &[(Option<f64>, Option<f64>)]) -> FitnessOrdering {
    let mut present = Vec::with_capacity(pairs.len());
    for &(x, y) in pairs {
        match (x, y) {
            (Some(x), Some(y)) => present.push((x, y)),
            (None, None) if pairs.iter().all(|p| p.0.is_none() && p.1.is_none()) => {
                return FitnessOrdering::Tied
            }
            _ => return FitnessOrdering::Incomparable,
        }
    }
    if present.iter().all(|(x, y)| x == y) {
        FitnessOrdering::Tied
    } else if present.iter().all(|(x, y)| x > y) {
        FitnessOrdering::ABetter
    } else if present.iter().all(|(x, y)| x < y) {
        FitnessOrdering::BBetter
    } else {
        FitnessOrdering::Incomparable
    }
}

fn priority(pairs: &[(Option<f64>, Option<f64>)]) -> FitnessOrdering {
    for &(x, y) in pairs {
        match (x, y) {
            (Some(_), None) => return FitnessOrdering::ABetter,
            (None, Some(_)) => return FitnessOrdering::BBetter,
            (None, None) => {}
            (Some(x), Some(y)) => {
                if x > y {
                    return FitnessOrdering::ABetter;
                }
                if x < y {
                    return FitnessOrdering::BBetter;
                }
            }
        }
    }
    FitnessOrdering::Tied
}
