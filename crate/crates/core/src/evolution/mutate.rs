//! Mutation operators for single-parent reproduction.

use rand::Rng;

use crate::model::{walk_active, Domain, HParams, ParamValue, ParameterSpec};

/// Multipliers applied to scalar float parameters.
pub const SHRINK: f64 = 0.8;
pub const GROW: f64 = 1.2;

/// Direction of a neighbor move or multiplier choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Down,
    Up,
}

impl Step {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R) -> Self {
        if rng.random_bool(0.5) {
            Step::Up
        } else {
            Step::Down
        }
    }
}

/// Multiplies by 0.8 or 1.2 and clamps to `bounds`.
pub fn mutate_float(value: f64, bounds: [f64; 2], step: Step) -> f64 {
    let factor = match step {
        Step::Down => SHRINK,
        Step::Up => GROW,
    };
    (value * factor).clamp(bounds[0], bounds[1])
}

/// Moves to the next larger or next smaller feasible value, holding at the ends.
pub fn step_discrete(values: &[f64], current: f64, step: Step) -> f64 {
    let idx = nearest_index(values, current);
    let next = match step {
        Step::Up => (idx + 1).min(values.len() - 1),
        Step::Down => idx.saturating_sub(1),
    };
    values[next]
}

fn nearest_index(values: &[f64], current: f64) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - current).abs().total_cmp(&(b.1 - current).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn step_integer(value: i64, bounds: [i64; 2], step: Step) -> i64 {
    match step {
        Step::Up => (value + 1).min(bounds[1]),
        Step::Down => (value - 1).max(bounds[0]),
    }
}

/// Mutates one value of `spec`.
pub fn mutate_value<R: Rng + ?Sized>(
    spec: &ParameterSpec,
    value: &ParamValue,
    rng: &mut R,
) -> ParamValue {
    match &spec.domain {
        Domain::Float { bounds, .. } => {
            let x = value.as_f64().unwrap_or(bounds[0]);
            ParamValue::Float(mutate_float(x, *bounds, Step::draw(rng)))
        }
        Domain::Integer { bounds } => {
            let x = match value {
                ParamValue::Int(v) => *v,
                other => other
                    .as_f64()
                    .map(|f| f.round() as i64)
                    .unwrap_or(bounds[0]),
            };
            ParamValue::Int(step_integer(x, *bounds, Step::draw(rng)))
        }
        Domain::Discrete { feasible_values } => {
            let x = value.as_f64().unwrap_or(feasible_values[0]);
            ParamValue::Float(step_discrete(feasible_values, x, Step::draw(rng)))
        }
        Domain::Categorical { .. } => spec.sample_value(rng),
    }
}

/// Mutates an assignment.
///
/// Mutable parameters are perturbed, immutable ones copied. Children that a
/// changed guard deactivates are dropped; children it activates are sampled
/// fresh.
pub fn mutate<R: Rng + ?Sized>(hparams: &HParams, specs: &[ParameterSpec], rng: &mut R) -> HParams {
    walk_active(specs, |spec| match hparams.get(&spec.name) {
        Some(v) if spec.mutable => mutate_value(spec, v, rng),
        Some(v) => v.clone(),
        None => spec.sample_value(rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Scale;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn float_multipliers() {
        let x = mutate_float(0.001, [1e-5, 1e-1], Step::Down);
        assert!((x - 0.0008).abs() < 1e-15, "{x}");
        assert_eq!(mutate_float(0.09, [1e-5, 1e-1], Step::Up), 0.1);
    }

    #[test]
    fn discrete_neighbors_hold_at_boundary() {
        let v = [16.0, 32.0, 64.0];
        assert_eq!(step_discrete(&v, 64.0, Step::Up), 64.0);
        assert_eq!(step_discrete(&v, 64.0, Step::Down), 32.0);
        assert_eq!(step_discrete(&v, 16.0, Step::Down), 16.0);
        assert_eq!(step_discrete(&v, 16.0, Step::Up), 32.0);
    }

    #[test]
    fn integer_neighbors_hold_at_boundary() {
        assert_eq!(step_integer(3, [1, 3], Step::Up), 3);
        assert_eq!(step_integer(3, [1, 3], Step::Down), 2);
    }

    #[test]
    fn immutable_parameter_passes_through() {
        let specs = vec![
            ParameterSpec::float("lr", 1e-5, 1e-1, Scale::Log),
            ParameterSpec::discrete("batch", [16.0, 32.0, 64.0]).immutable(),
        ];
        let mut hp = HParams::new();
        hp.insert("lr".into(), ParamValue::Float(0.01));
        hp.insert("batch".into(), ParamValue::Float(32.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let m = mutate(&hp, &specs, &mut rng);
            assert_eq!(m["batch"], ParamValue::Float(32.0));
            let lr = m["lr"].as_f64().unwrap();
            assert!((lr - 0.008).abs() < 1e-12 || (lr - 0.012).abs() < 1e-12);
        }
    }

    #[test]
    fn guard_change_resamples_new_children() {
        let specs = vec![
            ParameterSpec::categorical("opt", ["adam", "sgd"])
                .with_child(ParamValue::Categorical("sgd".into()), "momentum")
                .with_child(ParamValue::Categorical("adam".into()), "beta"),
            ParameterSpec::float("momentum", 0.1, 0.9, Scale::Linear),
            ParameterSpec::float("beta", 0.5, 0.999, Scale::Linear),
        ];
        let mut hp = HParams::new();
        hp.insert("opt".into(), ParamValue::Categorical("adam".into()));
        hp.insert("beta".into(), ParamValue::Float(0.9));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut switched = false;
        for _ in 0..100 {
            let m = mutate(&hp, &specs, &mut rng);
            crate::model::check_assignment(&specs, &m).unwrap();
            if m["opt"].as_str() == Some("sgd") {
                switched = true;
                assert!(!m.contains_key("beta"));
                assert!(m.contains_key("momentum"));
            }
        }
        assert!(switched);
    }
}
