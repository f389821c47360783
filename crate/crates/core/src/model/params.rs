//! Parameter search space: typed parameter specs linked into a guard DAG.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A single hyperparameter value.
///
/// Integers, floats (also used for discrete numeric values) and categorical
/// labels share one untagged JSON representation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Float(f64),
    Categorical(String),
}

impl ParamValue {
    /// Numeric view of the value, if it has one.
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Float(v) => Some(*v),
            ParamValue::Categorical(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Categorical(s) => Some(s),
            _ => None,
        }
    }

    /// Guard matching: numbers compare numerically across `Int`/`Float`,
    /// labels compare by string equality.
    pub fn matches(&self, other: &ParamValue) -> bool {
        match (self, other) {
            (ParamValue::Categorical(a), ParamValue::Categorical(b)) => a == b,
            (a, b) => match (a.as_f64(), b.as_f64()) {
                (Some(x), Some(y)) => x == y,
                _ => false,
            },
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Categorical(s) => f.write_str(s),
        }
    }
}

/// An assignment of values to the active parameters of a search space.
pub type HParams = BTreeMap<String, ParamValue>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

/// Value domain of a parameter, tagged by `kind` on the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    Integer {
        bounds: [i64; 2],
    },
    Float {
        bounds: [f64; 2],
        #[serde(default)]
        scale: Scale,
    },
    /// Ordered numeric values.
    Discrete {
        feasible_values: Vec<f64>,
    },
    /// Unordered symbolic values.
    Categorical {
        feasible_values: Vec<String>,
    },
}

/// Edge from a parent parameter to a conditional child parameter.
///
/// The child is active iff the parent's value matches `guard`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildEdge {
    pub guard: ParamValue,
    pub child: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    #[serde(flatten)]
    pub domain: Domain,
    /// Whether evolution may mutate this parameter.
    #[serde(default = "default_mutable")]
    pub mutable: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ChildEdge>,
}

fn default_mutable() -> bool {
    true
}

impl ParameterSpec {
    pub fn float(name: impl Into<String>, min: f64, max: f64, scale: Scale) -> Self {
        Self::new(
            name,
            Domain::Float {
                bounds: [min, max],
                scale,
            },
        )
    }

    pub fn integer(name: impl Into<String>, min: i64, max: i64) -> Self {
        Self::new(name, Domain::Integer { bounds: [min, max] })
    }

    pub fn discrete(name: impl Into<String>, values: impl Into<Vec<f64>>) -> Self {
        Self::new(
            name,
            Domain::Discrete {
                feasible_values: values.into(),
            },
        )
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        values: impl IntoIterator<Item = S>,
    ) -> Self {
        Self::new(
            name,
            Domain::Categorical {
                feasible_values: values.into_iter().map(Into::into).collect(),
            },
        )
    }

    fn new(name: impl Into<String>, domain: Domain) -> Self {
        Self {
            name: name.into(),
            domain,
            mutable: true,
            children: Vec::new(),
        }
    }

    /// Adds a conditional child edge.
    pub fn with_child(mut self, guard: ParamValue, child: impl Into<String>) -> Self {
        self.children.push(ChildEdge {
            guard,
            child: child.into(),
        });
        self
    }

    pub fn immutable(mut self) -> Self {
        self.mutable = false;
        self
    }

    /// Whether `value` lies in this spec's domain.
    pub fn contains(&self, value: &ParamValue) -> bool {
        match (&self.domain, value) {
            (Domain::Integer { bounds }, ParamValue::Int(v)) => bounds[0] <= *v && *v <= bounds[1],
            (Domain::Float { bounds, .. }, v) => v
                .as_f64()
                .is_some_and(|x| x.is_finite() && bounds[0] <= x && x <= bounds[1]),
            (Domain::Discrete { feasible_values }, v) => {
                v.as_f64().is_some_and(|x| feasible_values.contains(&x))
            }
            (Domain::Categorical { feasible_values }, ParamValue::Categorical(s)) => {
                feasible_values.contains(s)
            }
            _ => false,
        }
    }

    /// Draws a value uniformly from the domain (log-uniformly for log-scale floats).
    pub fn sample_value<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamValue {
        match &self.domain {
            Domain::Integer { bounds } => ParamValue::Int(rng.random_range(bounds[0]..=bounds[1])),
            Domain::Float { bounds, scale } => {
                let u: f64 = rng.random();
                let x = match scale {
                    Scale::Linear => bounds[0] + u * (bounds[1] - bounds[0]),
                    Scale::Log => {
                        let (lo, hi) = (bounds[0].ln(), bounds[1].ln());
                        (lo + u * (hi - lo)).exp()
                    }
                };
                ParamValue::Float(x.clamp(bounds[0], bounds[1]))
            }
            Domain::Discrete { feasible_values } => {
                ParamValue::Float(feasible_values[rng.random_range(0..feasible_values.len())])
            }
            Domain::Categorical { feasible_values } => ParamValue::Categorical(
                feasible_values[rng.random_range(0..feasible_values.len())].clone(),
            ),
        }
    }
}

/// Names of specs that are never the target of a child edge, in declaration order.
pub fn root_names(specs: &[ParameterSpec]) -> Vec<&str> {
    let targets: HashSet<&str> = specs
        .iter()
        .flat_map(|s| s.children.iter().map(|e| e.child.as_str()))
        .collect();
    specs
        .iter()
        .map(|s| s.name.as_str())
        .filter(|n| !targets.contains(n))
        .collect()
}

pub(crate) fn spec_index(specs: &[ParameterSpec]) -> HashMap<&str, &ParameterSpec> {
    specs.iter().map(|s| (s.name.as_str(), s)).collect()
}

/// Children of `spec` activated by `value`, deduplicated, in edge order.
pub(crate) fn active_children<'a>(spec: &'a ParameterSpec, value: &ParamValue) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for edge in &spec.children {
        if edge.guard.matches(value) && !out.contains(&edge.child.as_str()) {
            out.push(edge.child.as_str());
        }
    }
    out
}

/// Walks the active part of the search space depth-first from the roots.
///
/// `assign` is called once per active spec, in a deterministic order, and
/// returns the value that decides which children become active.
pub(crate) fn walk_active<F>(specs: &[ParameterSpec], mut assign: F) -> HParams
where
    F: FnMut(&ParameterSpec) -> ParamValue,
{
    let index = spec_index(specs);
    let mut out = HParams::new();
    let mut stack: Vec<&str> = root_names(specs).into_iter().rev().collect();
    while let Some(name) = stack.pop() {
        let Some(spec) = index.get(name) else {
            continue;
        };
        if out.contains_key(name) {
            continue;
        }
        let value = assign(spec);
        for child in active_children(spec, &value).into_iter().rev() {
            stack.push(child);
        }
        out.insert(name.to_string(), value);
    }
    out
}

/// Samples a full assignment: every root, plus each child whose guard matches.
pub fn sample_hparams<R: Rng + ?Sized>(specs: &[ParameterSpec], rng: &mut R) -> HParams {
    walk_active(specs, |spec| spec.sample_value(rng))
}

/// Names of the specs that are active under `hparams`.
pub fn active_spec_names(specs: &[ParameterSpec], hparams: &HParams) -> Vec<String> {
    let index = spec_index(specs);
    let mut out = Vec::new();
    let mut stack: Vec<&str> = root_names(specs).into_iter().rev().collect();
    while let Some(name) = stack.pop() {
        if out.iter().any(|n| n == name) {
            continue;
        }
        out.push(name.to_string());
        if let (Some(spec), Some(value)) = (index.get(name), hparams.get(name)) {
            for child in active_children(spec, value).into_iter().rev() {
                stack.push(child);
            }
        }
    }
    out
}

/// Checks that `hparams` assigns an in-domain value to exactly the active specs.
pub fn check_assignment(specs: &[ParameterSpec], hparams: &HParams) -> Result<(), String> {
    let index = spec_index(specs);
    let active = active_spec_names(specs, hparams);
    for name in &active {
        let value = hparams
            .get(name)
            .ok_or_else(|| format!("active parameter `{name}` has no value"))?;
        if !index[name.as_str()].contains(value) {
            return Err(format!("value {value} out of domain for `{name}`"));
        }
    }
    if let Some(extra) = hparams.keys().find(|k| !active.contains(k)) {
        return Err(format!("inactive parameter `{extra}` has a value"));
    }
    Ok(())
}
