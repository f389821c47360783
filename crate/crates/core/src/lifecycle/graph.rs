//! Warm-start dependency graphs.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::model::{Trial, TrialId};

use super::LifecycleError;

/// Ancestor closure of some target trials, with edges child → parent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DependencyGraph {
    /// Sorted by id.
    pub nodes: Vec<TrialId>,
    pub edges: Vec<(TrialId, TrialId)>,
    /// Topological order, parents first; ties broken by suggestion order.
    pub execution_order: Vec<TrialId>,
}

impl DependencyGraph {
    pub fn parent_of(&self, child: TrialId) -> Option<TrialId> {
        self.edges
            .iter()
            .find(|(c, _)| *c == child)
            .map(|(_, p)| *p)
    }
}

/// Collects the targets and all their warm-start ancestors.
///
/// Targets must be completed; every ancestor must be present in `trials`.
pub fn extract_dependency_graph(
    targets: &[TrialId],
    trials: &[Trial],
) -> Result<DependencyGraph, LifecycleError> {
    let by_id: BTreeMap<TrialId, &Trial> = trials.iter().map(|t| (t.trial_id, t)).collect();
    for id in targets {
        let t = by_id.get(id).ok_or(LifecycleError::UnknownTrial(*id))?;
        if !t.is_completed() {
            return Err(LifecycleError::InvalidTarget {
                trial_id: *id,
                status: t.status,
            });
        }
    }

    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    let mut stack: Vec<TrialId> = targets.to_vec();
    while let Some(id) = stack.pop() {
        if !nodes.insert(id) {
            continue;
        }
        let trial = by_id[&id];
        if let Some(parent) = trial.parent_trial_id {
            if !by_id.contains_key(&parent) {
                return Err(LifecycleError::IncompleteLineage {
                    trial_id: id,
                    missing: parent,
                });
            }
            edges.insert((id, parent));
            stack.push(parent);
        }
    }

    // Kahn's algorithm over parent → children, smallest id first.
    let mut children: BTreeMap<TrialId, Vec<TrialId>> = BTreeMap::new();
    let mut indegree: BTreeMap<TrialId, usize> = nodes.iter().map(|&n| (n, 0)).collect();
    for &(child, parent) in &edges {
        children.entry(parent).or_default().push(child);
        *indegree.get_mut(&child).expect("child is a node") += 1;
    }
    let mut ready: BinaryHeap<Reverse<TrialId>> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| Reverse(n))
        .collect();
    let mut execution_order = Vec::with_capacity(nodes.len());
    while let Some(Reverse(n)) = ready.pop() {
        execution_order.push(n);
        for &c in children.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            let d = indegree.get_mut(&c).expect("child is a node");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if execution_order.len() != nodes.len() {
        return Err(LifecycleError::Cyclic);
    }

    Ok(DependencyGraph {
        nodes: nodes.into_iter().collect(),
        edges: edges.into_iter().collect(),
        execution_order,
    })
}
