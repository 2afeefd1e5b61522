//! Dependency-graph checks and deterministic ordering for resolved plans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::naming::Intent;
use crate::plan::ConditionKind;
use crate::resolve::ResolvedPlan;
use crate::text::{canonicalize, natural_cmp};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("dependency cycle: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("task {task:?} depends on undeclared task {missing:?}")]
    DanglingDependency { task: String, missing: String },
    #[error("task {task:?} is gated on {source_task:?}, which is a segmentation task")]
    BadConditionSource { task: String, source_task: String },
    #[error("task {task:?} is gated on label {label:?}, which {source_task:?} cannot predict")]
    UnknownConditionLabel {
        task: String,
        source_task: String,
        label: String,
    },
}

/// Task ids with their dependencies, in plan order.
#[derive(Debug, Clone, Default)]
pub struct TaskGraph {
    nodes: Vec<(String, Vec<String>)>,
}

#[derive(PartialEq, Eq)]
struct Ready<'a>(&'a str);

impl Ord for Ready<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        natural_cmp(self.0, other.0)
    }
}

impl PartialOrd for Ready<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl TaskGraph {
    pub fn new<I, D>(nodes: I) -> Self
    where
        I: IntoIterator<Item = (String, D)>,
        D: IntoIterator<Item = String>,
    {
        Self {
            nodes: nodes
                .into_iter()
                .map(|(id, deps)| (id, deps.into_iter().collect()))
                .collect(),
        }
    }

    pub fn from_plan(plan: &ResolvedPlan) -> Self {
        Self::new(
            plan.tasks
                .iter()
                .map(|t| {
                    let gate = t.spec.condition.as_ref().map(|c| c.source_task.clone());
                    (t.id().to_string(), t.spec.depends_on.iter().cloned().chain(gate))
                }),
        )
    }

    pub fn dangling(&self) -> Vec<DagError> {
        let ids: BTreeSet<&str> = self.nodes.iter().map(|(id, _)| id.as_str()).collect();
        self.nodes
            .iter()
            .flat_map(|(id, deps)| {
                deps.iter()
                    .filter(|d| !ids.contains(d.as_str()))
                    .map(move |d| DagError::DanglingDependency {
                        task: id.clone(),
                        missing: d.clone(),
                    })
            })
            .collect()
    }

    /// Kahn's algorithm; among ready tasks the smallest id (natural order)
    /// goes first. Returns the tasks left unordered when a cycle exists.
    fn kahn(&self) -> Result<Vec<String>, BTreeSet<String>> {
        let ids: BTreeSet<&str> = self.nodes.iter().map(|(id, _)| id.as_str()).collect();
        let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|&id| (id, 0)).collect();
        let mut dependents: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (id, deps) in &self.nodes {
            let unique: BTreeSet<&str> = deps.iter().map(String::as_str).filter(|d| ids.contains(d)).collect();
            for dep in unique {
                *indegree.get_mut(id.as_str()).expect("known id") += 1;
                dependents.entry(dep).or_default().push(id);
            }
        }
        let mut ready: BTreeSet<Ready<'_>> = indegree
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| Ready(id))
            .collect();
        let mut order = Vec::with_capacity(ids.len());
        while let Some(Ready(id)) = ready.pop_first() {
            order.push(id.to_string());
            for &next in dependents.get(id).map(Vec::as_slice).unwrap_or(&[]) {
                let d = indegree.get_mut(next).expect("known id");
                *d -= 1;
                if *d == 0 {
                    ready.insert(Ready(next));
                }
            }
        }
        if order.len() == ids.len() {
            Ok(order)
        } else {
            let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
            Err(ids.into_iter().filter(|id| !done.contains(id)).map(ToString::to_string).collect())
        }
    }

    /// Dependency-respecting execution order, or the first cycle found.
    pub fn topo_order(&self) -> Result<Vec<String>, DagError> {
        self.kahn().map_err(|stuck| DagError::CycleDetected(self.find_cycle(&stuck)))
    }

    /// Walks dependency edges inside the stuck set until a node repeats.
    fn find_cycle(&self, stuck: &BTreeSet<String>) -> Vec<String> {
        let deps: BTreeMap<&str, &Vec<String>> = self.nodes.iter().map(|(id, d)| (id.as_str(), d)).collect();
        let Some(start) = stuck.iter().next() else {
            return Vec::new();
        };
        let mut path: Vec<&str> = alloc::vec![start.as_str()];
        loop {
            let current = *path.last().expect("non-empty");
            let next = deps[current]
                .iter()
                .map(String::as_str)
                .find(|d| stuck.contains(*d))
                .expect("every stuck node has a stuck dependency");
            if let Some(pos) = path.iter().position(|p| *p == next) {
                let mut cycle: Vec<String> = path[pos..].iter().rev().map(|s| s.to_string()).collect();
                cycle.push(cycle[0].clone());
                return cycle;
            }
            path.push(next);
        }
    }
}

/// Checks a resolved plan before execution. All problems are reported.
pub fn validate_dag(plan: &ResolvedPlan) -> Result<(), Vec<DagError>> {
    let graph = TaskGraph::from_plan(plan);
    let mut errors = graph.dangling();
    if errors.is_empty() {
        if let Err(e) = graph.topo_order() {
            errors.push(e);
        }
    }
    for task in &plan.tasks {
        let Some(cond) = &task.spec.condition else {
            continue;
        };
        // a missing source is already reported as dangling
        let Some(source) = plan.task(&cond.source_task) else {
            continue;
        };
        if source.spec.intent != Intent::Classification {
            errors.push(DagError::BadConditionSource {
                task: task.id().to_string(),
                source_task: source.id().to_string(),
            });
            continue;
        }
        if let ConditionKind::ClassEquals { label } = &cond.kind {
            // a source without a weight is skipped at run time; nothing to check
            let known = source.class_labels.is_empty()
                || source.class_labels.iter().any(|l| canonicalize(l) == canonicalize(label));
            if !known {
                errors.push(DagError::UnknownConditionLabel {
                    task: task.id().to_string(),
                    source_task: source.id().to_string(),
                    label: label.clone(),
                });
            }
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Execution order for a plan that passed [`validate_dag`].
pub fn topo_order(plan: &ResolvedPlan) -> Result<Vec<String>, DagError> {
    TaskGraph::from_plan(plan).topo_order()
}
