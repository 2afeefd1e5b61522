//! Plan schema: tasks with intents, targets, dependencies and conditions.
//!
//! The JSON form accepted from a planner (and emitted by the offline
//! parser) is
//!
//! ```json
//! {
//!   "tasks": [
//!     {"id": "t1", "intent": "classification", "target": "viral pneumonia"},
//!     {"id": "t2", "intent": "segmentation", "target": "lung", "modality": "cxr",
//!      "depends_on": ["t1"],
//!      "condition": {"source_task": "t1", "kind": "outcome_positive"}}
//!   ]
//! }
//! ```
//!
//! `kind` is one of `outcome_positive`, `outcome_negative` or
//! `class_equals` (with a `label`). Missing ids become `t1`, `t2`, ... in
//! array order, a condition without `source_task` (or with `"previous"`)
//! binds to the preceding task, and a condition's source is added to
//! `depends_on` when absent.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::naming::Intent;
use crate::text::canonicalize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditionKind {
    OutcomePositive,
    OutcomeNegative,
    ClassEquals { label: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionPredicate {
    pub source_task: String,
    #[serde(flatten)]
    pub kind: ConditionKind,
}

impl ConditionPredicate {
    pub fn positive(source: &str) -> Self {
        Self {
            source_task: source.to_string(),
            kind: ConditionKind::OutcomePositive,
        }
    }

    pub fn negative(source: &str) -> Self {
        Self {
            source_task: source.to_string(),
            kind: ConditionKind::OutcomeNegative,
        }
    }

    pub fn class_equals(source: &str, label: &str) -> Self {
        Self {
            source_task: source.to_string(),
            kind: ConditionKind::ClassEquals {
                label: canonicalize(label),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    #[serde(rename = "id")]
    pub task_id: String,
    pub intent: Intent,
    #[serde(rename = "target")]
    pub raw_target: String,
    #[serde(rename = "modality", default, skip_serializing_if = "Option::is_none")]
    pub raw_modality: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub depends_on: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<ConditionPredicate>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    #[serde(default)]
    pub query: String,
    pub tasks: Vec<TaskSpec>,
}

impl Plan {
    pub fn task(&self, id: &str) -> Option<&TaskSpec> {
        self.tasks.iter().find(|t| t.task_id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("no JSON object found in planner output")]
    NoJsonFound,
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("task {task:?} depends on undeclared task {missing:?}")]
    DanglingDependency { task: String, missing: String },
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> PlanError {
    PlanError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

/// Returns the first well-formed JSON object embedded in `raw`, skipping
/// surrounding prose and code fences.
pub fn extract_json_object(raw: &str) -> Option<Map<String, Value>> {
    for (start, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Parses and validates planner output.
pub fn parse_plan(raw: &str) -> Result<Plan, PlanError> {
    let root = extract_json_object(raw).ok_or(PlanError::NoJsonFound)?;
    plan_from_json(&root)
}

pub fn plan_from_json(root: &Map<String, Value>) -> Result<Plan, PlanError> {
    let query = match root.get("query") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(q)) => q.clone(),
        Some(_) => return Err(violation("query", "expected a string")),
    };
    let tasks = match root.get("tasks") {
        Some(Value::Array(items)) => items,
        Some(_) => return Err(violation("tasks", "expected an array")),
        None => return Err(violation("tasks", "missing")),
    };

    let mut specs = Vec::with_capacity(tasks.len());
    for (i, item) in tasks.iter().enumerate() {
        let prev = specs.last().map(|t: &TaskSpec| t.task_id.clone());
        specs.push(task_from_json(i, item, prev.as_deref())?);
    }
    let plan = Plan { query, tasks: specs };
    validate_plan(&plan)?;
    Ok(plan)
}

fn task_from_json(index: usize, item: &Value, prev: Option<&str>) -> Result<TaskSpec, PlanError> {
    let path = |field: &str| format!("tasks[{index}].{field}");
    let obj = item
        .as_object()
        .ok_or_else(|| violation(format!("tasks[{index}]"), "expected an object"))?;

    let task_id = match obj.get("id").or_else(|| obj.get("task_id")) {
        None | Some(Value::Null) => format!("t{}", index + 1),
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        Some(_) => return Err(violation(path("id"), "expected a non-empty string")),
    };

    let intent = match obj.get("intent") {
        Some(Value::String(s)) => Intent::from_token(s)
            .ok_or_else(|| violation(path("intent"), format!("unknown intent {s:?}")))?,
        Some(_) => return Err(violation(path("intent"), "expected a string")),
        None => return Err(violation(path("intent"), "missing")),
    };

    let raw_target = match obj.get("target") {
        Some(Value::String(s)) if !canonicalize(s).is_empty() => s.trim().to_string(),
        Some(Value::String(_)) => return Err(violation(path("target"), "empty")),
        Some(_) => return Err(violation(path("target"), "expected a string")),
        None => return Err(violation(path("target"), "missing")),
    };

    let raw_modality = match obj.get("modality") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) if canonicalize(s).is_empty() => None,
        Some(Value::String(s)) => Some(s.trim().to_string()),
        Some(_) => return Err(violation(path("modality"), "expected a string or null")),
    };

    let mut depends_on = Vec::new();
    match obj.get("depends_on") {
        None | Some(Value::Null) => {}
        Some(Value::Array(items)) => {
            for (j, dep) in items.iter().enumerate() {
                match dep {
                    Value::String(s) if !s.trim().is_empty() => {
                        let dep = bind_previous(s.trim(), prev)
                            .ok_or_else(|| violation(format!("tasks[{index}].depends_on[{j}]"), "no previous task"))?;
                        if !depends_on.contains(&dep) {
                            depends_on.push(dep);
                        }
                    }
                    _ => {
                        return Err(violation(
                            format!("tasks[{index}].depends_on[{j}]"),
                            "expected a task id string",
                        ))
                    }
                }
            }
        }
        Some(_) => return Err(violation(path("depends_on"), "expected an array")),
    }

    let condition = match obj.get("condition") {
        None | Some(Value::Null) => None,
        Some(Value::Object(c)) => Some(condition_from_json(&path("condition"), c, prev)?),
        Some(_) => return Err(violation(path("condition"), "expected an object or null")),
    };
    if let Some(c) = &condition {
        if !depends_on.contains(&c.source_task) {
            depends_on.push(c.source_task.clone());
        }
    }

    Ok(TaskSpec {
        task_id,
        intent,
        raw_target,
        raw_modality,
        depends_on,
        condition,
    })
}

fn bind_previous(id: &str, prev: Option<&str>) -> Option<String> {
    let lowered = canonicalize(id);
    if lowered == "previous" || lowered == "previous task" || lowered == "prev" {
        prev.map(ToString::to_string)
    } else {
        Some(id.to_string())
    }
}

fn condition_from_json(
    path: &str,
    obj: &Map<String, Value>,
    prev: Option<&str>,
) -> Result<ConditionPredicate, PlanError> {
    let source_task = match obj.get("source_task") {
        None | Some(Value::Null) => prev
            .map(ToString::to_string)
            .ok_or_else(|| violation(format!("{path}.source_task"), "missing and no previous task"))?,
        Some(Value::String(s)) => bind_previous(s.trim(), prev)
            .ok_or_else(|| violation(format!("{path}.source_task"), "no previous task"))?,
        Some(_) => return Err(violation(format!("{path}.source_task"), "expected a string")),
    };
    let kind = match obj.get("kind") {
        Some(Value::String(k)) => match k.as_str() {
            "outcome_positive" => ConditionKind::OutcomePositive,
            "outcome_negative" => ConditionKind::OutcomeNegative,
            "class_equals" => match obj.get("label") {
                Some(Value::String(l)) if !canonicalize(l).is_empty() => ConditionKind::ClassEquals {
                    label: canonicalize(l),
                },
                _ => return Err(violation(format!("{path}.label"), "class_equals needs a non-empty label")),
            },
            other => {
                return Err(violation(
                    format!("{path}.kind"),
                    format!("unknown condition kind {other:?}"),
                ))
            }
        },
        Some(_) => return Err(violation(format!("{path}.kind"), "expected a string")),
        None => return Err(violation(format!("{path}.kind"), "missing")),
    };
    Ok(ConditionPredicate { source_task, kind })
}

/// Structural checks shared by every planner: unique ids, resolvable
/// dependencies, and each condition's source listed in `depends_on`.
/// Acyclicity is checked later on the resolved plan.
pub fn validate_plan(plan: &Plan) -> Result<(), PlanError> {
    let mut ids = BTreeSet::new();
    for (i, t) in plan.tasks.iter().enumerate() {
        if t.task_id.is_empty() {
            return Err(violation(format!("tasks[{i}].id"), "empty"));
        }
        if !ids.insert(t.task_id.as_str()) {
            return Err(violation(
                format!("tasks[{i}].id"),
                format!("duplicate task id {:?}", t.task_id),
            ));
        }
        if canonicalize(&t.raw_target).is_empty() {
            return Err(violation(format!("tasks[{i}].target"), "empty"));
        }
    }
    for (i, t) in plan.tasks.iter().enumerate() {
        for dep in &t.depends_on {
            if !ids.contains(dep.as_str()) {
                return Err(PlanError::DanglingDependency {
                    task: t.task_id.clone(),
                    missing: dep.clone(),
                });
            }
        }
        if let Some(c) = &t.condition {
            if !ids.contains(c.source_task.as_str()) {
                return Err(PlanError::DanglingDependency {
                    task: t.task_id.clone(),
                    missing: c.source_task.clone(),
                });
            }
            if !t.depends_on.contains(&c.source_task) {
                return Err(violation(
                    format!("tasks[{i}].condition.source_task"),
                    "condition source is not among depends_on",
                ));
            }
            if let ConditionKind::ClassEquals { label } = &c.kind {
                if canonicalize(label) != *label || label.is_empty() {
                    return Err(violation(format!("tasks[{i}].condition.label"), "label is not canonical"));
                }
            }
        }
    }
    Ok(())
}
