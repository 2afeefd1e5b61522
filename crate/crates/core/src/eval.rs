//! Scoring produced plans against a gold corpus.
//!
//! Counts are per gold task: a two-task prompt contributes two to each
//! denominator. Condition and dependency columns only count tasks whose
//! gold annotation declares one.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::engine::{Clock, ExecutionReport};
use crate::naming::Intent;
use crate::plan::{ConditionKind, ConditionPredicate};
use crate::resolve::ResolvedPlan;
use crate::text::canonicalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Simple,
    Complex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldTask {
    pub intent: Intent,
    pub norm_target: String,
    pub expected_weight_id: Option<String>,
    #[serde(default)]
    pub depends_on: Vec<String>,
    #[serde(default)]
    pub condition: Option<ConditionPredicate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub prompt: String,
    pub kind: PromptKind,
    pub expected_tasks: Vec<GoldTask>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_answer_class: Option<String>,
    /// Outcome the stub backend is forced to when checking the answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stub_outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoldError {
    #[error("{prompt:?}: marked {kind:?} but has {tasks} task(s) and conditions={conditional}")]
    KindMismatch {
        prompt: String,
        kind: PromptKind,
        tasks: usize,
        conditional: bool,
    },
    #[error("{prompt:?}: task reference {reference:?} is not one of t1..t{tasks}")]
    BadReference {
        prompt: String,
        reference: String,
        tasks: usize,
    },
}

impl GoldRecord {
    pub fn validate(&self) -> Result<(), GoldError> {
        let n = self.expected_tasks.len();
        let conditional = self.expected_tasks.iter().any(|t| t.condition.is_some());
        let complex = n > 1 || conditional;
        if complex != (self.kind == PromptKind::Complex) {
            return Err(GoldError::KindMismatch {
                prompt: self.prompt.clone(),
                kind: self.kind,
                tasks: n,
                conditional,
            });
        }
        for t in &self.expected_tasks {
            let refs = t.depends_on.iter().chain(t.condition.as_ref().map(|c| &c.source_task));
            for r in refs {
                if gold_index(r).is_none_or(|i| i >= n) {
                    return Err(GoldError::BadReference {
                        prompt: self.prompt.clone(),
                        reference: r.clone(),
                        tasks: n,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Gold tasks are referenced as `t1..tn` by position.
fn gold_index(id: &str) -> Option<usize> {
    id.strip_prefix('t')?.parse::<usize>().ok()?.checked_sub(1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskFlags {
    pub intention: bool,
    pub target: bool,
    pub weight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<bool>,
    pub overall: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectnessFlags {
    pub intention: bool,
    pub target: bool,
    pub weight: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dependency: Option<bool>,
    pub overall: bool,
    pub tasks: Vec<TaskFlags>,
}

impl CorrectnessFlags {
    fn from_tasks(tasks: Vec<TaskFlags>) -> Self {
        let all = |f: fn(&TaskFlags) -> bool| tasks.iter().all(f);
        let declared = |f: fn(&TaskFlags) -> Option<bool>| {
            let flags: Vec<bool> = tasks.iter().filter_map(f).collect();
            (!flags.is_empty()).then(|| flags.iter().all(|&b| b))
        };
        Self {
            intention: all(|t| t.intention),
            target: all(|t| t.target),
            weight: all(|t| t.weight),
            condition: declared(|t| t.condition),
            dependency: declared(|t| t.dependency),
            overall: all(|t| t.overall),
            tasks,
        }
    }

    /// Every flag false, for records whose planning failed outright.
    pub fn failed(gold: &GoldRecord) -> Self {
        let tasks = gold
            .expected_tasks
            .iter()
            .map(|g| TaskFlags {
                intention: false,
                target: false,
                weight: false,
                condition: g.condition.as_ref().map(|_| false),
                dependency: (!g.depends_on.is_empty()).then_some(false),
                overall: false,
            })
            .collect();
        Self::from_tasks(tasks)
    }
}

fn same_condition(
    gold: &ConditionPredicate,
    got: &ConditionPredicate,
    produced_index: &dyn Fn(&str) -> Option<usize>,
) -> bool {
    let kinds_match = match (&gold.kind, &got.kind) {
        (ConditionKind::ClassEquals { label: a }, ConditionKind::ClassEquals { label: b }) => {
            canonicalize(a) == canonicalize(b)
        }
        (a, b) => a == b,
    };
    kinds_match && gold_index(&gold.source_task) == produced_index(&got.source_task)
}

/// Task-by-task comparison; gold order is authoritative.
pub fn compare_plan(gold: &GoldRecord, plan: &ResolvedPlan) -> CorrectnessFlags {
    compare_with_answer(gold, plan, None)
}

/// Like [`compare_plan`], also requiring the expected answer class when the
/// gold record names one and an execution report is supplied.
pub fn compare_with_answer(gold: &GoldRecord, plan: &ResolvedPlan, report: Option<&ExecutionReport>) -> CorrectnessFlags {
    if plan.tasks.len() != gold.expected_tasks.len() {
        return CorrectnessFlags::failed(gold);
    }
    let produced_index = |id: &str| plan.tasks.iter().position(|t| t.id() == id);
    let answer_ok = match (&gold.expected_answer_class, report) {
        (Some(expected), Some(report)) => first_prediction(report).is_some_and(|p| canonicalize(p) == canonicalize(expected)),
        _ => true,
    };
    let tasks = gold
        .expected_tasks
        .iter()
        .zip(&plan.tasks)
        .map(|(g, t)| {
            let intention = g.intent == t.spec.intent;
            let target = canonicalize(&g.norm_target) == t.target();
            let weight = g.expected_weight_id == t.selected_weight;
            let condition_match = match (&g.condition, &t.spec.condition) {
                (Some(gc), Some(tc)) => same_condition(gc, tc, &produced_index),
                (None, None) => true,
                _ => false,
            };
            let mut gold_deps: Vec<Option<usize>> = g.depends_on.iter().map(|d| gold_index(d)).collect();
            let mut got_deps: Vec<Option<usize>> = t.spec.depends_on.iter().map(|d| produced_index(d)).collect();
            gold_deps.sort();
            gold_deps.dedup();
            got_deps.sort();
            got_deps.dedup();
            let dependency_match = gold_deps == got_deps;
            TaskFlags {
                intention,
                target,
                weight,
                condition: g.condition.as_ref().map(|_| condition_match),
                dependency: (!g.depends_on.is_empty()).then_some(dependency_match),
                overall: intention && target && weight && condition_match && dependency_match && answer_ok,
            }
        })
        .collect();
    CorrectnessFlags::from_tasks(tasks)
}

/// Predicted label of the first classification that ran.
pub fn first_prediction(report: &ExecutionReport) -> Option<&str> {
    report
        .results
        .iter()
        .find_map(|r| r.classification().map(|c| c.predicted_label.as_str()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Count {
    pub hits: usize,
    pub total: usize,
}

impl Count {
    pub fn add(&mut self, hit: bool) {
        self.total += 1;
        self.hits += usize::from(hit);
    }

    pub fn merge(self, other: Count) -> Count {
        Count {
            hits: self.hits + other.hits,
            total: self.total + other.total,
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }

    /// `"x/y"`, or `"Null"` when nothing was counted.
    pub fn fraction(&self) -> String {
        if self.total == 0 {
            "Null".into()
        } else {
            format!("{}/{}", self.hits, self.total)
        }
    }

    /// Percentage to two decimals with trailing zeros dropped, e.g. `99.13%`, `95%`.
    pub fn percent(&self) -> String {
        match self.ratio() {
            None => String::new(),
            Some(r) => format!("{}%", trim_decimals(&format!("{:.2}", r * 100.0))),
        }
    }
}

fn trim_decimals(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub questions: usize,
    pub intention: Count,
    pub target: Count,
    pub weight: Count,
    pub condition: Count,
    pub dependency: Count,
    pub overall: Count,
    /// Summed seconds spent planning and resolving.
    pub frontend_seconds: f64,
    /// Summed seconds spent executing.
    pub execution_seconds: f64,
}

impl MetricsRow {
    fn new(label: &str) -> Self {
        Self {
            label: label.into(),
            ..Self::default()
        }
    }

    pub fn add(&mut self, flags: &CorrectnessFlags, frontend_seconds: f64, execution_seconds: f64) {
        self.questions += 1;
        for t in &flags.tasks {
            self.intention.add(t.intention);
            self.target.add(t.target);
            self.weight.add(t.weight);
            if let Some(c) = t.condition {
                self.condition.add(c);
            }
            if let Some(d) = t.dependency {
                self.dependency.add(d);
            }
            self.overall.add(t.overall);
        }
        self.frontend_seconds += frontend_seconds;
        self.execution_seconds += execution_seconds;
    }

    pub fn merge(&self, other: &MetricsRow, label: &str) -> MetricsRow {
        MetricsRow {
            label: label.into(),
            questions: self.questions + other.questions,
            intention: self.intention.merge(other.intention),
            target: self.target.merge(other.target),
            weight: self.weight.merge(other.weight),
            condition: self.condition.merge(other.condition),
            dependency: self.dependency.merge(other.dependency),
            overall: self.overall.merge(other.overall),
            frontend_seconds: self.frontend_seconds + other.frontend_seconds,
            execution_seconds: self.execution_seconds + other.execution_seconds,
        }
    }

    pub fn average_seconds(&self) -> Option<f64> {
        (self.questions > 0).then(|| (self.frontend_seconds + self.execution_seconds) / self.questions as f64)
    }

    fn counts(&self) -> [&Count; 6] {
        [
            &self.intention,
            &self.target,
            &self.weight,
            &self.condition,
            &self.dependency,
            &self.overall,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub simple: MetricsRow,
    pub complex: MetricsRow,
    pub overall: MetricsRow,
}

impl Default for MetricsTable {
    fn default() -> Self {
        Self::new()
    }
}

pub const TABLE_HEADERS: [&str; 9] = [
    "Question Type",
    "Number of Questions",
    "Intention",
    "Target",
    "Weight",
    "Condition",
    "Dependency",
    "Overall Correctness",
    "Average Time (CPU)",
];

impl MetricsTable {
    pub fn new() -> Self {
        Self {
            simple: MetricsRow::new("Simple"),
            complex: MetricsRow::new("Complex"),
            overall: MetricsRow::new("Overall"),
        }
    }

    pub fn add(&mut self, kind: PromptKind, flags: &CorrectnessFlags, frontend_seconds: f64, execution_seconds: f64) {
        match kind {
            PromptKind::Simple => self.simple.add(flags, frontend_seconds, execution_seconds),
            PromptKind::Complex => self.complex.add(flags, frontend_seconds, execution_seconds),
        }
        self.overall = self.simple.merge(&self.complex, "Overall");
    }

    pub fn rows(&self) -> [&MetricsRow; 3] {
        [&self.simple, &self.complex, &self.overall]
    }

    /// Two lines per row (counts, then percentages) under a single header,
    /// columns padded to align.
    pub fn format(&self) -> String {
        let mut grid: Vec<[String; 9]> = Vec::new();
        grid.push(TABLE_HEADERS.map(String::from));
        for row in self.rows() {
            let counts = row.counts();
            let time = row.average_seconds().map_or("Null".into(), |s| format!("{s:.2}s"));
            grid.push([
                row.label.clone(),
                row.questions.to_string(),
                counts[0].fraction(),
                counts[1].fraction(),
                counts[2].fraction(),
                counts[3].fraction(),
                counts[4].fraction(),
                counts[5].fraction(),
                time,
            ]);
            grid.push([
                String::new(),
                String::new(),
                counts[0].percent(),
                counts[1].percent(),
                counts[2].percent(),
                counts[3].percent(),
                counts[4].percent(),
                counts[5].percent(),
                String::new(),
            ]);
        }
        let mut widths = [0usize; 9];
        for line in &grid {
            for (w, cell) in widths.iter_mut().zip(line) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for (i, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(widths)
                .map(|(c, w)| format!("{c:<w$}"))
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
            if i == 0 || i % 2 == 0 {
                let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
            }
        }
        out
    }
}

/// Result of scoring one gold record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub prompt: String,
    pub kind: PromptKind,
    pub flags: CorrectnessFlags,
    pub frontend_seconds: f64,
    pub execution_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub table: MetricsTable,
    pub records: Vec<RecordOutcome>,
}

/// Executes a resolved plan for one gold record.
pub type ExecuteFn<'a> = dyn FnMut(&GoldRecord, &ResolvedPlan) -> Result<ExecutionReport, String> + 'a;

/// Plans (and optionally executes) every record and tabulates the flags.
///
/// `plan` turns a prompt into a resolved plan; `execute`, when given, runs
/// it so the expected answer class can be checked. Errors from either are
/// recorded and count as false flags.
pub fn run_eval(
    corpus: &[GoldRecord],
    plan: &mut dyn FnMut(&str) -> Result<ResolvedPlan, String>,
    mut execute: Option<&mut ExecuteFn<'_>>,
    clock: &dyn Clock,
) -> EvalRun {
    let mut table = MetricsTable::new();
    let mut records = Vec::with_capacity(corpus.len());
    for gold in corpus {
        let t0 = clock.now();
        let planned = plan(&gold.prompt);
        let frontend_seconds = clock.now() - t0;
        let mut execution_seconds = 0.0;
        let (flags, error) = match planned {
            Err(e) => (CorrectnessFlags::failed(gold), Some(e)),
            Ok(resolved) => match execute.as_mut() {
                Some(run) if gold.expected_answer_class.is_some() => {
                    let t1 = clock.now();
                    let report = run(gold, &resolved);
                    execution_seconds = clock.now() - t1;
                    match report {
                        Ok(report) => (compare_with_answer(gold, &resolved, Some(&report)), None),
                        Err(e) => {
                            let mut flags = compare_plan(gold, &resolved);
                            for t in &mut flags.tasks {
                                t.overall = false;
                            }
                            flags.overall = false;
                            (flags, Some(e))
                        }
                    }
                }
                _ => (compare_plan(gold, &resolved), None),
            },
        };
        table.add(gold.kind, &flags, frontend_seconds, execution_seconds);
        records.push(RecordOutcome {
            prompt: gold.prompt.clone(),
            kind: gold.kind,
            flags,
            frontend_seconds,
            execution_seconds,
            error,
        });
    }
    EvalRun { table, records }
}

/// Parses a JSONL corpus, skipping blank lines and `#` comments.
pub fn parse_corpus(jsonl: &str) -> Result<Vec<GoldRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in jsonl.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let record: GoldRecord = serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        record.validate().map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(record);
    }
    Ok(out)
}
