//! Conditional execution of a resolved plan against an inference backend.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dag::{topo_order, validate_dag, DagError};
use crate::labels::NEGATIVE_LABEL;
use crate::naming::Intent;
use crate::plan::{ConditionKind, ConditionPredicate};
use crate::registry::{Registry, WeightRecord};
use crate::resolve::{ResolvedPlan, ResolvedTask};
use crate::text::canonicalize;

/// Tolerance on the probability sum of a classification result.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Done,
    SkippedCondition,
    SkippedNoWeight,
    SkippedDependency,
    Failed,
}

impl TaskStatus {
    pub const ALL: [TaskStatus; 5] = [
        TaskStatus::Done,
        TaskStatus::SkippedCondition,
        TaskStatus::SkippedNoWeight,
        TaskStatus::SkippedDependency,
        TaskStatus::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskStatus::Done => "done",
            TaskStatus::SkippedCondition => "skipped_condition",
            TaskStatus::SkippedNoWeight => "skipped_no_weight",
            TaskStatus::SkippedDependency => "skipped_dependency",
            TaskStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationOutput {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
    pub predicted_label: String,
}

impl ClassificationOutput {
    /// Pairs probabilities with labels; the argmax breaks ties towards the
    /// lower index.
    pub fn from_probabilities(labels: &[String], probabilities: Vec<f64>) -> Result<Self, BackendError> {
        if probabilities.len() != labels.len() {
            return Err(BackendError::ProtocolViolation(format!(
                "expected {} probabilities, got {}",
                labels.len(),
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(BackendError::ProtocolViolation(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(BackendError::ProtocolViolation(format!("probabilities sum to {sum}")));
        }
        let best = argmax(&probabilities).ok_or_else(|| BackendError::ProtocolViolation("no probabilities".into()))?;
        Ok(Self {
            labels: labels.to_vec(),
            predicted_label: labels[best].clone(),
            probabilities,
        })
    }

    pub fn top_probability(&self) -> f64 {
        argmax(&self.probabilities).map_or(0.0, |i| self.probabilities[i])
    }
}

pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationOutput {
    pub mask_ref: String,
    pub foreground_fraction: f64,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_png_base64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskOutput {
    Classification(ClassificationOutput),
    Segmentation(SegmentationOutput),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("image could not be decoded: {0}")]
    DecodeFailure(String),
    #[error("weight {weight_id} cannot run {requested}")]
    IntentMismatch { weight_id: String, requested: Intent },
    #[error("forced outcome {0:?} is not a label of the weight")]
    InvalidForcedOutcome(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("{0}")]
    Other(String),
}

impl BackendError {
    pub fn kind(&self) -> &'static str {
        match self {
            BackendError::DecodeFailure(_) => "decode_failure",
            BackendError::IntentMismatch { .. } => "intent_mismatch",
            BackendError::InvalidForcedOutcome(_) => "invalid_forced_outcome",
            BackendError::Timeout(_) => "timeout",
            BackendError::ProtocolViolation(_) => "protocol_violation",
            BackendError::TransportFailure(_) => "transport_failure",
            BackendError::Other(_) => "other",
        }
    }
}

/// Something that can run a weight on an image.
pub trait InferenceBackend {
    type Image: ?Sized;

    /// Returns one probability per entry of `weight.class_labels`.
    fn classify(&self, image: &Self::Image, weight: &WeightRecord, task_id: &str) -> Result<Vec<f64>, BackendError>;

    fn segment(
        &self,
        image: &Self::Image,
        weight: &WeightRecord,
        task_id: &str,
    ) -> Result<SegmentationOutput, BackendError>;
}

impl<B: InferenceBackend + ?Sized> InferenceBackend for &B {
    type Image = B::Image;

    fn classify(&self, image: &Self::Image, weight: &WeightRecord, task_id: &str) -> Result<Vec<f64>, BackendError> {
        (**self).classify(image, weight, task_id)
    }

    fn segment(
        &self,
        image: &Self::Image,
        weight: &WeightRecord,
        task_id: &str,
    ) -> Result<SegmentationOutput, BackendError> {
        (**self).segment(image, weight, task_id)
    }
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Always reports zero; for reproducible reports.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock;

impl Clock for FrozenClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskError {
    pub kind: String,
    pub message: String,
}

impl From<&BackendError> for TaskError {
    fn from(e: &BackendError) -> Self {
        TaskError {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub intent: Intent,
    pub target: String,
    pub weight_id: Option<String>,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<TaskOutput>,
    /// Why the task did not run, in words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<TaskError>,
    pub duration: f64,
}

impl TaskResult {
    pub fn classification(&self) -> Option<&ClassificationOutput> {
        match &self.output {
            Some(TaskOutput::Classification(c)) => Some(c),
            _ => None,
        }
    }

    pub fn segmentation(&self) -> Option<&SegmentationOutput> {
        match &self.output {
            Some(TaskOutput::Segmentation(s)) => Some(s),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub query: String,
    pub results: Vec<TaskResult>,
    pub total_duration: f64,
    pub answer: String,
}

impl ExecutionReport {
    pub fn result(&self, task_id: &str) -> Option<&TaskResult> {
        self.results.iter().find(|r| r.task_id == task_id)
    }

    pub fn count(&self, status: TaskStatus) -> usize {
        self.results.iter().filter(|r| r.status == status).count()
    }

    /// Copy with every duration zeroed, for comparisons.
    pub fn without_durations(&self) -> Self {
        let mut copy = self.clone();
        copy.total_duration = 0.0;
        for r in &mut copy.results {
            r.duration = 0.0;
        }
        copy
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConditionError {
    #[error("condition source {0:?} did not produce a classification")]
    SourceNotDone(String),
}

pub fn evaluate_condition(predicate: &ConditionPredicate, source: &TaskResult) -> Result<bool, ConditionError> {
    let output = match (&source.status, source.classification()) {
        (TaskStatus::Done, Some(c)) => c,
        _ => return Err(ConditionError::SourceNotDone(source.task_id.clone())),
    };
    let predicted = output.predicted_label.as_str();
    Ok(match &predicate.kind {
        ConditionKind::OutcomePositive => predicted != NEGATIVE_LABEL,
        ConditionKind::OutcomeNegative => predicted == NEGATIVE_LABEL,
        ConditionKind::ClassEquals { label } => canonicalize(label) == canonicalize(predicted),
    })
}

fn condition_words(kind: &ConditionKind) -> String {
    match kind {
        ConditionKind::OutcomePositive => "outcome_positive".into(),
        ConditionKind::OutcomeNegative => "outcome_negative".into(),
        ConditionKind::ClassEquals { label } => format!("class_equals({label})"),
    }
}

/// Validates and runs `plan` in dependency order.
pub fn execute<B: InferenceBackend + ?Sized>(
    plan: &ResolvedPlan,
    registry: &Registry,
    image: &B::Image,
    backend: &B,
    clock: &dyn Clock,
) -> Result<ExecutionReport, Vec<DagError>> {
    validate_dag(plan)?;
    let order = topo_order(plan).map_err(|e| alloc::vec![e])?;
    let started = clock.now();
    let mut results: Vec<TaskResult> = Vec::with_capacity(order.len());
    for id in &order {
        let task = plan.task(id).expect("ordered ids come from the plan");
        let t0 = clock.now();
        let mut result = run_task(task, &results, registry, image, backend);
        result.duration = clock.now() - t0;
        results.push(result);
    }
    let mut report = ExecutionReport {
        query: plan.query.clone(),
        results,
        total_duration: clock.now() - started,
        answer: String::new(),
    };
    report.answer = render_answer(&report);
    Ok(report)
}

fn run_task<B: InferenceBackend + ?Sized>(
    task: &ResolvedTask,
    finished: &[TaskResult],
    registry: &Registry,
    image: &B::Image,
    backend: &B,
) -> TaskResult {
    let mut result = TaskResult {
        task_id: task.id().to_string(),
        intent: task.spec.intent,
        target: task.target().to_string(),
        weight_id: task.selected_weight.clone(),
        status: TaskStatus::Done,
        output: None,
        detail: None,
        error: None,
        duration: 0.0,
    };
    let lookup = |id: &str| finished.iter().find(|r| r.task_id == id);

    let blocked: Vec<String> = task
        .spec
        .depends_on
        .iter()
        .filter_map(|d| lookup(d))
        .filter(|r| r.status != TaskStatus::Done)
        .map(|r| format!("{} {}", r.task_id, r.status.as_str()))
        .collect();
    if !blocked.is_empty() {
        result.status = TaskStatus::SkippedDependency;
        result.detail = Some(blocked.join(", "));
        return result;
    }

    if let Some(cond) = &task.spec.condition {
        let source = lookup(&cond.source_task);
        let holds = source.map(|s| evaluate_condition(cond, s));
        match holds {
            Some(Ok(true)) => {}
            Some(Ok(false)) => {
                let predicted = source
                    .and_then(TaskResult::classification)
                    .map_or("", |c| c.predicted_label.as_str());
                result.status = TaskStatus::SkippedCondition;
                result.detail = Some(format!(
                    "{} {} not met (predicted {})",
                    cond.source_task,
                    condition_words(&cond.kind),
                    predicted
                ));
                return result;
            }
            Some(Err(_)) | None => {
                result.status = TaskStatus::SkippedDependency;
                result.detail = Some(format!("{} produced no classification", cond.source_task));
                return result;
            }
        }
    }

    let weight = match (task.skip_no_weight, task.selected_weight.as_deref().and_then(|w| registry.get(w))) {
        (None, Some(w)) => w,
        (reason, _) => {
            result.status = TaskStatus::SkippedNoWeight;
            result.detail = Some(reason.map_or("selected weight missing from registry", |r| r.as_str()).into());
            return result;
        }
    };

    let outcome = if weight.intent() != task.spec.intent {
        Err(BackendError::IntentMismatch {
            weight_id: weight.weight_id.clone(),
            requested: task.spec.intent,
        })
    } else {
        match task.spec.intent {
            Intent::Classification => backend
                .classify(image, weight, task.id())
                .and_then(|p| ClassificationOutput::from_probabilities(&weight.class_labels, p))
                .map(TaskOutput::Classification),
            Intent::Segmentation => backend.segment(image, weight, task.id()).and_then(|s| {
                if (0.0..=1.0).contains(&s.foreground_fraction) {
                    Ok(TaskOutput::Segmentation(s))
                } else {
                    Err(BackendError::ProtocolViolation(format!(
                        "foreground fraction {} outside [0, 1]",
                        s.foreground_fraction
                    )))
                }
            }),
        }
    };
    match outcome {
        Ok(output) => result.output = Some(output),
        Err(e) => {
            result.status = TaskStatus::Failed;
            result.detail = Some(e.to_string());
            result.error = Some(TaskError::from(&e));
        }
    }
    result
}

/// One line per task in execution order.
pub fn render_answer(report: &ExecutionReport) -> String {
    if report.results.is_empty() {
        return "no executable tasks".into();
    }
    let mut out = String::new();
    for (i, r) in report.results.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "{}: {}({})", r.task_id, r.intent.as_str(), r.target);
        match (&r.status, &r.output) {
            (TaskStatus::Done, Some(TaskOutput::Classification(c))) => {
                let _ = write!(out, " → {} (p={:.2})", c.predicted_label, c.top_probability());
            }
            (TaskStatus::Done, Some(TaskOutput::Segmentation(s))) => {
                let _ = write!(out, " → mask {} (foreground={:.4})", s.mask_ref, s.foreground_fraction);
            }
            (status, _) => {
                let _ = write!(out, " {}", status.as_str());
                if let Some(d) = &r.detail {
                    let _ = write!(out, ": {d}");
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TrigramSimilarity;
    use crate::normalize::{Normalizer, SynonymLexicon};
    use crate::plan::{Plan, TaskSpec};
    use crate::registry::WeightEntry;
    use crate::resolve::resolve_plan;
    use crate::router::RouteParams;
    use alloc::vec;

    /// Predicts a fixed label index for every classification.
    struct Fixed {
        index: usize,
        fail_on: Option<&'static str>,
    }

    impl InferenceBackend for Fixed {
        type Image = ();

        fn classify(&self, _: &(), weight: &WeightRecord, task_id: &str) -> Result<Vec<f64>, BackendError> {
            if self.fail_on == Some(task_id) {
                return Err(BackendError::TransportFailure("connection refused".into()));
            }
            let mut p = vec![0.0; weight.class_count];
            p[self.index.min(weight.class_count - 1)] = 1.0;
            Ok(p)
        }

        fn segment(&self, _: &(), weight: &WeightRecord, task_id: &str) -> Result<SegmentationOutput, BackendError> {
            Ok(SegmentationOutput {
                mask_ref: format!("{task_id}_{}.png", weight.weight_id),
                foreground_fraction: 0.25,
                width: 4,
                height: 4,
                mask_png_base64: None,
            })
        }
    }

    fn registry() -> Registry {
        Registry::build(
            ["Cls_Pneumonia_CXR", "Seg_Lung_CXR", "Cls_TB_CXR", "Cls_Covid-Pneumonia_CXR"].map(|s| WeightEntry {
                stem: s.into(),
                path: format!("{s}.pt"),
                sidecar: None,
            }),
            &SynonymLexicon::bundled(),
        )
        .unwrap()
    }

    fn spec(id: &str, intent: Intent, target: &str, deps: &[&str], cond: Option<ConditionPredicate>) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            intent,
            raw_target: target.into(),
            raw_modality: None,
            depends_on: deps.iter().map(|d| d.to_string()).collect(),
            condition: cond,
        }
    }

    fn resolved(tasks: Vec<TaskSpec>) -> (ResolvedPlan, Registry) {
        let reg = registry();
        let normalizer = Normalizer::<TrigramSimilarity>::new(SynonymLexicon::bundled());
        let plan = Plan {
            query: "q".into(),
            tasks,
        };
        (resolve_plan(&plan, &reg, &normalizer, RouteParams::default(), None), reg)
    }

    fn pneumonia_then_lung() -> Vec<TaskSpec> {
        vec![
            spec("t1", Intent::Classification, "viral pneumonia", &[], None),
            spec(
                "t2",
                Intent::Segmentation,
                "lungs",
                &["t1"],
                Some(ConditionPredicate::positive("t1")),
            ),
        ]
    }

    fn statuses(report: &ExecutionReport) -> Vec<(&str, TaskStatus)> {
        report.results.iter().map(|r| (r.task_id.as_str(), r.status)).collect()
    }

    #[test]
    fn positive_branch_runs_the_gated_task() {
        let (plan, reg) = resolved(pneumonia_then_lung());
        let report = execute(
            &plan,
            &reg,
            &(),
            &Fixed {
                index: 1,
                fail_on: None,
            },
            &FrozenClock,
        )
        .unwrap();
        assert_eq!(statuses(&report), [("t1", TaskStatus::Done), ("t2", TaskStatus::Done)]);
        assert_eq!(
            report.answer,
            "t1: classification(pneumonia) → pneumonia (p=1.00)\nt2: segmentation(lung) → mask t2_Seg_Lung_CXR.png (foreground=0.2500)"
        );
    }

    #[test]
    fn negative_branch_skips_the_gated_task() {
        let (plan, reg) = resolved(pneumonia_then_lung());
        let backend = Fixed {
            index: 0,
            fail_on: None,
        };
        let report = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap();
        assert_eq!(
            statuses(&report),
            [("t1", TaskStatus::Done), ("t2", TaskStatus::SkippedCondition)]
        );
        let line = report.answer.lines().nth(1).unwrap();
        assert!(line.contains("t1"), "{line}");
        assert!(report.results[1].output.is_none());
    }

    #[test]
    fn missing_weight_cascades() {
        let (plan, reg) = resolved(vec![
            spec("t1", Intent::Segmentation, "pancreas", &[], None),
            spec("t2", Intent::Classification, "tb", &["t1"], None),
            spec("t3", Intent::Segmentation, "lung", &["t2"], None),
        ]);
        let backend = Fixed {
            index: 1,
            fail_on: None,
        };
        let report = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap();
        assert_eq!(
            statuses(&report),
            [
                ("t1", TaskStatus::SkippedNoWeight),
                ("t2", TaskStatus::SkippedDependency),
                ("t3", TaskStatus::SkippedDependency),
            ]
        );
        assert_eq!(report.results[0].detail.as_deref(), Some("below_threshold"));
    }

    #[test]
    fn backend_failure_marks_failed_and_cascades() {
        let (plan, reg) = resolved(pneumonia_then_lung());
        let backend = Fixed {
            index: 1,
            fail_on: Some("t1"),
        };
        let report = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap();
        assert_eq!(
            statuses(&report),
            [("t1", TaskStatus::Failed), ("t2", TaskStatus::SkippedDependency)]
        );
        assert_eq!(report.results[0].error.as_ref().unwrap().kind, "transport_failure");
    }

    #[test]
    fn class_equals_gate() {
        let (plan, reg) = resolved(vec![
            spec("t1", Intent::Classification, "covid", &[], None),
            spec(
                "t2",
                Intent::Segmentation,
                "lung",
                &[],
                Some(ConditionPredicate::class_equals("t1", "Covid")),
            ),
        ]);
        let backend = Fixed {
            index: 0,
            fail_on: None,
        };
        let report = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap();
        assert_eq!(report.result("t1").unwrap().classification().unwrap().predicted_label, "covid");
        assert_eq!(report.result("t2").unwrap().status, TaskStatus::Done);
    }

    #[test]
    fn cycles_are_refused() {
        let (plan, reg) = resolved(vec![
            spec("t1", Intent::Classification, "tb", &["t2"], None),
            spec("t2", Intent::Classification, "tb", &["t1"], None),
        ]);
        let backend = Fixed {
            index: 1,
            fail_on: None,
        };
        let errors = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap_err();
        assert!(matches!(errors[0], DagError::CycleDetected(_)));
    }

    #[test]
    fn empty_plan_answer() {
        let (plan, reg) = resolved(Vec::new());
        let backend = Fixed {
            index: 0,
            fail_on: None,
        };
        let report = execute(&plan, &reg, &(), &backend, &FrozenClock).unwrap();
        assert_eq!(report.answer, "no executable tasks");
    }

    fn done(label: &str) -> TaskResult {
        TaskResult {
            task_id: "t1".into(),
            intent: Intent::Classification,
            target: "tb".into(),
            weight_id: None,
            status: TaskStatus::Done,
            output: Some(TaskOutput::Classification(ClassificationOutput {
                labels: vec!["negative".into(), "tb".into()],
                probabilities: vec![0.09, 0.91],
                predicted_label: label.into(),
            })),
            detail: None,
            error: None,
            duration: 0.0,
        }
    }

    #[test]
    fn condition_semantics() {
        assert_eq!(evaluate_condition(&ConditionPredicate::positive("t1"), &done("tb")), Ok(true));
        assert_eq!(
            evaluate_condition(&ConditionPredicate::negative("t1"), &done("negative")),
            Ok(true)
        );
        assert_eq!(
            evaluate_condition(&ConditionPredicate::class_equals("t1", "covid"), &done("pneumonia")),
            Ok(false)
        );
        let mut skipped = done("tb");
        skipped.status = TaskStatus::SkippedNoWeight;
        skipped.output = None;
        assert_eq!(
            evaluate_condition(&ConditionPredicate::positive("t1"), &skipped),
            Err(ConditionError::SourceNotDone("t1".into()))
        );
    }

    #[test]
    fn render_single_classification() {
        let report = ExecutionReport {
            query: String::new(),
            results: vec![done("tb")],
            total_duration: 0.0,
            answer: String::new(),
        };
        assert_eq!(render_answer(&report), "t1: classification(tb) → tb (p=0.91)");
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.5, 0.5]), Some(0));
        assert_eq!(argmax(&[0.2, 0.3, 0.3, 0.2]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn bad_probability_vectors_are_protocol_violations() {
        let labels = vec!["negative".to_string(), "tb".to_string()];
        for p in [vec![0.2, 0.3, 0.5], vec![0.7, 0.7], vec![-0.1, 1.1]] {
            assert!(matches!(
                ClassificationOutput::from_probabilities(&labels, p),
                Err(BackendError::ProtocolViolation(_))
            ));
        }
    }
}
