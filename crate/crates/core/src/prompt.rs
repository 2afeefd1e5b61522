//! Few-shot prompt for LLM-based planning.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::registry::ReferenceVocab;

pub const REQUIRED_EXAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub plan: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotSet {
    pub version: u32,
    #[serde(default)]
    pub note: String,
    pub examples: Vec<FewShotExample>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("few-shot asset must hold exactly {REQUIRED_EXAMPLES} examples: {0}")]
    MissingExampleAsset(String),
}

impl FewShotSet {
    pub fn from_json(json: &str) -> Result<Self, PromptError> {
        let set: FewShotSet =
            serde_json::from_str(json).map_err(|e| PromptError::MissingExampleAsset(format!("{e}")))?;
        if set.examples.len() != REQUIRED_EXAMPLES {
            return Err(PromptError::MissingExampleAsset(format!("found {}", set.examples.len())));
        }
        Ok(set)
    }

    pub fn bundled() -> Self {
        Self::from_json(include_str!("../assets/fewshot.json")).expect("bundled few-shot asset is valid")
    }
}

const TASK_DESCRIPTION: &str = "\
You turn a clinician's request about a single medical image into a JSON plan of \
image-analysis tasks. Reply with one JSON object and nothing else.";

const FIELD_GUIDE: &str = "\
Fill each task as follows.
- id: \"t1\", \"t2\", ... in the order the tasks should be considered.
- intent: \"segmentation\" when the user wants a region outlined, isolated, \
delimited or masked; \"classification\" when they ask whether something is present.
- target: the organ, structure or disease, copied from the request in plain words. \
Prefer a term from the target list when it means the same thing.
- modality: the imaging technique if the request names one, otherwise omit it. \
Prefer a term from the modality list.
- depends_on: ids of tasks whose result this task needs. Omit when empty.
- condition: only when the request makes the task conditional on an earlier \
classification. Use {\"source_task\": id, \"kind\": \"outcome_positive\"} for \
phrases like \"if confirmed\", {\"kind\": \"outcome_negative\"} for \"if not\" or \
\"if negative\", and {\"kind\": \"class_equals\", \"label\": ...} when a specific \
class is named. The source task must also appear in depends_on.
Use \"tasks\": [] when the request asks for no image analysis.";

fn push_list(out: &mut String, title: &str, items: &alloc::collections::BTreeSet<String>) {
    let _ = write!(out, "{title}: ");
    if items.is_empty() {
        out.push_str("(none)");
    } else {
        let joined: Vec<&str> = items.iter().map(String::as_str).collect();
        out.push_str(&joined.join(", "));
    }
    out.push('\n');
}

/// Deterministic prompt text for `query`.
pub fn build_llm_prompt(query: &str, vocab: &ReferenceVocab, examples: &FewShotSet) -> Result<String, PromptError> {
    if examples.examples.len() != REQUIRED_EXAMPLES {
        return Err(PromptError::MissingExampleAsset(format!("found {}", examples.examples.len())));
    }
    let mut out = String::new();
    out.push_str(TASK_DESCRIPTION);
    out.push_str("\n\n");
    out.push_str(FIELD_GUIDE);
    out.push_str("\n\n");
    push_list(&mut out, "Known targets", &vocab.targets);
    push_list(&mut out, "Known modalities", &vocab.modalities);
    for (i, ex) in examples.examples.iter().enumerate() {
        let plan = serde_json::to_string(&ex.plan).unwrap_or_default();
        let _ = write!(out, "\nExample {}\nRequest: {}\nPlan: {}\n", i + 1, ex.query, plan);
    }
    let _ = write!(out, "\nRequest: {query}\nPlan:");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::plan_from_json;
    use alloc::string::ToString;

    fn vocab() -> ReferenceVocab {
        ReferenceVocab {
            targets: ["lung", "tb", "covid"].iter().map(|s| s.to_string()).collect(),
            modalities: ["cxr"].iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn prompt_lists_vocab_and_examples() {
        let q = "Is the lung field clear of TB? {weird}";
        let p = build_llm_prompt(q, &vocab(), &FewShotSet::bundled()).unwrap();
        assert!(p.contains("Known targets: covid, lung, tb"));
        assert_eq!(p.matches(q).count(), 1);
        assert_eq!(p.matches("\nExample ").count(), 10);
        assert_eq!(p, build_llm_prompt(q, &vocab(), &FewShotSet::bundled()).unwrap());
    }

    #[test]
    fn examples_follow_the_plan_schema() {
        for ex in FewShotSet::bundled().examples {
            let obj = ex.plan.as_object().unwrap();
            plan_from_json(obj).unwrap_or_else(|e| panic!("{}: {e}", ex.query));
        }
    }

    #[test]
    fn wrong_example_count_is_rejected() {
        let mut set = FewShotSet::bundled();
        set.examples.pop();
        assert!(matches!(
            build_llm_prompt("q", &vocab(), &set),
            Err(PromptError::MissingExampleAsset(_))
        ));
        let json = serde_json::to_string(&set).unwrap();
        assert!(FewShotSet::from_json(&json).is_err());
        assert!(FewShotSet::from_json("not json").is_err());
    }
}
