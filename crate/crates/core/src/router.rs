//! Weight routing by match score.
//!
//! For a task and a candidate weight,
//!
//! ```text
//! S = I + alpha * sim_target + beta * sim_modality
//! ```
//!
//! where `I` is 1 when the intents agree. The modality term is dropped when
//! the task names no modality. A weight is selected only if its score is
//! strictly above the threshold; candidates of the wrong intent are never
//! selected because they cannot run the task.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embed::Similarity;
use crate::naming::Intent;
use crate::registry::{Registry, WeightRecord};

pub const DEFAULT_ALPHA: f64 = 1.5;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_THRESHOLD: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteParams {
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
}

impl Default for RouteParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

/// A normalized task as seen by the router.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteQuery<'a> {
    pub task_id: &'a str,
    pub intent: Intent,
    pub target: &'a str,
    pub modality: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub weight_id: String,
    pub intent_match: u8,
    pub sim_target: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sim_modality: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub total: f64,
    pub class_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoWeightReason {
    BelowThreshold,
    NoCandidates,
    IntentFiltered,
    /// The best candidate cleared the threshold but the task's target never
    /// resolved to a registry term, so the match rests on intent and
    /// modality alone.
    TargetUnresolved,
}

impl NoWeightReason {
    pub fn as_str(self) -> &'static str {
        match self {
            NoWeightReason::BelowThreshold => "below_threshold",
            NoWeightReason::NoCandidates => "no_candidates",
            NoWeightReason::IntentFiltered => "intent_filtered",
            NoWeightReason::TargetUnresolved => "target_unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub task_id: String,
    pub selected: Option<String>,
    pub score: Option<ScoreBreakdown>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ranked: Vec<ScoreBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason_if_none: Option<NoWeightReason>,
}

impl RoutingDecision {
    /// Withdraws a selection, keeping the breakdowns for audit.
    pub fn reject(&mut self, reason: NoWeightReason) {
        self.selected = None;
        self.reason_if_none = Some(reason);
    }
}

pub fn match_score(
    query: &RouteQuery<'_>,
    weight: &WeightRecord,
    params: &RouteParams,
    sim: &impl Similarity,
) -> ScoreBreakdown {
    let intent_match = u8::from(query.intent == weight.intent());
    let sim_target = sim.similarity(query.target, &weight.joined_target);
    let sim_modality = query.modality.map(|m| sim.similarity(m, &weight.norm_modality));
    let mut total = f64::from(intent_match) + params.alpha * sim_target;
    if let Some(m) = sim_modality {
        total += params.beta * m;
    }
    ScoreBreakdown {
        weight_id: weight.weight_id.clone(),
        intent_match,
        sim_target,
        sim_modality,
        alpha: params.alpha,
        beta: params.beta,
        total,
        class_count: weight.class_count,
    }
}

/// Higher score first, then fewer classes, then smaller weight id.
pub fn rank_order(a: &ScoreBreakdown, b: &ScoreBreakdown) -> Ordering {
    b.total
        .total_cmp(&a.total)
        .then_with(|| a.class_count.cmp(&b.class_count))
        .then_with(|| a.weight_id.cmp(&b.weight_id))
}

pub fn select_weight(
    query: &RouteQuery<'_>,
    registry: &Registry,
    params: &RouteParams,
    sim: &impl Similarity,
) -> RoutingDecision {
    let mut decision = RoutingDecision {
        task_id: query.task_id.to_string(),
        selected: None,
        score: None,
        ranked: Vec::new(),
        reason_if_none: None,
    };
    if registry.is_empty() {
        decision.reason_if_none = Some(NoWeightReason::NoCandidates);
        return decision;
    }
    let mut ranked: Vec<ScoreBreakdown> = registry
        .records()
        .iter()
        .filter(|w| w.intent() == query.intent)
        .map(|w| match_score(query, w, params, sim))
        .collect();
    if ranked.is_empty() {
        decision.reason_if_none = Some(NoWeightReason::IntentFiltered);
        return decision;
    }
    ranked.sort_by(rank_order);
    let best = ranked[0].clone();
    if best.total > params.threshold {
        decision.selected = Some(best.weight_id.clone());
    } else {
        decision.reason_if_none = Some(NoWeightReason::BelowThreshold);
    }
    decision.score = Some(best);
    decision.ranked = ranked;
    decision
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::TrigramSimilarity;
    use crate::normalize::SynonymLexicon;
    use crate::registry::WeightEntry;

    fn registry(stems: &[&str]) -> Registry {
        Registry::build(
            stems.iter().map(|s| WeightEntry {
                stem: s.to_string(),
                path: alloc::format!("{s}.pt"),
                sidecar: None,
            }),
            &SynonymLexicon::bundled(),
        )
        .unwrap()
    }

    fn query<'a>(intent: Intent, target: &'a str, modality: Option<&'a str>) -> RouteQuery<'a> {
        RouteQuery {
            task_id: "t1",
            intent,
            target,
            modality,
        }
    }

    #[test]
    fn exact_match_scores_the_maximum() {
        let reg = registry(&["Cls_TB_CXR"]);
        let s = match_score(
            &query(Intent::Classification, "tb", Some("cxr")),
            &reg.records()[0],
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!((s.intent_match, s.sim_target, s.sim_modality), (1, 1.0, Some(1.0)));
        assert_eq!(s.total, 3.5);
    }

    #[test]
    fn wrong_intent_scores_without_indicator() {
        let reg = registry(&["Seg_TB_CXR"]);
        let s = match_score(
            &query(Intent::Classification, "tb", Some("cxr")),
            &reg.records()[0],
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(s.total, 2.5);
    }

    #[test]
    fn missing_modality_drops_the_term() {
        let reg = registry(&["Cls_TB_CXR"]);
        let s = match_score(
            &query(Intent::Classification, "tb", None),
            &reg.records()[0],
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(s.sim_modality, None);
        assert_eq!(s.total, 2.5);
    }

    #[test]
    fn table_one_routes_tb_to_a_tb_classifier() {
        let reg = registry(&crate::registry::tests::TABLE_ONE);
        let d = select_weight(
            &query(Intent::Classification, "tb", Some("chest x-ray")),
            &reg,
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(d.selected.as_deref(), Some("Cls_TB_Chest X-ray"));
        assert_eq!(d.ranked.len(), 3);
    }

    #[test]
    fn empty_registry_has_no_candidates() {
        let d = select_weight(
            &query(Intent::Segmentation, "lung", None),
            &Registry::empty(),
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(d.reason_if_none, Some(NoWeightReason::NoCandidates));
        assert!(d.selected.is_none());
    }

    #[test]
    fn intent_filter_reason() {
        let reg = registry(&["Cls_TB_CXR"]);
        let d = select_weight(
            &query(Intent::Segmentation, "tb", Some("cxr")),
            &reg,
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(d.reason_if_none, Some(NoWeightReason::IntentFiltered));
    }

    #[test]
    fn binary_beats_multiclass() {
        let reg = registry(&["Cls_Covid-Pneumonia_CXR", "Cls_Covid_CXR"]);
        let d = select_weight(
            &query(Intent::Classification, "covid", Some("cxr")),
            &reg,
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(d.selected.as_deref(), Some("Cls_Covid_CXR"));
        assert!(d.ranked[1].sim_target < 1.0);
    }

    #[test]
    fn class_count_breaks_score_ties() {
        let mut reg = registry(&["Cls_Covid_CXR", "Cls_Covid_XR"]);
        let mut records = reg.records().to_vec();
        records[0].class_count = 3;
        records[1].norm_modality = "cxr".into();
        reg = Registry::from_records(records).unwrap();
        let d = select_weight(
            &query(Intent::Classification, "covid", Some("cxr")),
            &reg,
            &RouteParams::default(),
            &TrigramSimilarity,
        );
        assert_eq!(d.selected.as_deref(), Some("Cls_Covid_XR"));
    }

    #[test]
    fn threshold_is_strict() {
        struct Fixed(f64);
        impl Similarity for Fixed {
            fn similarity(&self, _: &str, _: &str) -> f64 {
                self.0
            }
        }
        let reg = registry(&["Cls_TB_CXR"]);
        // 1 + 1.5 * 0.4 == 1.6 in f64
        let params = RouteParams::default();
        let d = select_weight(&query(Intent::Classification, "x", None), &reg, &params, &Fixed(0.4));
        assert_eq!(d.score.as_ref().unwrap().total, 1.6);
        assert_eq!(d.reason_if_none, Some(NoWeightReason::BelowThreshold));
        assert!(d.selected.is_none());
    }
}
