//! Binding a plan to the registry: normalization, routing, class labels.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embed::{Similarity, TrigramSimilarity};
use crate::normalize::{NormalizationProvider, NormalizationResult, Normalizer};
use crate::plan::{Plan, TaskSpec};
use crate::registry::{ReferenceVocab, Registry};
use crate::router::{select_weight, NoWeightReason, RouteParams, RouteQuery, RoutingDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTask {
    #[serde(flatten)]
    pub spec: TaskSpec,
    pub norm_target: NormalizationResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_modality: Option<NormalizationResult>,
    pub routing: RoutingDecision,
    pub selected_weight: Option<String>,
    pub class_labels: Vec<String>,
    /// Set when no weight can run the task; the engine will not execute it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skip_no_weight: Option<NoWeightReason>,
}

impl ResolvedTask {
    pub fn id(&self) -> &str {
        &self.spec.task_id
    }

    /// Normalized target token (the canonicalized raw text if unresolved).
    pub fn target(&self) -> &str {
        self.norm_target.token()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPlan {
    pub query: String,
    pub tasks: Vec<ResolvedTask>,
}

impl ResolvedPlan {
    pub fn task(&self, id: &str) -> Option<&ResolvedTask> {
        self.tasks.iter().find(|t| t.id() == id)
    }

    /// Drops the per-candidate rankings, keeping only each winner's
    /// breakdown.
    pub fn without_rankings(mut self) -> Self {
        for t in &mut self.tasks {
            t.routing.ranked.clear();
        }
        self
    }
}

pub struct Resolver<'a, S = TrigramSimilarity> {
    pub registry: &'a Registry,
    pub vocab: ReferenceVocab,
    pub normalizer: &'a Normalizer<S>,
    pub params: RouteParams,
    pub provider: Option<&'a dyn NormalizationProvider>,
}

impl<'a, S: Similarity> Resolver<'a, S> {
    pub fn new(registry: &'a Registry, normalizer: &'a Normalizer<S>, params: RouteParams) -> Self {
        Self {
            registry,
            vocab: registry.vocab(),
            normalizer,
            params,
            provider: None,
        }
    }

    pub fn with_provider(mut self, provider: Option<&'a dyn NormalizationProvider>) -> Self {
        self.provider = provider;
        self
    }

    pub fn resolve_task(&self, spec: &TaskSpec) -> ResolvedTask {
        let norm_target = self
            .normalizer
            .normalize(&spec.raw_target, &self.vocab.targets, self.provider);
        let norm_modality = spec
            .raw_modality
            .as_ref()
            .map(|m| self.normalizer.normalize(m, &self.vocab.modalities, self.provider))
            .filter(|r| !r.input.is_empty());
        let query = RouteQuery {
            task_id: &spec.task_id,
            intent: spec.intent,
            target: norm_target.token(),
            modality: norm_modality.as_ref().map(NormalizationResult::token),
        };
        let mut routing = select_weight(&query, self.registry, &self.params, &self.normalizer.similarity);
        if routing.selected.is_some() && !norm_target.is_resolved() {
            routing.reject(NoWeightReason::TargetUnresolved);
        }
        let class_labels = routing
            .selected
            .as_deref()
            .and_then(|id| self.registry.get(id))
            .map(|w| w.class_labels.clone())
            .unwrap_or_default();
        ResolvedTask {
            spec: spec.clone(),
            skip_no_weight: routing.reason_if_none,
            selected_weight: routing.selected.clone(),
            norm_target,
            norm_modality,
            routing,
            class_labels,
        }
    }

    /// Resolves every task, preserving order and count.
    pub fn resolve(&self, plan: &Plan) -> ResolvedPlan {
        ResolvedPlan {
            query: plan.query.clone(),
            tasks: plan.tasks.iter().map(|t| self.resolve_task(t)).collect(),
        }
    }
}

pub fn resolve_plan<S: Similarity>(
    plan: &Plan,
    registry: &Registry,
    normalizer: &Normalizer<S>,
    params: RouteParams,
    provider: Option<&dyn NormalizationProvider>,
) -> ResolvedPlan {
    Resolver::new(registry, normalizer, params)
        .with_provider(provider)
        .resolve(plan)
}
