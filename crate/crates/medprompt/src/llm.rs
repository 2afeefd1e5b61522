//! Chat-completion client used by the LLM planner and the last-resort
//! normalization stage.

use std::sync::Arc;
use std::time::Duration;

use medprompt_core::normalize::{NormalizationProvider, ProviderFailure};
use medprompt_core::plan::{parse_plan, Plan, PlanError};
use medprompt_core::prompt::{build_llm_prompt, FewShotSet, PromptError};
use medprompt_core::registry::ReferenceVocab;
use medprompt_core::text::canonicalize;
use serde_json::{json, Value};

use crate::config::LlmSettings;
use crate::limit::InFlight;

const COMPLETIONS_PATH: &str = "/chat/completions";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("LLM request timed out: {0}")]
    Timeout(String),
    #[error("LLM endpoint rejected the credential: {0}")]
    AuthFailure(String),
    #[error("LLM endpoint unreachable: {0}")]
    TransportFailure(String),
    #[error("LLM frontend is not configured: {0}")]
    NotConfigured(String),
    #[error("unexpected LLM response: {0}")]
    BadResponse(String),
}

impl LlmError {
    pub fn kind(&self) -> &'static str {
        match self {
            LlmError::Timeout(_) => "Timeout",
            LlmError::AuthFailure(_) => "AuthFailure",
            LlmError::TransportFailure(_) => "TransportFailure",
            LlmError::NotConfigured(_) => "NotConfigured",
            LlmError::BadResponse(_) => "BadResponse",
        }
    }

    fn is_transient(&self) -> bool {
        matches!(self, LlmError::Timeout(_) | LlmError::TransportFailure(_))
    }
}

#[derive(Debug, Clone)]
pub struct LlmClient {
    url: String,
    model: String,
    api_key: Option<String>,
    timeout: Duration,
    in_flight: Arc<InFlight>,
}

impl LlmClient {
    pub fn new(endpoint: &str, model: &str, api_key: Option<String>, timeout: Duration, max_in_flight: usize) -> Self {
        let base = endpoint.trim_end_matches('/');
        let url = if base.ends_with(COMPLETIONS_PATH) {
            base.to_string()
        } else {
            format!("{base}{COMPLETIONS_PATH}")
        };
        Self {
            url,
            model: model.to_string(),
            api_key,
            timeout,
            in_flight: Arc::new(InFlight::new(max_in_flight)),
        }
    }

    pub fn from_settings(settings: &LlmSettings) -> Result<Self, LlmError> {
        let endpoint = settings
            .endpoint
            .as_deref()
            .ok_or_else(|| LlmError::NotConfigured("set LLM_ENDPOINT or --llm-endpoint".into()))?;
        let model = settings
            .model
            .as_deref()
            .ok_or_else(|| LlmError::NotConfigured("set LLM_MODEL or --llm-model".into()))?;
        Ok(Self::new(
            endpoint,
            model,
            settings.api_key.clone(),
            settings.timeout,
            settings.max_in_flight,
        ))
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Sends `prompt` as a single user message and returns the reply text
    /// verbatim. Timeouts, connection failures, 429 and 5xx get one retry.
    pub fn call_llm(&self, prompt: &str) -> Result<String, LlmError> {
        let _permit = self.in_flight.acquire();
        match self.attempt(prompt) {
            Err(e) if e.is_transient() => self.attempt(prompt),
            other => other,
        }
    }

    fn attempt(&self, prompt: &str) -> Result<String, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| LlmError::TransportFailure(e.to_string()))?;
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut request = client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let transport = |e: reqwest::Error| {
            if e.is_timeout() {
                LlmError::Timeout(format!("{} after {:?}", self.url, self.timeout))
            } else {
                LlmError::TransportFailure(format!("{}: {e}", self.url))
            }
        };
        let resp = request.send().map_err(transport)?;
        let status = resp.status();
        let text = resp.text().map_err(transport)?;
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(LlmError::AuthFailure(format!("{status}: {}", snippet(&text)))),
            429 | 500..=599 => return Err(LlmError::TransportFailure(format!("{status}: {}", snippet(&text)))),
            _ => return Err(LlmError::BadResponse(format!("{status}: {}", snippet(&text)))),
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| LlmError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadResponse("missing choices[0].message.content".into()))
    }
}

fn snippet(text: &str) -> &str {
    let end = text.char_indices().nth(200).map_or(text.len(), |(i, _)| i);
    &text[..end]
}

#[derive(Debug, thiserror::Error)]
pub enum LlmPlanError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Few-shot prompting followed by schema validation of the reply.
#[derive(Debug, Clone)]
pub struct LlmPlanner {
    pub client: LlmClient,
    pub examples: FewShotSet,
}

impl LlmPlanner {
    pub fn new(client: LlmClient) -> Self {
        Self {
            client,
            examples: FewShotSet::bundled(),
        }
    }

    pub fn plan(&self, query: &str, vocab: &ReferenceVocab) -> Result<Plan, LlmPlanError> {
        let prompt = build_llm_prompt(query, vocab, &self.examples)?;
        let raw = self.client.call_llm(&prompt)?;
        let mut plan = parse_plan(&raw)?;
        plan.query = query.to_string();
        Ok(plan)
    }
}

/// Asks the model to pick one vocabulary token for an unmatched term.
#[derive(Debug, Clone)]
pub struct LlmNormalizer {
    pub client: LlmClient,
}

pub fn normalization_prompt(term: &str, candidates: &[String]) -> String {
    format!(
        "You map medical terms onto a fixed vocabulary.\n\
         Vocabulary: {}\n\
         Term: {term}\n\
         Reply with exactly one vocabulary entry that means the same thing as the term, \
         or with the word none if no entry fits. Do not add any other text.",
        candidates.join(", ")
    )
}

/// Interprets a reply: a vocabulary entry, or `None` for "none" and for
/// anything unrecognisable.
pub fn interpret_choice(reply: &str, candidates: &[String]) -> Option<String> {
    let cleaned = canonicalize(reply.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.'));
    candidates.iter().find(|c| **c == cleaned).cloned()
}

impl NormalizationProvider for LlmNormalizer {
    fn choose(&self, term: &str, candidates: &[String]) -> Result<Option<String>, ProviderFailure> {
        if candidates.is_empty() {
            return Ok(None);
        }
        let reply = self
            .client
            .call_llm(&normalization_prompt(term, candidates))
            .map_err(|e| ProviderFailure(e.to_string()))?;
        Ok(interpret_choice(&reply, candidates))
    }
}
