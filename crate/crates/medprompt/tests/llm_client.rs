mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use medprompt::config::{AppConfig, Frontend, LlmSettings};
use medprompt::llm::{LlmClient, LlmError};
use medprompt::pipeline::{Fault, Pipeline};
use medprompt_core::normalize::{Stage, SynonymLexicon};
use medprompt_core::plan::ConditionPredicate;
use medprompt_core::prompt::{build_llm_prompt, FewShotSet};
use medprompt_core::registry::{Registry, WeightEntry};
use serde::Deserialize;
use serde_json::{json, Value};

const MODEL: &str = "test-model";
const KEY: &str = "secret";

#[derive(Deserialize)]
struct Canned {
    query: String,
    response: String,
}

fn canned() -> HashMap<String, String> {
    std::fs::read_to_string(common::fixture("llm_canned.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let c: Canned = serde_json::from_str(l).unwrap();
            (c.query, c.response)
        })
        .collect()
}

/// Synonyms the mock "knows" when asked to normalize a term.
fn synonym(term: &str) -> &'static str {
    match term {
        "chest x-ray" => "cxr",
        "consumption" => "tb",
        _ => "none",
    }
}

fn reply(content: &str) -> Json<Value> {
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}))
}

/// A chat-completion endpoint that answers planning prompts from the
/// canned fixture and normalization prompts from [`synonym`].
fn mock_llm() -> Router {
    let table = Arc::new(canned());
    Router::new()
        .route(
            "/v1/chat/completions",
            post(
                |State(table): State<Arc<HashMap<String, String>>>, headers: HeaderMap, Json(body): Json<Value>| async move {
                    if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer secret") {
                        return (StatusCode::UNAUTHORIZED, reply("bad key"));
                    }
                    assert_eq!(body["model"], MODEL);
                    assert_eq!(body["temperature"], 0);
                    let prompt = body["messages"][0]["content"].as_str().unwrap().to_string();
                    if let Some(rest) = prompt.split("\nTerm: ").nth(1) {
                        let term = rest.lines().next().unwrap();
                        return (StatusCode::OK, reply(synonym(term)));
                    }
                    let query = prompt
                        .rsplit("\nRequest: ")
                        .next()
                        .and_then(|tail| tail.strip_suffix("\nPlan:"))
                        .unwrap();
                    match table.get(query) {
                        Some(answer) => (StatusCode::OK, reply(answer)),
                        None => (StatusCode::OK, reply("I cannot help with that.")),
                    }
                },
            ),
        )
        .with_state(table)
}

fn client(url: &str, timeout: Duration) -> LlmClient {
    LlmClient::new(&format!("{url}/v1"), MODEL, Some(KEY.into()), timeout, 2)
}

fn registry(lexicon: &SynonymLexicon) -> Registry {
    let entries: Vec<WeightEntry> = ["Cls_Pneumonia_CXR", "Seg_Lung_CXR", "Cls_TB_CXR"]
        .iter()
        .map(|s| WeightEntry {
            stem: s.to_string(),
            path: format!("{s}.pt"),
            sidecar: None,
        })
        .collect();
    Registry::build(entries, lexicon).unwrap()
}

fn llm_pipeline(url: &str) -> Pipeline {
    let lexicon = SynonymLexicon::bundled();
    let config = AppConfig {
        frontend: Frontend::Llm,
        llm: LlmSettings {
            endpoint: Some(format!("{url}/v1")),
            model: Some(MODEL.into()),
            api_key: Some(KEY.into()),
            timeout: Duration::from_secs(5),
            max_in_flight: 2,
        },
        ..AppConfig::default()
    };
    Pipeline::from_parts(config, registry(&lexicon), lexicon)
}

const VIRAL: &str = "Check for viral pneumonia. If confirmed, segment the lungs for further assessment.";

#[test]
fn canned_response_is_returned_verbatim() {
    let server = common::spawn(mock_llm());
    let lexicon = SynonymLexicon::bundled();
    let prompt = build_llm_prompt(VIRAL, &registry(&lexicon).vocab(), &FewShotSet::bundled()).unwrap();
    let raw = client(&server.url, Duration::from_secs(5)).call_llm(&prompt).unwrap();
    assert_eq!(raw, canned()[VIRAL]);
}

#[test]
fn llm_plan_is_parsed_and_resolved() {
    let server = common::spawn(mock_llm());
    let planned = llm_pipeline(&server.url).plan(VIRAL, Frontend::Llm).unwrap();
    let [t1, t2] = &planned.plan.tasks[..] else {
        panic!("two tasks expected")
    };
    assert_eq!(planned.plan.query, VIRAL);
    assert_eq!(t1.selected_weight.as_deref(), Some("Cls_Pneumonia_CXR"));
    assert_eq!(t1.norm_target.stage, Stage::Lexicon);
    // the modality spelling is outside the lexicon, so the model picks it
    let modality = t1.norm_modality.as_ref().unwrap();
    assert_eq!((modality.canonical.as_deref(), modality.stage), (Some("cxr"), Stage::Llm));
    assert_eq!(t2.selected_weight.as_deref(), Some("Seg_Lung_CXR"));
    assert_eq!(t2.spec.depends_on, ["t1"]);
    assert_eq!(t2.spec.condition, Some(ConditionPredicate::positive("t1")));
}

#[test]
fn model_backed_normalization_resolves_unknown_synonyms() {
    let server = common::spawn(mock_llm());
    let planned = llm_pipeline(&server.url)
        .plan("Is the pulmonary tissue affected by consumption?", Frontend::Llm)
        .unwrap();
    let task = &planned.plan.tasks[0];
    assert_eq!(task.norm_target.stage, Stage::Llm);
    assert_eq!(task.selected_weight.as_deref(), Some("Cls_TB_CXR"));
}

#[test]
fn empty_and_invalid_plans() {
    let server = common::spawn(mock_llm());
    let p = llm_pipeline(&server.url);
    assert!(p.plan("Tell me a joke.", Frontend::Llm).unwrap().plan.tasks.is_empty());

    let err = p.plan("Outline the kidneys, then check the previous result.", Frontend::Llm).unwrap_err();
    assert_eq!((err.kind(), err.fault()), ("DanglingDependency", Fault::User));

    let err = p.plan("Something unexpected", Frontend::Llm).unwrap_err();
    assert_eq!(err.kind(), "NoJsonFound");
}

#[test]
fn unreachable_endpoint_is_a_transport_failure() {
    let err = client(&common::dead_url(), Duration::from_secs(2)).call_llm("hi").unwrap_err();
    assert!(matches!(err, LlmError::TransportFailure(_)), "{err:?}");
}

#[test]
fn slow_endpoint_times_out() {
    let server = common::spawn(Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(3)).await;
            reply("late")
        }),
    ));
    let err = client(&server.url, Duration::from_millis(250)).call_llm("hi").unwrap_err();
    assert!(matches!(err, LlmError::Timeout(_)), "{err:?}");
}

#[test]
fn bad_credentials_are_not_retried() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = common::spawn(Router::new().route(
        "/v1/chat/completions",
        post(move || {
            h.fetch_add(1, Ordering::SeqCst);
            async { (StatusCode::UNAUTHORIZED, "invalid api key") }
        }),
    ));
    let err = client(&server.url, Duration::from_secs(2)).call_llm("hi").unwrap_err();
    assert!(matches!(err, LlmError::AuthFailure(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn transient_failures_get_exactly_one_retry() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = common::spawn(Router::new().route(
        "/v1/chat/completions",
        post(move || {
            let n = h.fetch_add(1, Ordering::SeqCst);
            async move {
                if n == 0 {
                    (StatusCode::SERVICE_UNAVAILABLE, reply(""))
                } else {
                    (StatusCode::OK, reply("second time lucky"))
                }
            }
        }),
    ));
    let c = client(&server.url, Duration::from_secs(2));
    assert_eq!(c.call_llm("hi").unwrap(), "second time lucky");
    assert_eq!(hits.load(Ordering::SeqCst), 2);

    let always = Arc::new(AtomicUsize::new(0));
    let a = always.clone();
    let server = common::spawn(Router::new().route(
        "/v1/chat/completions",
        post(move || {
            a.fetch_add(1, Ordering::SeqCst);
            async { (StatusCode::TOO_MANY_REQUESTS, "slow down") }
        }),
    ));
    let err = client(&server.url, Duration::from_secs(2)).call_llm("hi").unwrap_err();
    assert!(matches!(err, LlmError::TransportFailure(_)), "{err:?}");
    assert_eq!(always.load(Ordering::SeqCst), 2);
}

#[test]
fn pipeline_maps_llm_failures_to_upstream_faults() {
    let p = llm_pipeline(&common::dead_url());
    let err = p.plan(VIRAL, Frontend::Llm).unwrap_err();
    assert_eq!((err.kind(), err.fault()), ("TransportFailure", Fault::Upstream));
    // the offline frontend never touches the network
    assert_eq!(p.plan(VIRAL, Frontend::Offline).unwrap().plan.tasks.len(), 2);
}
