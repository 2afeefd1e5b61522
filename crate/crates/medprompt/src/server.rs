//! HTTP service: health, registry listing, planning and execution.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use medprompt_core::engine::{ExecutionReport, TaskOutput};
use serde::Deserialize;
use serde_json::json;

use crate::config::Frontend;
use crate::imaging::decode_image;
use crate::pipeline::{plan_json, report_json, Fault, Pipeline, PipelineError, Timings};
use crate::wire::ErrorBody;

pub const REQUEST_ID: HeaderName = HeaderName::from_static("x-request-id");
pub const SERVER_TIMING: HeaderName = HeaderName::from_static("server-timing");

type Shared = Arc<Pipeline>;

pub fn router(pipeline: Shared) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/weights", get(weights))
        .route("/plan", post(plan))
        .route("/execute", post(execute))
        .with_state(pipeline)
}

/// Serves until `shutdown` resolves.
pub async fn serve_on(
    listener: tokio::net::TcpListener,
    pipeline: Shared,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(pipeline)).with_graceful_shutdown(shutdown).await
}

/// Binds `0.0.0.0:port` and serves until interrupted.
pub async fn serve(pipeline: Pipeline, port: u16) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], port))).await?;
    eprintln!(
        "medprompt listening on {} with {} weights",
        listener.local_addr()?,
        pipeline.registry.len()
    );
    serve_on(listener, Arc::new(pipeline), async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

fn request_id(headers: &HeaderMap) -> String {
    headers
        .get(&REQUEST_ID)
        .and_then(|v| v.to_str().ok())
        .filter(|v| !v.is_empty() && v.len() <= 128)
        .map_or_else(|| uuid::Uuid::new_v4().to_string(), str::to_string)
}

fn json_response(status: StatusCode, body: String, id: &str, timings: Option<Timings>) -> Response {
    let mut resp = (status, body).into_response();
    let headers = resp.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    if let Ok(v) = HeaderValue::from_str(id) {
        headers.insert(REQUEST_ID, v);
    }
    if let Some(t) = timings {
        if let Ok(v) = HeaderValue::from_str(&t.server_timing()) {
            headers.insert(SERVER_TIMING, v);
        }
    }
    resp
}

fn error_response(status: StatusCode, error: &str, message: String, id: &str) -> Response {
    let body = ErrorBody {
        error: error.to_string(),
        message,
    };
    json_response(status, pretty(&body), id, None)
}

fn pipeline_error(e: &PipelineError, id: &str) -> Response {
    let status = match e.fault() {
        Fault::User => StatusCode::BAD_REQUEST,
        Fault::Upstream => StatusCode::BAD_GATEWAY,
        Fault::UpstreamTimeout => StatusCode::GATEWAY_TIMEOUT,
        Fault::Internal => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error_response(status, e.kind(), e.to_string(), id)
}

fn bad_request(message: impl Into<String>, id: &str) -> Response {
    error_response(StatusCode::BAD_REQUEST, "SchemaViolation", message.into(), id)
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T: Send + 'static>(id: &str, work: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(work).await.map_err(|e| {
        error_response(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string(), id)
    })
}

fn frontend_of(pipeline: &Pipeline, offline: Option<bool>) -> Frontend {
    match offline {
        Some(true) => Frontend::Offline,
        Some(false) => Frontend::Llm,
        None => pipeline.config.frontend,
    }
}

async fn health(State(p): State<Shared>, headers: HeaderMap) -> Response {
    let body = json!({"status": "ok", "weights": p.registry.len()});
    json_response(StatusCode::OK, pretty(&body), &request_id(&headers), None)
}

async fn weights(State(p): State<Shared>, headers: HeaderMap) -> Response {
    json_response(StatusCode::OK, pretty(&p.registry.listing()), &request_id(&headers), None)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlanRequest {
    query: String,
    #[serde(default)]
    offline: Option<bool>,
    #[serde(default)]
    explain: bool,
}

async fn plan(State(p): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let id = request_id(&headers);
    let req: PlanRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("plan request: {e}"), &id),
    };
    let frontend = frontend_of(&p, req.offline);
    let result = match blocking(&id, move || p.plan(&req.query, frontend)).await {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    match result {
        Ok(planned) => json_response(StatusCode::OK, plan_json(&planned.plan, req.explain), &id, Some(planned.timings)),
        Err(e) => pipeline_error(&e, &id),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExecuteRequest {
    query: String,
    image_base64: String,
    #[serde(default)]
    offline: Option<bool>,
    #[serde(default)]
    stub_outcome: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct ExecuteParams {
    #[serde(default)]
    inline_masks: bool,
}

struct ExecuteInput {
    query: String,
    image: Vec<u8>,
    offline: Option<bool>,
    stub_outcome: Option<String>,
}

async fn read_execute_input(req: Request) -> Result<ExecuteInput, String> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        let body = Bytes::from_request(req, &()).await.map_err(|e| e.to_string())?;
        let r: ExecuteRequest = serde_json::from_slice(&body).map_err(|e| format!("execute request: {e}"))?;
        let image = STANDARD
            .decode(r.image_base64.trim())
            .map_err(|e| format!("image_base64: {e}"))?;
        return Ok(ExecuteInput {
            query: r.query,
            image,
            offline: r.offline,
            stub_outcome: r.stub_outcome,
        });
    }
    let mut form = Multipart::from_request(req, &()).await.map_err(|e| e.to_string())?;
    let (mut query, mut image, mut offline, mut stub_outcome) = (None, None, None, None);
    while let Some(field) = form.next_field().await.map_err(|e| e.to_string())? {
        let name = field.name().unwrap_or_default().to_string();
        match name.as_str() {
            "image" => image = Some(field.bytes().await.map_err(|e| e.to_string())?.to_vec()),
            "query" => query = Some(field.text().await.map_err(|e| e.to_string())?),
            "stub_outcome" => stub_outcome = Some(field.text().await.map_err(|e| e.to_string())?),
            "offline" => {
                let text = field.text().await.map_err(|e| e.to_string())?;
                offline = Some(text.trim().parse::<bool>().map_err(|_| format!("offline: expected true or false, got {text:?}"))?);
            }
            other => return Err(format!("unknown form field {other:?}")),
        }
    }
    Ok(ExecuteInput {
        query: query.ok_or("missing form field \"query\"")?,
        image: image.ok_or("missing form field \"image\"")?,
        offline,
        stub_outcome,
    })
}

/// Replaces mask file references with inline base64 PNG data.
fn inline_masks(report: &mut ExecutionReport) -> Result<(), String> {
    for r in &mut report.results {
        if let Some(TaskOutput::Segmentation(seg)) = &mut r.output {
            let bytes = std::fs::read(&seg.mask_ref).map_err(|e| format!("{}: {e}", seg.mask_ref))?;
            seg.mask_png_base64 = Some(STANDARD.encode(bytes));
        }
    }
    Ok(())
}

/// 504 when a task timed out, 502 when the backend was unreachable or
/// misbehaved, 200 otherwise. The body is the full report either way.
fn report_status(report: &ExecutionReport) -> StatusCode {
    let kinds: Vec<&str> = report
        .results
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| e.kind.as_str()))
        .collect();
    if kinds.contains(&"timeout") {
        StatusCode::GATEWAY_TIMEOUT
    } else if kinds.iter().any(|k| matches!(*k, "transport_failure" | "protocol_violation")) {
        StatusCode::BAD_GATEWAY
    } else {
        StatusCode::OK
    }
}

async fn execute(State(p): State<Shared>, Query(params): Query<ExecuteParams>, req: Request) -> Response {
    let id = request_id(req.headers());
    let input = match read_execute_input(req).await {
        Ok(i) => i,
        Err(message) => return bad_request(message, &id),
    };
    let mask_dir = p.config.output_dir.join(&id);
    let job_id = id.clone();
    let work = move || -> Result<_, PipelineError> {
        let image = decode_image(input.image).map_err(PipelineError::Image)?;
        let backend = p.backend(input.stub_outcome.as_deref(), Some(mask_dir))?;
        let frontend = frontend_of(&p, input.offline);
        let mut executed = p.run(&input.query, frontend, &image, &backend)?;
        if params.inline_masks {
            inline_masks(&mut executed.report)
                .map_err(|m| PipelineError::Internal(format!("request {job_id}: {m}")))?;
        }
        Ok(executed)
    };
    match blocking(&id, work).await {
        Err(resp) => resp,
        Ok(Err(e)) => pipeline_error(&e, &id),
        Ok(Ok(executed)) => json_response(
            report_status(&executed.report),
            report_json(&executed.report),
            &id,
            Some(executed.timings),
        ),
    }
}
