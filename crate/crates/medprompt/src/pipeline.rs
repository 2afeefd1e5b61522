//! Query → plan → resolved plan → execution report, shared by the CLI and
//! the HTTP service.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use medprompt_core::dag::{validate_dag, DagError};
use medprompt_core::engine::{execute, BackendError, Clock, ExecutionReport};
use medprompt_core::normalize::{NormalizationProvider, Normalizer, SynonymLexicon};
use medprompt_core::offline::{OfflineError, OfflineParser};
use medprompt_core::plan::{Plan, PlanError};
use medprompt_core::prompt::PromptError;
use medprompt_core::registry::{ReferenceVocab, Registry};
use medprompt_core::resolve::{ResolvedPlan, Resolver};
use medprompt_core::stub::StubConfig;

use crate::backend::{Backend, FileMasks, RemoteBackend};
use crate::config::{AppConfig, BackendKind, ConfigError, Frontend};
use crate::imaging::LoadedImage;
use crate::llm::{LlmClient, LlmError, LlmNormalizer, LlmPlanError, LlmPlanner};
use crate::scan::{load_lexicon, scan_registry, ScanError};

/// Wall-clock seconds since the clock was created.
#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::start()
    }
}

impl Clock for MonotonicClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Offline(#[from] OfflineError),
    #[error(transparent)]
    Llm(#[from] LlmPlanError),
    #[error("invalid task graph: {}", join_dag(.0))]
    Dag(Vec<DagError>),
    #[error("{0}")]
    Image(BackendError),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("internal error: {0}")]
    Internal(String),
}

fn join_dag(errors: &[DagError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Which side is at fault, which decides exit codes and HTTP statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    User,
    Upstream,
    UpstreamTimeout,
    Internal,
}

impl PipelineError {
    pub fn fault(&self) -> Fault {
        match self {
            PipelineError::Config(_)
            | PipelineError::Scan(_)
            | PipelineError::Offline(_)
            | PipelineError::Dag(_)
            | PipelineError::Image(_)
            | PipelineError::InvalidRequest(_) => Fault::User,
            PipelineError::Internal(_) => Fault::Internal,
            PipelineError::Llm(e) => match e {
                LlmPlanError::Plan(_) | LlmPlanError::Llm(LlmError::NotConfigured(_)) => Fault::User,
                LlmPlanError::Llm(LlmError::Timeout(_)) => Fault::UpstreamTimeout,
                LlmPlanError::Llm(_) => Fault::Upstream,
                LlmPlanError::Prompt(_) => Fault::Internal,
            },
        }
    }

    /// Machine-readable error name.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "InvalidConfig",
            PipelineError::Scan(_) => "RegistryUnavailable",
            PipelineError::Offline(OfflineError::NoTaskRecognized(_)) => "NoTaskRecognized",
            PipelineError::Offline(OfflineError::Plan(e)) | PipelineError::Llm(LlmPlanError::Plan(e)) => match e {
                PlanError::NoJsonFound => "NoJsonFound",
                PlanError::SchemaViolation { .. } => "SchemaViolation",
                PlanError::DanglingDependency { .. } => "DanglingDependency",
            },
            PipelineError::Llm(LlmPlanError::Llm(e)) => e.kind(),
            PipelineError::Llm(LlmPlanError::Prompt(PromptError::MissingExampleAsset(_))) => "MissingExampleAsset",
            PipelineError::Dag(_) => "InvalidTaskGraph",
            PipelineError::Image(e) => match e {
                BackendError::DecodeFailure(_) => "DecodeFailure",
                BackendError::IntentMismatch { .. } => "IntentMismatch",
                BackendError::InvalidForcedOutcome(_) => "InvalidForcedOutcome",
                BackendError::Timeout(_) => "Timeout",
                BackendError::ProtocolViolation(_) => "ProtocolViolation",
                BackendError::TransportFailure(_) => "TransportFailure",
                BackendError::Other(_) => "BackendError",
            },
            PipelineError::InvalidRequest(_) => "InvalidRequest",
            PipelineError::Internal(_) => "Internal",
        }
    }
}

/// Seconds spent in each phase of a request.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Timings {
    pub frontend: f64,
    pub resolve: f64,
    pub execute: f64,
}

impl Timings {
    /// `Server-Timing` header value, durations in milliseconds.
    pub fn server_timing(&self) -> String {
        format!(
            "frontend;dur={:.3}, resolve;dur={:.3}, execute;dur={:.3}",
            self.frontend * 1e3,
            self.resolve * 1e3,
            self.execute * 1e3
        )
    }
}

#[derive(Debug, Clone)]
pub struct Planned {
    pub plan: ResolvedPlan,
    pub timings: Timings,
}

#[derive(Debug, Clone)]
pub struct Executed {
    pub plan: ResolvedPlan,
    pub report: ExecutionReport,
    pub timings: Timings,
}

/// An immutable snapshot of configuration, registry and lexicon.
pub struct Pipeline {
    pub config: AppConfig,
    pub registry: Registry,
    pub normalizer: Normalizer,
    vocab: ReferenceVocab,
    offline: OfflineParser,
    llm: Option<LlmClient>,
}

impl Pipeline {
    /// Scans the configured registry and loads the lexicon.
    pub fn load(config: AppConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let lexicon = load_lexicon(config.lexicon_path.as_deref())?;
        let registry = scan_registry(&config.registry_root, &lexicon)?;
        Ok(Self::from_parts(config, registry, lexicon))
    }

    pub fn from_parts(config: AppConfig, registry: Registry, lexicon: SynonymLexicon) -> Self {
        let vocab = registry.vocab();
        let offline = OfflineParser::new(&vocab, &lexicon);
        let normalizer = Normalizer::new(lexicon).with_tau(config.tau_norm);
        let llm = LlmClient::from_settings(&config.llm).ok();
        Self {
            config,
            registry,
            normalizer,
            vocab,
            offline,
            llm,
        }
    }

    pub fn vocab(&self) -> &ReferenceVocab {
        &self.vocab
    }

    fn llm_client(&self) -> Result<&LlmClient, PipelineError> {
        // from_settings is re-run only to produce its error message
        self.llm
            .as_ref()
            .ok_or_else(|| LlmPlanError::Llm(LlmClient::from_settings(&self.config.llm).unwrap_err()).into())
    }

    /// Runs only the chosen frontend.
    pub fn parse(&self, query: &str, frontend: Frontend) -> Result<Plan, PipelineError> {
        match frontend {
            Frontend::Offline => Ok(self.offline.parse(query)?),
            Frontend::Llm => Ok(LlmPlanner::new(self.llm_client()?.clone()).plan(query, &self.vocab)?),
        }
    }

    /// Parses, resolves and checks the task graph of `query`.
    pub fn plan(&self, query: &str, frontend: Frontend) -> Result<Planned, PipelineError> {
        let mut timings = Timings::default();
        let t0 = Instant::now();
        let plan = self.parse(query, frontend)?;
        timings.frontend = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        // the model-backed normalization stage is only used alongside the
        // model-backed planner so that the offline path stays network free
        let provider = match frontend {
            Frontend::Llm => self.llm.clone().map(|client| LlmNormalizer { client }),
            Frontend::Offline => None,
        };
        let resolved = Resolver::new(&self.registry, &self.normalizer, self.config.route_params())
            .with_provider(provider.as_ref().map(|p| p as &dyn NormalizationProvider))
            .resolve(&plan);
        timings.resolve = t1.elapsed().as_secs_f64();
        validate_dag(&resolved).map_err(PipelineError::Dag)?;
        Ok(Planned {
            plan: resolved,
            timings,
        })
    }

    /// The configured backend. `stub_outcome` forces stub classifications;
    /// masks go to `mask_dir` when given.
    pub fn backend(&self, stub_outcome: Option<&str>, mask_dir: Option<PathBuf>) -> Result<Backend, PipelineError> {
        let masks = mask_dir.map_or_else(FileMasks::discard, FileMasks::new);
        match self.config.backend {
            BackendKind::Stub => {
                let config = stub_outcome.map_or_else(StubConfig::default, StubConfig::forced);
                Ok(Backend::stub(config, masks))
            }
            BackendKind::Remote => {
                if stub_outcome.is_some() {
                    return Err(PipelineError::InvalidRequest(
                        "a forced stub outcome needs the stub backend".into(),
                    ));
                }
                let endpoint = self.config.remote_endpoint.as_deref().unwrap_or_default();
                Ok(Backend::Remote(RemoteBackend::new(
                    endpoint,
                    REMOTE_TIMEOUT,
                    masks,
                    self.config.llm.max_in_flight,
                )))
            }
        }
    }

    /// Plans and executes `query` on `image`.
    pub fn run(
        &self,
        query: &str,
        frontend: Frontend,
        image: &LoadedImage,
        backend: &Backend,
    ) -> Result<Executed, PipelineError> {
        let Planned { plan, mut timings } = self.plan(query, frontend)?;
        let t0 = Instant::now();
        let report = execute(&plan, &self.registry, image, backend, &MonotonicClock::start())
            .map_err(PipelineError::Dag)?;
        timings.execute = t0.elapsed().as_secs_f64();
        Ok(Executed { plan, report, timings })
    }
}

/// Per-request limit for the remote model server; model inference can be
/// much slower than planning, so it does not share the LLM timeout.
pub const REMOTE_TIMEOUT: Duration = Duration::from_secs(120);

/// Pretty plan JSON with a trailing newline. `explain` keeps every ranked
/// candidate; otherwise only the winning breakdown is shown.
pub fn plan_json(plan: &ResolvedPlan, explain: bool) -> String {
    let mut text = if explain {
        serde_json::to_string_pretty(plan)
    } else {
        serde_json::to_string_pretty(&plan.clone().without_rankings())
    }
    .expect("plans serialize");
    text.push('\n');
    text
}

pub fn report_json(report: &ExecutionReport) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialize");
    text.push('\n');
    text
}
