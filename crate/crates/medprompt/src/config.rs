//! Application settings.
//!
//! Every key is looked up in order: command-line flag, environment
//! variable, JSON config file, built-in default.
//!
//! | key              | flag                | environment             |
//! |------------------|---------------------|-------------------------|
//! | registry_root    | `--registry`        | `MEDPROMPT_REGISTRY`    |
//! | lexicon_path     | `--lexicon`         | `MEDPROMPT_LEXICON`     |
//! | alpha            | `--alpha`           | `MEDPROMPT_ALPHA`       |
//! | beta             | `--beta`            | `MEDPROMPT_BETA`        |
//! | threshold        | `--threshold`       | `MEDPROMPT_THRESHOLD`   |
//! | tau_norm         | `--tau`             | `MEDPROMPT_TAU`         |
//! | frontend         | `--frontend`        | `MEDPROMPT_FRONTEND`    |
//! | backend          | `--backend`         | `MEDPROMPT_BACKEND`     |
//! | remote_endpoint  | `--remote`          | `MEDPROMPT_REMOTE`      |
//! | output_dir       | `--output-dir`      | `MEDPROMPT_OUTPUT_DIR`  |
//! | service_port     | `--port`            | `MEDPROMPT_PORT`        |
//! | llm_endpoint     | `--llm-endpoint`    | `LLM_ENDPOINT`          |
//! | llm_model        | `--llm-model`       | `LLM_MODEL`             |
//! | llm_api_key      |                     | `LLM_API_KEY`           |
//! | llm_timeout_secs |                     | `LLM_TIMEOUT_SECS`      |
//!
//! The config file itself is named by `--config` or `MEDPROMPT_CONFIG`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use medprompt_core::normalize::DEFAULT_TAU_NORM;
use medprompt_core::router::{RouteParams, DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_THRESHOLD};
use serde::{Deserialize, Serialize};

/// Demo registry shipped with the crate.
pub const BUNDLED_REGISTRY: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/registry");
/// Gold corpus shipped with the crate.
pub const BUNDLED_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data/corpus.jsonl");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    Offline,
    Llm,
}

impl FromStr for Frontend {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "offline" => Ok(Frontend::Offline),
            "llm" => Ok(Frontend::Llm),
            other => Err(ConfigError::Invalid {
                key: "frontend",
                message: format!("{other:?} is not offline or llm"),
            }),
        }
    }
}

impl fmt::Display for Frontend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frontend::Offline => "offline",
            Frontend::Llm => "llm",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Stub,
    Remote,
}

impl FromStr for BackendKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stub" => Ok(BackendKind::Stub),
            "remote" => Ok(BackendKind::Remote),
            other => Err(ConfigError::Invalid {
                key: "backend",
                message: format!("{other:?} is not stub or remote"),
            }),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid {key}: {message}")]
    Invalid { key: &'static str, message: String },
    #[error("cannot read config file {path}: {message}")]
    File { path: PathBuf, message: String },
}

/// Keys as they may appear in the JSON config file. Every field is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub registry_root: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub threshold: Option<f64>,
    pub tau_norm: Option<f64>,
    pub frontend: Option<Frontend>,
    pub backend: Option<BackendKind>,
    pub remote_endpoint: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub service_port: Option<u16>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
    pub llm_timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let err = |message: String| ConfigError::File {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub config_file: Option<PathBuf>,
    pub registry_root: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub threshold: Option<f64>,
    pub tau_norm: Option<f64>,
    pub frontend: Option<Frontend>,
    pub backend: Option<BackendKind>,
    pub remote_endpoint: Option<String>,
    pub output_dir: Option<PathBuf>,
    pub service_port: Option<u16>,
    pub llm_endpoint: Option<String>,
    pub llm_model: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmSettings {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            api_key: None,
            timeout: Duration::from_secs(30),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub registry_root: PathBuf,
    pub lexicon_path: Option<PathBuf>,
    pub alpha: f64,
    pub beta: f64,
    pub threshold: f64,
    pub tau_norm: f64,
    pub frontend: Frontend,
    pub backend: BackendKind,
    pub remote_endpoint: Option<String>,
    pub output_dir: PathBuf,
    pub service_port: u16,
    pub llm: LlmSettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            registry_root: PathBuf::from(BUNDLED_REGISTRY),
            lexicon_path: None,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            threshold: DEFAULT_THRESHOLD,
            tau_norm: DEFAULT_TAU_NORM,
            frontend: Frontend::Offline,
            backend: BackendKind::Stub,
            remote_endpoint: None,
            output_dir: PathBuf::from("medprompt-out"),
            service_port: 8080,
            llm: LlmSettings::default(),
        }
    }
}

fn parse_env<T: FromStr>(key: &'static str, raw: Option<String>) -> Result<Option<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.filter(|v| !v.trim().is_empty())
        .map(|v| {
            v.trim().parse::<T>().map_err(|e| ConfigError::Invalid {
                key,
                message: format!("{v:?}: {e}"),
            })
        })
        .transpose()
}

impl AppConfig {
    /// Merges the four layers. `env` is usually `|k| std::env::var(k).ok()`.
    pub fn resolve(overrides: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let file_path = overrides
            .config_file
            .clone()
            .or_else(|| env("MEDPROMPT_CONFIG").filter(|v| !v.is_empty()).map(PathBuf::from));
        let file = match file_path {
            Some(p) => FileConfig::load(&p)?,
            None => FileConfig::default(),
        };
        let d = AppConfig::default();

        let config = AppConfig {
            registry_root: overrides
                .registry_root
                .clone()
                .or(parse_env("registry_root", env("MEDPROMPT_REGISTRY"))?)
                .or(file.registry_root)
                .unwrap_or(d.registry_root),
            lexicon_path: overrides
                .lexicon_path
                .clone()
                .or(parse_env("lexicon_path", env("MEDPROMPT_LEXICON"))?)
                .or(file.lexicon_path),
            alpha: overrides
                .alpha
                .or(parse_env("alpha", env("MEDPROMPT_ALPHA"))?)
                .or(file.alpha)
                .unwrap_or(d.alpha),
            beta: overrides
                .beta
                .or(parse_env("beta", env("MEDPROMPT_BETA"))?)
                .or(file.beta)
                .unwrap_or(d.beta),
            threshold: overrides
                .threshold
                .or(parse_env("threshold", env("MEDPROMPT_THRESHOLD"))?)
                .or(file.threshold)
                .unwrap_or(d.threshold),
            tau_norm: overrides
                .tau_norm
                .or(parse_env("tau_norm", env("MEDPROMPT_TAU"))?)
                .or(file.tau_norm)
                .unwrap_or(d.tau_norm),
            frontend: overrides
                .frontend
                .or(parse_env("frontend", env("MEDPROMPT_FRONTEND"))?)
                .or(file.frontend)
                .unwrap_or(d.frontend),
            backend: overrides
                .backend
                .or(parse_env("backend", env("MEDPROMPT_BACKEND"))?)
                .or(file.backend)
                .unwrap_or(d.backend),
            remote_endpoint: overrides
                .remote_endpoint
                .clone()
                .or(env("MEDPROMPT_REMOTE").filter(|v| !v.is_empty()))
                .or(file.remote_endpoint),
            output_dir: overrides
                .output_dir
                .clone()
                .or(parse_env("output_dir", env("MEDPROMPT_OUTPUT_DIR"))?)
                .or(file.output_dir)
                .unwrap_or(d.output_dir),
            service_port: overrides
                .service_port
                .or(parse_env("service_port", env("MEDPROMPT_PORT"))?)
                .or(file.service_port)
                .unwrap_or(d.service_port),
            llm: LlmSettings {
                endpoint: overrides
                    .llm_endpoint
                    .clone()
                    .or(env("LLM_ENDPOINT").filter(|v| !v.is_empty()))
                    .or(file.llm_endpoint),
                model: overrides
                    .llm_model
                    .clone()
                    .or(env("LLM_MODEL").filter(|v| !v.is_empty()))
                    .or(file.llm_model),
                api_key: env("LLM_API_KEY").filter(|v| !v.is_empty()),
                timeout: parse_env::<f64>("llm_timeout_secs", env("LLM_TIMEOUT_SECS"))?
                    .or(file.llm_timeout_secs)
                    .map(Duration::from_secs_f64)
                    .unwrap_or(d.llm.timeout),
                max_in_flight: file.max_in_flight.unwrap_or(d.llm.max_in_flight),
            },
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key, message: String| Err(ConfigError::Invalid { key, message });
        if self.alpha.is_nan() || self.alpha <= 0.0 {
            return invalid("alpha", format!("{} must be positive", self.alpha));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return invalid("beta", format!("{} must be positive", self.beta));
        }
        let max = 1.0 + self.alpha + self.beta;
        if !(self.threshold > 0.0 && self.threshold < max) {
            return invalid("threshold", format!("{} must lie in (0, {max})", self.threshold));
        }
        if !(self.tau_norm > 0.0 && self.tau_norm <= 1.0) {
            return invalid("tau_norm", format!("{} must lie in (0, 1]", self.tau_norm));
        }
        if self.backend == BackendKind::Remote && self.remote_endpoint.is_none() {
            return invalid("remote_endpoint", "the remote backend needs an endpoint".into());
        }
        if self.llm.max_in_flight == 0 {
            return invalid("max_in_flight", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn route_params(&self) -> RouteParams {
        RouteParams {
            alpha: self.alpha,
            beta: self.beta,
            threshold: self.threshold,
        }
    }
}
