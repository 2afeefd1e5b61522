//! Concrete inference backends: the built-in stub and the remote client.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use medprompt_core::engine::{BackendError, InferenceBackend, SegmentationOutput};
use medprompt_core::registry::WeightRecord;
use medprompt_core::stub::{mask_file_name, Mask, MaskSink, StubBackend, StubConfig};

use crate::imaging::{encode_mask_png, LoadedImage};
use crate::limit::InFlight;
use crate::wire::{
    validate_probabilities, validate_segmentation, ClassificationResponse, ErrorBody, HealthResponse,
    InferenceRequest, SegmentationResponse, HEALTH_PATH, INFER_PATH,
};

/// Writes masks as PNG files into a directory; with no directory the
/// masks are dropped and only their would-be file names are reported.
#[derive(Debug, Clone, Default)]
pub struct FileMasks {
    pub dir: Option<PathBuf>,
}

impl FileMasks {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: Some(dir.into()) }
    }

    pub fn discard() -> Self {
        Self { dir: None }
    }
}

impl MaskSink for FileMasks {
    fn store(&self, task_id: &str, weight: &WeightRecord, mask: &Mask) -> Result<String, BackendError> {
        let name = mask_file_name(task_id, weight);
        let Some(dir) = &self.dir else {
            return Ok(name);
        };
        let io = |e: std::io::Error| BackendError::Other(format!("cannot write mask to {}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let path = dir.join(&name);
        std::fs::write(&path, encode_mask_png(mask)).map_err(io)?;
        Ok(path.display().to_string())
    }
}

/// Client for a model server speaking the `/infer` protocol.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    pub endpoint: String,
    pub timeout: Duration,
    pub masks: FileMasks,
    in_flight: Arc<InFlight>,
}

/// Validated response of one `/infer` call.
#[derive(Debug, Clone, PartialEq)]
pub enum RemoteOutput {
    Probabilities(Vec<f64>),
    Mask(Mask),
}

impl RemoteBackend {
    pub fn new(endpoint: &str, timeout: Duration, masks: FileMasks, max_in_flight: usize) -> Self {
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            timeout,
            masks,
            in_flight: Arc::new(InFlight::new(max_in_flight)),
        }
    }

    /// Shares the in-flight cap with another client.
    pub fn with_limit(mut self, in_flight: Arc<InFlight>) -> Self {
        self.in_flight = in_flight;
        self
    }

    fn client(&self) -> Result<reqwest::blocking::Client, BackendError> {
        reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| BackendError::TransportFailure(e.to_string()))
    }

    fn transport(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout(format!("{} after {:?}", self.endpoint, self.timeout))
        } else {
            BackendError::TransportFailure(format!("{}: {e}", self.endpoint))
        }
    }

    /// POSTs `request` to `/infer` and validates the answer against
    /// `class_count` and the mode.
    pub fn remote_execute(&self, request: &InferenceRequest) -> Result<RemoteOutput, BackendError> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client()?
            .post(format!("{}{INFER_PATH}", self.endpoint))
            .json(request)
            .send()
            .map_err(|e| self.transport(e))?;
        let status = resp.status();
        let body = resp.bytes().map_err(|e| self.transport(e))?;
        if !status.is_success() {
            let detail = serde_json::from_slice::<ErrorBody>(&body)
                .map(|b| format!("{}: {}", b.error, b.message))
                .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
            return Err(if status.is_server_error() {
                BackendError::TransportFailure(format!("server error {status}: {detail}"))
            } else {
                BackendError::ProtocolViolation(format!("request rejected with {status}: {detail}"))
            });
        }
        let bad_json = |e: serde_json::Error| BackendError::ProtocolViolation(format!("malformed response: {e}"));
        match request.mode {
            0 => {
                let r: ClassificationResponse = serde_json::from_slice(&body).map_err(bad_json)?;
                validate_probabilities(&r.probabilities, request.class_count)?;
                Ok(RemoteOutput::Probabilities(r.probabilities))
            }
            1 => {
                let r: SegmentationResponse = serde_json::from_slice(&body).map_err(bad_json)?;
                Ok(RemoteOutput::Mask(validate_segmentation(&r)?))
            }
            m => Err(BackendError::ProtocolViolation(format!("unknown mode {m}"))),
        }
    }

    pub fn health(&self) -> Result<HealthResponse, BackendError> {
        let _permit = self.in_flight.acquire();
        let resp = self
            .client()?
            .get(format!("{}{HEALTH_PATH}", self.endpoint))
            .send()
            .map_err(|e| self.transport(e))?;
        if !resp.status().is_success() {
            return Err(BackendError::TransportFailure(format!("health check returned {}", resp.status())));
        }
        resp.json()
            .map_err(|e| BackendError::ProtocolViolation(format!("malformed health response: {e}")))
    }
}

impl InferenceBackend for RemoteBackend {
    type Image = LoadedImage;

    fn classify(&self, image: &LoadedImage, weight: &WeightRecord, _task_id: &str) -> Result<Vec<f64>, BackendError> {
        match self.remote_execute(&InferenceRequest::new(weight, &image.bytes))? {
            RemoteOutput::Probabilities(p) => Ok(p),
            RemoteOutput::Mask(_) => Err(BackendError::ProtocolViolation("expected probabilities".into())),
        }
    }

    fn segment(&self, image: &LoadedImage, weight: &WeightRecord, task_id: &str) -> Result<SegmentationOutput, BackendError> {
        match self.remote_execute(&InferenceRequest::new(weight, &image.bytes))? {
            RemoteOutput::Mask(mask) => Ok(SegmentationOutput {
                mask_ref: self.masks.store(task_id, weight, &mask)?,
                foreground_fraction: mask.foreground_fraction(),
                width: mask.width,
                height: mask.height,
                mask_png_base64: None,
            }),
            RemoteOutput::Probabilities(_) => Err(BackendError::ProtocolViolation("expected a mask".into())),
        }
    }
}

/// The backend chosen by configuration.
#[derive(Debug, Clone)]
pub enum Backend {
    Stub(StubBackend<FileMasks>),
    Remote(RemoteBackend),
}

impl Backend {
    pub fn stub(config: StubConfig, masks: FileMasks) -> Self {
        Backend::Stub(StubBackend::with_sink(config, masks))
    }
}

impl InferenceBackend for Backend {
    type Image = LoadedImage;

    fn classify(&self, image: &LoadedImage, weight: &WeightRecord, task_id: &str) -> Result<Vec<f64>, BackendError> {
        match self {
            Backend::Stub(s) => s.classify(&image.luma, weight, task_id),
            Backend::Remote(r) => r.classify(image, weight, task_id),
        }
    }

    fn segment(&self, image: &LoadedImage, weight: &WeightRecord, task_id: &str) -> Result<SegmentationOutput, BackendError> {
        match self {
            Backend::Stub(s) => s.segment(&image.luma, weight, task_id),
            Backend::Remote(r) => r.segment(image, weight, task_id),
        }
    }
}
