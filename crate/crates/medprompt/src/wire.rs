//! JSON messages of the `/infer` protocol spoken with remote model servers.
//!
//! See `docs/wire-protocol.md` for the full contract.

use base64::Engine as _;
use medprompt_core::engine::{BackendError, PROBABILITY_SUM_TOLERANCE};
use medprompt_core::naming::Intent;
use medprompt_core::registry::WeightRecord;
use medprompt_core::stub::Mask;
use serde::{Deserialize, Serialize};

use crate::imaging::decode_mask_png;

pub const INFER_PATH: &str = "/infer";
pub const HEALTH_PATH: &str = "/health";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceRequest {
    pub weight_id: String,
    /// 0 for classification, 1 for segmentation.
    pub mode: u8,
    pub class_count: usize,
    /// Base64 (standard alphabet, padded) of the original image file.
    pub image: String,
}

impl InferenceRequest {
    pub fn new(weight: &WeightRecord, image_bytes: &[u8]) -> Self {
        Self {
            weight_id: weight.weight_id.clone(),
            mode: weight.intent().mode(),
            class_count: weight.class_count,
            image: base64::engine::general_purpose::STANDARD.encode(image_bytes),
        }
    }

    pub fn intent(&self) -> Option<Intent> {
        Intent::from_mode(self.mode)
    }

    pub fn image_bytes(&self) -> Result<Vec<u8>, BackendError> {
        base64::engine::general_purpose::STANDARD
            .decode(&self.image)
            .map_err(|e| BackendError::DecodeFailure(format!("image is not valid base64: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResponse {
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationResponse {
    pub mask_png_base64: String,
    pub foreground_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub weights: Vec<String>,
}

/// Error body servers send with non-2xx statuses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default)]
    pub message: String,
}

fn violation(message: String) -> BackendError {
    BackendError::ProtocolViolation(message)
}

pub fn validate_probabilities(probabilities: &[f64], class_count: usize) -> Result<(), BackendError> {
    if probabilities.len() != class_count {
        return Err(violation(format!(
            "expected {class_count} probabilities, got {}",
            probabilities.len()
        )));
    }
    if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p))) {
        return Err(violation(format!("probability {p} outside [0, 1]")));
    }
    let sum: f64 = probabilities.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
        return Err(violation(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(())
}

/// Decodes the mask and checks the reported fraction against it.
pub fn validate_segmentation(resp: &SegmentationResponse) -> Result<Mask, BackendError> {
    if !(resp.foreground_fraction.is_finite() && (0.0..=1.0).contains(&resp.foreground_fraction)) {
        return Err(violation(format!(
            "foreground fraction {} outside [0, 1]",
            resp.foreground_fraction
        )));
    }
    let png = base64::engine::general_purpose::STANDARD
        .decode(&resp.mask_png_base64)
        .map_err(|e| violation(format!("mask is not valid base64: {e}")))?;
    let mask = decode_mask_png(&png).map_err(|e| violation(e.to_string()))?;
    let actual = mask.foreground_fraction();
    if (actual - resp.foreground_fraction).abs() > 1e-6 {
        return Err(violation(format!(
            "reported foreground fraction {} but mask has {actual}",
            resp.foreground_fraction
        )));
    }
    Ok(mask)
}
