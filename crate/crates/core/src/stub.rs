//! Deterministic intensity-rule backend used in tests and demos.
//!
//! Classification looks only at the mean intensity `m` of the image:
//! a binary weight answers `[1 - m, m]`; an `n`-class weight picks the
//! band `k` with `m` in `[k/n, (k+1)/n)` and gives it `1 - d`, where `d`
//! is the distance from `m` to the band centre, spreading `d` evenly over
//! the other classes. Segmentation marks pixels brighter than the
//! threshold as foreground.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::engine::{BackendError, InferenceBackend, SegmentationOutput};
use crate::labels::NEGATIVE_LABEL;
use crate::naming::Intent;
use crate::registry::WeightRecord;
use crate::text::canonicalize;

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LumaImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl LumaImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, BackendError> {
        if pixels.len() as u64 != u64::from(width) * u64::from(height) {
            return Err(BackendError::DecodeFailure(format!(
                "{width}x{height} image needs {} pixels, got {}",
                u64::from(width) * u64::from(height),
                pixels.len()
            )));
        }
        if pixels.is_empty() {
            return Err(BackendError::DecodeFailure("image has no pixels".into()));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; (width * height) as usize],
        }
    }

    /// Alternating 0/255 cells of `cell` pixels.
    pub fn checkerboard(width: u32, height: u32, cell: u32) -> Self {
        let cell = cell.max(1);
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| if (x / cell + y / cell).is_multiple_of(2) { 255 } else { 0 }))
            .collect();
        Self { width, height, pixels }
    }

    /// Mean intensity scaled to [0, 1].
    pub fn mean_intensity(&self) -> f64 {
        let sum: u64 = self.pixels.iter().map(|&p| u64::from(p)).sum();
        sum as f64 / (255.0 * self.pixels.len() as f64)
    }
}

/// Binary foreground mask, 0 or 255 per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Mask {
    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.pixels.iter().filter(|&&p| p > 0).count();
        fg as f64 / self.pixels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveRule {
    #[default]
    MeanIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubConfig {
    /// `"positive"`, `"negative"`, or one of the weight's labels.
    #[serde(default)]
    pub forced_outcome: Option<String>,
    #[serde(default)]
    pub positive_rule: PositiveRule,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    0.5
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            forced_outcome: None,
            positive_rule: PositiveRule::MeanIntensity,
            threshold: default_threshold(),
        }
    }
}

impl StubConfig {
    pub fn forced(outcome: &str) -> Self {
        Self {
            forced_outcome: Some(outcome.into()),
            ..Self::default()
        }
    }
}

fn forced_index(outcome: &str, labels: &[String]) -> Result<usize, BackendError> {
    let wanted = canonicalize(outcome);
    let find = |l: &str| labels.iter().position(|x| canonicalize(x) == l);
    let idx = match wanted.as_str() {
        "positive" => labels.iter().position(|l| l != NEGATIVE_LABEL),
        "negative" => find(NEGATIVE_LABEL),
        other => find(other),
    };
    idx.ok_or_else(|| BackendError::InvalidForcedOutcome(outcome.into()))
}

/// Probability vector over `weight.class_labels`.
pub fn stub_classify(image: &LumaImage, weight: &WeightRecord, cfg: &StubConfig) -> Result<Vec<f64>, BackendError> {
    if weight.intent() != Intent::Classification {
        return Err(BackendError::IntentMismatch {
            weight_id: weight.weight_id.clone(),
            requested: Intent::Classification,
        });
    }
    let n = weight.class_labels.len();
    if n == 0 {
        return Err(BackendError::Other(format!("{} has no class labels", weight.weight_id)));
    }
    if let Some(outcome) = &cfg.forced_outcome {
        let mut p = vec![0.0; n];
        p[forced_index(outcome, &weight.class_labels)?] = 1.0;
        return Ok(p);
    }
    Ok(intensity_probabilities(image.mean_intensity(), n))
}

/// The mean-intensity rule on its own, for `n` classes.
pub fn intensity_probabilities(m: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        2 => vec![1.0 - m, m],
        _ => {
            let nf = n as f64;
            let k = ((m * nf) as usize).min(n - 1);
            let d = (m - (k as f64 + 0.5) / nf).abs();
            let rest = d / (nf - 1.0);
            let mut p = vec![rest; n];
            p[k] = 1.0 - d;
            p
        }
    }
}

pub fn stub_segment(image: &LumaImage, weight: &WeightRecord, cfg: &StubConfig) -> Result<Mask, BackendError> {
    if weight.intent() != Intent::Segmentation {
        return Err(BackendError::IntentMismatch {
            weight_id: weight.weight_id.clone(),
            requested: Intent::Segmentation,
        });
    }
    Ok(threshold_mask(image, cfg.threshold))
}

pub fn threshold_mask(image: &LumaImage, threshold: f64) -> Mask {
    Mask {
        width: image.width,
        height: image.height,
        pixels: image
            .pixels
            .iter()
            .map(|&p| if f64::from(p) / 255.0 > threshold { 255 } else { 0 })
            .collect(),
    }
}

/// Where segmentation masks go; returns the reference recorded in the report.
pub trait MaskSink {
    fn store(&self, task_id: &str, weight: &WeightRecord, mask: &Mask) -> Result<String, BackendError>;
}

/// Keeps nothing; the reference is the file name a writer would use.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiscardMasks;

pub fn mask_file_name(task_id: &str, weight: &WeightRecord) -> String {
    let safe: String = weight
        .weight_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect();
    format!("{task_id}_{safe}.png")
}

impl MaskSink for DiscardMasks {
    fn store(&self, task_id: &str, weight: &WeightRecord, _: &Mask) -> Result<String, BackendError> {
        Ok(mask_file_name(task_id, weight))
    }
}

#[derive(Debug, Clone, Default)]
pub struct StubBackend<M = DiscardMasks> {
    pub config: StubConfig,
    pub masks: M,
}

impl StubBackend {
    pub fn new(config: StubConfig) -> Self {
        Self {
            config,
            masks: DiscardMasks,
        }
    }
}

impl<M: MaskSink> StubBackend<M> {
    pub fn with_sink(config: StubConfig, masks: M) -> Self {
        Self { config, masks }
    }
}

impl<M: MaskSink> InferenceBackend for StubBackend<M> {
    type Image = LumaImage;

    fn classify(&self, image: &LumaImage, weight: &WeightRecord, _task_id: &str) -> Result<Vec<f64>, BackendError> {
        stub_classify(image, weight, &self.config)
    }

    fn segment(&self, image: &LumaImage, weight: &WeightRecord, task_id: &str) -> Result<SegmentationOutput, BackendError> {
        let mask = stub_segment(image, weight, &self.config)?;
        Ok(SegmentationOutput {
            mask_ref: self.masks.store(task_id, weight, &mask)?,
            foreground_fraction: mask.foreground_fraction(),
            width: mask.width,
            height: mask.height,
            mask_png_base64: None,
        })
    }
}
