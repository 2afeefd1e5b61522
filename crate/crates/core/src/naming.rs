//! Weight filename convention: `Intent_Target[-Target...]_Modality`.
//!
//! The intent segment accepts the usual abbreviations (`Cls`, `Class`,
//! `Seg`, ...). Classification weights list one target per class separated
//! by hyphens; a segmentation weight always has a single target, so a
//! hyphen inside its target (`Seg_Optic-Disc_Fundus`) is part of the name.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::text::canonicalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Classification,
    Segmentation,
}

const CLASSIFICATION_SPELLINGS: &[&str] = &["cls", "class", "classification"];
const SEGMENTATION_SPELLINGS: &[&str] = &["seg", "segment", "segmentation"];

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Classification => "classification",
            Intent::Segmentation => "segmentation",
        }
    }

    /// Short prefix used when formatting weight names.
    pub fn abbreviation(self) -> &'static str {
        match self {
            Intent::Classification => "Cls",
            Intent::Segmentation => "Seg",
        }
    }

    /// Wire mode flag: 0 selects the classification pathway, 1 segmentation.
    pub fn mode(self) -> u8 {
        match self {
            Intent::Classification => 0,
            Intent::Segmentation => 1,
        }
    }

    pub fn from_mode(mode: u8) -> Option<Self> {
        match mode {
            0 => Some(Intent::Classification),
            1 => Some(Intent::Segmentation),
            _ => None,
        }
    }

    /// Matches any accepted spelling, case-insensitively.
    pub fn from_token(token: &str) -> Option<Self> {
        let token = canonicalize(token);
        if CLASSIFICATION_SPELLINGS.contains(&token.as_str()) {
            Some(Intent::Classification)
        } else if SEGMENTATION_SPELLINGS.contains(&token.as_str()) {
            Some(Intent::Segmentation)
        } else {
            None
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Intent {
    type Err = NameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Intent::from_token(s).ok_or_else(|| NameError::UnknownIntent(s.to_string()))
    }
}

/// The intent/target/modality triple encoded in a weight filename.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParsedName {
    pub intent: Intent,
    pub raw_targets: Vec<String>,
    pub raw_modality: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NameError {
    #[error("malformed weight name {0:?}: expected Intent_Target_Modality")]
    MalformedName(String),
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("empty {segment} segment in weight name {name:?}")]
    EmptySegment { name: String, segment: &'static str },
}

impl ParsedName {
    pub fn is_multiclass(&self) -> bool {
        self.intent == Intent::Classification && self.raw_targets.len() > 1
    }

    /// Canonical form of every field; what `parse` would return for `format`.
    pub fn canonical(&self) -> ParsedName {
        ParsedName {
            intent: self.intent,
            raw_targets: self.raw_targets.iter().map(|t| canonicalize(t)).collect(),
            raw_modality: canonicalize(&self.raw_modality),
        }
    }

    /// Emits `Intent_T1-T2_Modality`.
    pub fn format(&self) -> String {
        let mut out = String::from(self.intent.abbreviation());
        out.push('_');
        out.push_str(&self.raw_targets.join("-"));
        out.push('_');
        out.push_str(&self.raw_modality);
        out
    }
}

impl fmt::Display for ParsedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format())
    }
}

/// Parses a weight file stem (extension already removed).
pub fn parse_weight_name(stem: &str) -> Result<ParsedName, NameError> {
    let segments: Vec<&str> = stem.split('_').collect();
    let [intent, targets, modality] = segments.as_slice() else {
        return Err(NameError::MalformedName(stem.to_string()));
    };

    let empty = |segment| NameError::EmptySegment {
        name: stem.to_string(),
        segment,
    };
    if canonicalize(intent).is_empty() {
        return Err(empty("intent"));
    }
    let intent = Intent::from_token(intent)
        .ok_or_else(|| NameError::UnknownIntent(intent.trim().to_string()))?;

    let raw_targets: Vec<String> = match intent {
        Intent::Segmentation => alloc::vec![canonicalize(targets)],
        Intent::Classification => targets.split('-').map(canonicalize).collect(),
    };
    if raw_targets.iter().any(String::is_empty) {
        return Err(empty("target"));
    }

    let raw_modality = canonicalize(modality);
    if raw_modality.is_empty() {
        return Err(empty("modality"));
    }

    Ok(ParsedName {
        intent,
        raw_targets,
        raw_modality,
    })
}
