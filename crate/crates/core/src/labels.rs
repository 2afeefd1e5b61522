//! Class-label inference from a parsed name or a `{"0": "label", ...}` sidecar.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::naming::{Intent, ParsedName};
use crate::text::canonicalize;

/// Reserved first label of every binary classifier.
pub const NEGATIVE_LABEL: &str = "negative";
/// First label of every segmentation weight.
pub const BACKGROUND_LABEL: &str = "background";

/// Sidecar contents exactly as read: index strings to label text.
pub type LabelMap = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LabelError {
    #[error("sidecar indices must be contiguous from 0: {0}")]
    SidecarGap(String),
    #[error("sidecar has {found} labels but the filename implies {expected}")]
    SidecarMismatch { expected: String, found: usize },
}

/// Orders sidecar entries by numeric index and canonicalizes the labels.
pub fn sidecar_labels(sidecar: &LabelMap) -> Result<Vec<String>, LabelError> {
    let mut indexed = Vec::with_capacity(sidecar.len());
    for (key, label) in sidecar {
        let index: usize = key
            .trim()
            .parse()
            .map_err(|_| LabelError::SidecarGap(alloc::format!("non-numeric key {key:?}")))?;
        indexed.push((index, canonicalize(label)));
    }
    indexed.sort_by_key(|(i, _)| *i);
    for (expected, (index, _)) in indexed.iter().enumerate() {
        if *index != expected {
            return Err(LabelError::SidecarGap(alloc::format!(
                "expected index {expected}, found {index}"
            )));
        }
    }
    Ok(indexed.into_iter().map(|(_, label)| label).collect())
}

/// Ordered class labels for a weight. `parsed` should carry normalized
/// targets so labels line up with the routing vocabulary.
pub fn derive_class_labels(
    parsed: &ParsedName,
    sidecar: Option<&LabelMap>,
) -> Result<Vec<String>, LabelError> {
    let targets = &parsed.raw_targets;
    if let Some(map) = sidecar {
        let labels = sidecar_labels(map)?;
        let ok = match parsed.intent {
            Intent::Segmentation => labels.len() == 2,
            Intent::Classification if targets.len() == 1 => labels.len() == 2,
            // a multiclass sidecar may add one explicit normal/negative class
            Intent::Classification => {
                labels.len() == targets.len() || labels.len() == targets.len() + 1
            }
        };
        if !ok {
            let expected = match parsed.intent {
                Intent::Classification if targets.len() > 1 => {
                    alloc::format!("{} or {}", targets.len(), targets.len() + 1)
                }
                _ => "2".to_string(),
            };
            return Err(LabelError::SidecarMismatch {
                expected,
                found: labels.len(),
            });
        }
        return Ok(labels);
    }

    let labels = match parsed.intent {
        Intent::Segmentation => alloc::vec![BACKGROUND_LABEL.to_string(), targets[0].clone()],
        Intent::Classification if targets.len() == 1 => {
            alloc::vec![NEGATIVE_LABEL.to_string(), targets[0].clone()]
        }
        Intent::Classification => targets.clone(),
    };
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn parsed(intent: Intent, targets: &[&str]) -> ParsedName {
        ParsedName {
            intent,
            raw_targets: targets.iter().map(|t| t.to_string()).collect(),
            raw_modality: "cxr".to_string(),
        }
    }

    fn map(entries: &[(&str, &str)]) -> LabelMap {
        entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn segmentation_defaults_to_background_and_target() {
        let labels = derive_class_labels(&parsed(Intent::Segmentation, &["lung"]), None).unwrap();
        assert_eq!(labels, vec!["background", "lung"]);
    }

    #[test]
    fn binary_classification_defaults_to_negative_first() {
        let labels = derive_class_labels(&parsed(Intent::Classification, &["tb"]), None).unwrap();
        assert_eq!(labels, vec!["negative", "tb"]);
    }

    #[test]
    fn multiclass_without_sidecar_invents_no_class() {
        let p = parsed(Intent::Classification, &["covid", "pneumonia"]);
        assert_eq!(derive_class_labels(&p, None).unwrap(), vec!["covid", "pneumonia"]);
    }

    #[test]
    fn sidecar_passes_through() {
        let p = parsed(Intent::Classification, &["covid", "pneumonia"]);
        let sidecar = map(&[("0", "covid"), ("1", "pneumonia"), ("2", "normal")]);
        assert_eq!(
            derive_class_labels(&p, Some(&sidecar)).unwrap(),
            vec!["covid", "pneumonia", "normal"]
        );
    }

    #[test]
    fn sidecar_orders_numerically_not_lexically() {
        let entries: Vec<(String, String)> = (0..11)
            .map(|i| (alloc::format!("{i}"), alloc::format!("c{i}")))
            .collect();
        let sidecar: LabelMap = entries.into_iter().collect();
        let labels = sidecar_labels(&sidecar).unwrap();
        assert_eq!(labels[2], "c2");
        assert_eq!(labels[10], "c10");
    }

    #[test]
    fn sidecar_gap_is_rejected() {
        let p = parsed(Intent::Classification, &["covid", "pneumonia"]);
        let sidecar = map(&[("0", "covid"), ("2", "pneumonia")]);
        assert!(matches!(
            derive_class_labels(&p, Some(&sidecar)),
            Err(LabelError::SidecarGap(_))
        ));
        let bad_key = map(&[("zero", "covid")]);
        assert!(matches!(sidecar_labels(&bad_key), Err(LabelError::SidecarGap(_))));
    }

    #[test]
    fn sidecar_count_mismatch_is_rejected() {
        let p = parsed(Intent::Classification, &["covid", "pneumonia"]);
        let sidecar = map(&[("0", "covid")]);
        assert!(matches!(
            derive_class_labels(&p, Some(&sidecar)),
            Err(LabelError::SidecarMismatch { found: 1, .. })
        ));
        let seg = parsed(Intent::Segmentation, &["lung"]);
        let three = map(&[("0", "a"), ("1", "b"), ("2", "c")]);
        assert!(derive_class_labels(&seg, Some(&three)).is_err());
    }
}
