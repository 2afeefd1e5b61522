//! Weight records and the reference vocabularies compiled from them.
//!
//! Building a [`Registry`] is pure: callers hand over `(stem, path,
//! sidecar)` entries, typically from a directory walk, and get back the
//! records plus one warning per entry that could not be parsed.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::labels::{derive_class_labels, LabelMap};
use crate::naming::{parse_weight_name, Intent, ParsedName};
use crate::normalize::SynonymLexicon;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub weight_id: String,
    pub parsed: ParsedName,
    pub norm_targets: Vec<String>,
    /// Hyphen-joined normalized targets; what routing compares against.
    pub joined_target: String,
    pub norm_modality: String,
    pub path: String,
    pub class_labels: Vec<String>,
    pub class_count: usize,
}

impl WeightRecord {
    /// Builds a record from a file stem, normalizing targets and modality
    /// through the lexicon.
    pub fn from_stem(
        stem: &str,
        path: &str,
        sidecar: Option<&LabelMap>,
        lexicon: &SynonymLexicon,
    ) -> Result<Self, RegistryWarning> {
        let warn = |reason: String| RegistryWarning {
            path: path.to_string(),
            reason,
        };
        let parsed = parse_weight_name(stem).map_err(|e| warn(e.to_string()))?;
        let norm_targets: Vec<String> = parsed.raw_targets.iter().map(|t| lexicon.resolve(t)).collect();
        let norm_modality = lexicon.resolve(&parsed.raw_modality);
        let normalized = ParsedName {
            intent: parsed.intent,
            raw_targets: norm_targets.clone(),
            raw_modality: norm_modality.clone(),
        };
        let class_labels = derive_class_labels(&normalized, sidecar).map_err(|e| warn(e.to_string()))?;
        Ok(WeightRecord {
            weight_id: stem.trim().to_string(),
            joined_target: norm_targets.join("-"),
            norm_targets,
            norm_modality,
            path: path.to_string(),
            class_count: class_labels.len(),
            class_labels,
            parsed,
        })
    }

    pub fn intent(&self) -> Intent {
        self.parsed.intent
    }

    pub fn is_binary(&self) -> bool {
        self.class_count == 2
    }

    pub fn listing(&self) -> WeightListing {
        WeightListing {
            weight_id: self.weight_id.clone(),
            intent: self.intent(),
            targets: self.norm_targets.clone(),
            modality: self.norm_modality.clone(),
            class_labels: self.class_labels.clone(),
            path: self.path.clone(),
        }
    }
}

/// Export projection of a [`WeightRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightListing {
    pub weight_id: String,
    pub intent: Intent,
    pub targets: Vec<String>,
    pub modality: String,
    pub class_labels: Vec<String>,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryWarning {
    pub path: String,
    pub reason: String,
}

impl core::fmt::Display for RegistryWarning {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("duplicate weight id {id:?} ({first} and {second})")]
    DuplicateWeightId {
        id: String,
        first: String,
        second: String,
    },
}

/// One entry handed to [`Registry::build`].
#[derive(Debug, Clone)]
pub struct WeightEntry {
    pub stem: String,
    pub path: String,
    pub sidecar: Option<Result<LabelMap, String>>,
}

/// Immutable set of weight records, sorted by `weight_id`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    records: Vec<WeightRecord>,
    #[serde(default)]
    warnings: Vec<RegistryWarning>,
}

impl Registry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn build(
        entries: impl IntoIterator<Item = WeightEntry>,
        lexicon: &SynonymLexicon,
    ) -> Result<Self, RegistryError> {
        let mut records: Vec<WeightRecord> = Vec::new();
        let mut warnings = Vec::new();
        for entry in entries {
            let sidecar = match entry.sidecar {
                Some(Ok(map)) => Some(map),
                Some(Err(reason)) => {
                    warnings.push(RegistryWarning {
                        path: entry.path,
                        reason,
                    });
                    continue;
                }
                None => None,
            };
            match WeightRecord::from_stem(&entry.stem, &entry.path, sidecar.as_ref(), lexicon) {
                Ok(record) => records.push(record),
                Err(w) => warnings.push(w),
            }
        }
        records.sort_by(|a, b| a.weight_id.cmp(&b.weight_id).then_with(|| a.path.cmp(&b.path)));
        for pair in records.windows(2) {
            if pair[0].weight_id == pair[1].weight_id {
                return Err(RegistryError::DuplicateWeightId {
                    id: pair[0].weight_id.clone(),
                    first: pair[0].path.clone(),
                    second: pair[1].path.clone(),
                });
            }
        }
        warnings.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(Registry { records, warnings })
    }

    pub fn from_records(mut records: Vec<WeightRecord>) -> Result<Self, RegistryError> {
        records.sort_by(|a, b| a.weight_id.cmp(&b.weight_id));
        for pair in records.windows(2) {
            if pair[0].weight_id == pair[1].weight_id {
                return Err(RegistryError::DuplicateWeightId {
                    id: pair[0].weight_id.clone(),
                    first: pair[0].path.clone(),
                    second: pair[1].path.clone(),
                });
            }
        }
        Ok(Registry {
            records,
            warnings: Vec::new(),
        })
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    pub fn warnings(&self) -> &[RegistryWarning] {
        &self.warnings
    }

    pub fn get(&self, weight_id: &str) -> Option<&WeightRecord> {
        self.records
            .binary_search_by(|r| r.weight_id.as_str().cmp(weight_id))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn listing(&self) -> Vec<WeightListing> {
        self.records.iter().map(WeightRecord::listing).collect()
    }

    pub fn vocab(&self) -> ReferenceVocab {
        reference_vocab(self)
    }
}

/// Targets and modalities available in a registry, in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceVocab {
    pub targets: BTreeSet<String>,
    pub modalities: BTreeSet<String>,
}

pub fn reference_vocab(registry: &Registry) -> ReferenceVocab {
    let mut vocab = ReferenceVocab::default();
    for r in registry.records() {
        vocab.targets.extend(r.norm_targets.iter().cloned());
        vocab.modalities.insert(r.norm_modality.clone());
    }
    vocab
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::vec;

    pub(crate) const TABLE_ONE: [&str; 5] = [
        "Seg_Lung_Chest X-ray",
        "Segmentation_Lung_CXR",
        "Cls_TB_Chest X-ray",
        "Classification_Tuberculosis_CXR",
        "Cls_Covid-Pneumonia_CXR",
    ];

    fn entry(stem: &str) -> WeightEntry {
        WeightEntry {
            stem: stem.to_string(),
            path: alloc::format!("weights/{stem}.pt"),
            sidecar: None,
        }
    }

    #[test]
    fn table_one_registry() {
        let reg = Registry::build(TABLE_ONE.iter().map(|s| entry(s)), &SynonymLexicon::bundled()).unwrap();
        assert_eq!(reg.len(), 5);
        let vocab = reg.vocab();
        for t in ["lung", "tb", "covid", "pneumonia"] {
            assert!(vocab.targets.contains(t), "{t}");
        }
        let modalities: Vec<&str> = vocab.modalities.iter().map(String::as_str).collect();
        assert_eq!(modalities, vec!["chest x-ray", "cxr"]);

        let tb = reg.get("Classification_Tuberculosis_CXR").unwrap();
        assert_eq!(tb.norm_targets, vec!["tb"]);
        assert_eq!(tb.class_labels, vec!["negative", "tb"]);
        let multi = reg.get("Cls_Covid-Pneumonia_CXR").unwrap();
        assert_eq!(multi.joined_target, "covid-pneumonia");
        assert_eq!(multi.class_count, 2);
        let seg = reg.get("Seg_Lung_Chest X-ray").unwrap();
        assert_eq!(seg.class_labels, vec!["background", "lung"]);
    }

    #[test]
    fn malformed_names_become_warnings() {
        let reg = Registry::build(
            ["Seg_Lung_CXR", "LungMask", "Cls_TB_CXR"].iter().map(|s| entry(s)),
            &SynonymLexicon::new(),
        )
        .unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.warnings().len(), 1);
        assert!(reg.warnings()[0].path.contains("LungMask"));
    }

    #[test]
    fn duplicate_ids_are_an_error() {
        let mut a = entry("Seg_Lung_CXR");
        let mut b = entry("Seg_Lung_CXR");
        a.path = "a/Seg_Lung_CXR.pt".into();
        b.path = "b/Seg_Lung_CXR.onnx".into();
        let err = Registry::build([a, b], &SynonymLexicon::new()).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateWeightId { .. }));
    }

    #[test]
    fn empty_registry_has_empty_vocab() {
        let reg = Registry::build(Vec::new(), &SynonymLexicon::new()).unwrap();
        assert!(reg.is_empty());
        assert_eq!(reg.vocab(), ReferenceVocab::default());
    }

    #[test]
    fn shared_target_appears_once() {
        let reg = Registry::build(
            ["Seg_Lung_CXR", "Seg_Lung_CT"].iter().map(|s| entry(s)),
            &SynonymLexicon::new(),
        )
        .unwrap();
        assert_eq!(reg.vocab().targets.len(), 1);
    }

    #[test]
    fn bad_sidecar_is_a_warning() {
        let mut e = entry("Cls_Covid-Pneumonia_CXR");
        let mut gap = LabelMap::new();
        gap.insert("1".into(), "covid".into());
        e.sidecar = Some(Ok(gap));
        let mut unreadable = entry("Cls_TB_CXR");
        unreadable.sidecar = Some(Err("invalid JSON".into()));
        let reg = Registry::build([e, unreadable], &SynonymLexicon::new()).unwrap();
        assert!(reg.is_empty());
        assert_eq!(reg.warnings().len(), 2);
    }

    #[test]
    fn build_is_order_independent() {
        let lex = SynonymLexicon::bundled();
        let fwd = Registry::build(TABLE_ONE.iter().map(|s| entry(s)), &lex).unwrap();
        let rev = Registry::build(TABLE_ONE.iter().rev().map(|s| entry(s)), &lex).unwrap();
        assert_eq!(fwd, rev);
    }
}
