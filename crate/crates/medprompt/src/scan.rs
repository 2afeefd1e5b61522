//! Building a registry from a directory of weight files.

use std::path::{Path, PathBuf};

use medprompt_core::labels::LabelMap;
use medprompt_core::normalize::SynonymLexicon;
use medprompt_core::registry::{Registry, RegistryError, WeightEntry};
use walkdir::WalkDir;

/// File extensions recognised as serialized model weights.
pub const WEIGHT_EXTENSIONS: [&str; 11] = [
    "pt",
    "pth",
    "h5",
    "keras",
    "onnx",
    "ckpt",
    "safetensors",
    "bin",
    "pb",
    "tflite",
    "weights",
];

pub const SIDECAR_SUFFIX: &str = ".labels.json";

#[derive(Debug, thiserror::Error)]
pub enum ScanError {
    #[error("registry root {0} does not exist or is not a directory")]
    RootMissing(PathBuf),
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("cannot load lexicon {path}: {message}")]
    Lexicon { path: PathBuf, message: String },
}

fn is_weight_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| WEIGHT_EXTENSIONS.iter().any(|w| w.eq_ignore_ascii_case(e)))
}

fn read_sidecar(path: &Path) -> Option<Result<LabelMap, String>> {
    if !path.is_file() {
        return None;
    }
    Some(
        std::fs::read_to_string(path)
            .map_err(|e| format!("{}: {e}", path.display()))
            .and_then(|text| {
                serde_json::from_str::<LabelMap>(&text).map_err(|e| format!("{}: {e}", path.display()))
            }),
    )
}

/// Weight files under `root`, in path order, paired with their sidecars.
pub fn collect_entries(root: &Path) -> Result<Vec<WeightEntry>, ScanError> {
    if !root.is_dir() {
        return Err(ScanError::RootMissing(root.to_path_buf()));
    }
    let mut entries = Vec::new();
    let walker = WalkDir::new(root).follow_links(true).sort_by_file_name();
    for item in walker {
        let item = item.map_err(|e| ScanError::Io {
            path: e.path().map_or_else(|| root.to_path_buf(), Path::to_path_buf),
            message: e.to_string(),
        })?;
        let path = item.path();
        let hidden = item.file_name().to_str().is_some_and(|n| n.starts_with('.'));
        if !item.file_type().is_file() || hidden || !is_weight_file(path) {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let sidecar = path.with_file_name(format!("{stem}{SIDECAR_SUFFIX}"));
        entries.push(WeightEntry {
            stem: stem.to_string(),
            path: path.display().to_string(),
            sidecar: read_sidecar(&sidecar),
        });
    }
    Ok(entries)
}

pub fn scan_registry(root: &Path, lexicon: &SynonymLexicon) -> Result<Registry, ScanError> {
    Ok(Registry::build(collect_entries(root)?, lexicon)?)
}

/// The bundled lexicon, extended (and overridden) by the file at `path`.
pub fn load_lexicon(path: Option<&Path>) -> Result<SynonymLexicon, ScanError> {
    let mut lexicon = SynonymLexicon::bundled();
    if let Some(path) = path {
        let err = |message: String| ScanError::Lexicon {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let extra = SynonymLexicon::from_json(&text).map_err(|e| err(e.to_string()))?;
        lexicon.merge(&extra);
    }
    Ok(lexicon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn touch(dir: &Path, name: &str) {
        let path = dir.join(name);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, b"").unwrap();
    }

    #[test]
    fn scans_nested_weights_and_ignores_others() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "Seg_Lung_CXR.pt");
        touch(dir.path(), "nested/Cls_TB_CXR.ONNX");
        touch(dir.path(), "README.md");
        touch(dir.path(), ".Cls_Hidden_CXR.pt");
        touch(dir.path(), "LungMask.h5");
        let reg = scan_registry(dir.path(), &SynonymLexicon::bundled()).unwrap();
        let ids: Vec<&str> = reg.records().iter().map(|r| r.weight_id.as_str()).collect();
        assert_eq!(ids, ["Cls_TB_CXR", "Seg_Lung_CXR"]);
        assert_eq!(reg.warnings().len(), 1);
        assert!(reg.warnings()[0].path.ends_with("LungMask.h5"));
    }

    #[test]
    fn sidecars_are_read() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "Cls_Covid-Pneumonia_CXR.pt");
        fs::write(
            dir.path().join("Cls_Covid-Pneumonia_CXR.labels.json"),
            r#"{"0": "negative", "1": "covid", "2": "pneumonia"}"#,
        )
        .unwrap();
        touch(dir.path(), "Cls_Malaria_Microscopy.pt");
        fs::write(dir.path().join("Cls_Malaria_Microscopy.labels.json"), "[oops").unwrap();
        let reg = scan_registry(dir.path(), &SynonymLexicon::bundled()).unwrap();
        let multi = reg.get("Cls_Covid-Pneumonia_CXR").unwrap();
        assert_eq!(multi.class_labels, ["negative", "covid", "pneumonia"]);
        assert_eq!(multi.class_count, 3);
        assert!(reg.get("Cls_Malaria_Microscopy").is_none());
        assert_eq!(reg.warnings().len(), 1);
    }

    #[test]
    fn duplicate_stems_across_formats_fail() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "Seg_Lung_CXR.pt");
        touch(dir.path(), "Seg_Lung_CXR.onnx");
        assert!(matches!(
            scan_registry(dir.path(), &SynonymLexicon::new()),
            Err(ScanError::Registry(RegistryError::DuplicateWeightId { .. }))
        ));
    }

    #[test]
    fn missing_root() {
        assert!(matches!(
            scan_registry(Path::new("/definitely/not/here"), &SynonymLexicon::new()),
            Err(ScanError::RootMissing(_))
        ));
    }

    #[test]
    fn lexicon_file_extends_bundled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lex.json");
        fs::write(&path, r#"{"kidney stones": "nephrolithiasis"}"#).unwrap();
        let lex = load_lexicon(Some(&path)).unwrap();
        assert_eq!(lex.get("kidney stones"), Some("nephrolithiasis"));
        assert_eq!(lex.get("tuberculosis"), Some("tb"));
        assert!(load_lexicon(Some(&dir.path().join("missing.json"))).is_err());
    }
}
