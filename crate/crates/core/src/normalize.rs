//! Two-stage term normalization: synonym lexicon first, semantic matching
//! second.
//!
//! Stages run in order and the first one that resolves wins:
//!
//! 1. `exact`: the canonicalized term is already a vocabulary token;
//! 2. `lexicon`: a lexicon entry maps it to a vocabulary token;
//! 3. `embedding`: the nearest vocabulary token by cosine similarity, if
//!    the similarity reaches `tau` (ties go to the lexicographically
//!    smaller token);
//! 4. `llm`: an optional provider picks a vocabulary token or abstains.
//!
//! Targets and modalities share one lexicon namespace.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::embed::{Similarity, TrigramSimilarity};
use crate::text::canonicalize;

pub const DEFAULT_TAU_NORM: f64 = 0.55;

const BUNDLED_LEXICON: &str = include_str!("../assets/lexicon.json");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LexiconError {
    #[error("lexicon is not a JSON object of strings: {0}")]
    Format(String),
    #[error("lexicon entry {raw:?} -> {canonical:?} is empty after canonicalization")]
    EmptyEntry { raw: String, canonical: String },
}

/// Raw term → canonical vocabulary term. Keys and values are canonical and
/// no key maps to itself.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, String>", into = "BTreeMap<String, String>")]
pub struct SynonymLexicon {
    entries: BTreeMap<String, String>,
}

impl SynonymLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, LexiconError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(json).map_err(|e| LexiconError::Format(e.to_string()))?;
        Self::try_from(raw)
    }

    /// Adds an entry, canonicalizing both sides. Identity entries are
    /// dropped.
    pub fn insert(&mut self, raw: &str, canonical: &str) -> Result<(), LexiconError> {
        let (k, v) = (canonicalize(raw), canonicalize(canonical));
        if k.is_empty() || v.is_empty() {
            return Err(LexiconError::EmptyEntry {
                raw: raw.to_string(),
                canonical: canonical.to_string(),
            });
        }
        if k != v {
            self.entries.insert(k, v);
        }
        Ok(())
    }

    /// Looks up an already-canonical term.
    pub fn get(&self, term: &str) -> Option<&str> {
        self.entries.get(term).map(String::as_str)
    }

    /// Canonical form of `raw`, mapped through the lexicon when an entry
    /// exists.
    pub fn resolve(&self, raw: &str) -> String {
        let c = canonicalize(raw);
        match self.entries.get(&c) {
            Some(v) => v.clone(),
            None => c,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of `other` override ours.
    pub fn merge(&mut self, other: &SynonymLexicon) {
        for (k, v) in other.iter() {
            self.entries.insert(k.to_string(), v.to_string());
        }
    }
}

impl TryFrom<BTreeMap<String, String>> for SynonymLexicon {
    type Error = LexiconError;

    fn try_from(raw: BTreeMap<String, String>) -> Result<Self, Self::Error> {
        let mut lexicon = SynonymLexicon::new();
        for (k, v) in &raw {
            lexicon.insert(k, v)?;
        }
        Ok(lexicon)
    }
}

impl From<SynonymLexicon> for BTreeMap<String, String> {
    fn from(lexicon: SynonymLexicon) -> Self {
        lexicon.entries
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Exact,
    Lexicon,
    Embedding,
    Llm,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationResult {
    /// The canonicalized input.
    pub input: String,
    pub canonical: Option<String>,
    pub stage: Stage,
    pub similarity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl NormalizationResult {
    pub fn is_resolved(&self) -> bool {
        self.canonical.is_some()
    }

    /// The resolved token, or the canonicalized input when unresolved.
    pub fn token(&self) -> &str {
        self.canonical.as_deref().unwrap_or(&self.input)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("normalization provider failed: {0}")]
pub struct ProviderFailure(pub String);

/// Last-resort arbiter (typically an LLM): pick one candidate or abstain.
pub trait NormalizationProvider {
    fn choose(&self, term: &str, candidates: &[String]) -> Result<Option<String>, ProviderFailure>;
}

#[derive(Debug, Clone)]
pub struct Normalizer<S = TrigramSimilarity> {
    pub lexicon: SynonymLexicon,
    pub tau: f64,
    pub similarity: S,
}

impl Normalizer<TrigramSimilarity> {
    pub fn new(lexicon: SynonymLexicon) -> Self {
        Self {
            lexicon,
            tau: DEFAULT_TAU_NORM,
            similarity: TrigramSimilarity,
        }
    }
}

impl<S: Similarity> Normalizer<S> {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn normalize(
        &self,
        raw: &str,
        vocab: &BTreeSet<String>,
        provider: Option<&dyn NormalizationProvider>,
    ) -> NormalizationResult {
        let input = canonicalize(raw);
        let resolved = |canonical: &str, stage, similarity| NormalizationResult {
            input: input.clone(),
            canonical: Some(canonical.to_string()),
            stage,
            similarity,
            warning: None,
        };

        if input.is_empty() {
            return NormalizationResult {
                input,
                canonical: None,
                stage: Stage::Unresolved,
                similarity: 0.0,
                warning: None,
            };
        }
        if vocab.contains(&input) {
            return resolved(&input, Stage::Exact, 1.0);
        }
        if let Some(mapped) = self.lexicon.get(&input) {
            if vocab.contains(mapped) {
                return resolved(mapped, Stage::Lexicon, 1.0);
            }
        }

        // vocab iterates in sorted order, so keeping the first maximum
        // breaks ties lexicographically
        let mut best: Option<(&str, f64)> = None;
        for token in vocab {
            let sim = self.similarity.similarity(&input, token);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((token, sim));
            }
        }
        let best_sim = best.map_or(0.0, |(_, s)| s);
        if let Some((token, sim)) = best {
            if sim >= self.tau {
                return resolved(token, Stage::Embedding, sim);
            }
        }

        let mut warning = None;
        if let Some(provider) = provider {
            let candidates: Vec<String> = vocab.iter().cloned().collect();
            match provider.choose(&input, &candidates) {
                Ok(Some(choice)) => {
                    let choice = canonicalize(&choice);
                    if vocab.contains(&choice) {
                        let sim = self.similarity.similarity(&input, &choice);
                        return resolved(&choice, Stage::Llm, sim);
                    }
                    warning = Some(alloc::format!(
                        "provider chose {choice:?}, which is not in the vocabulary"
                    ));
                }
                Ok(None) => {}
                Err(e) => warning = Some(e.to_string()),
            }
        }

        NormalizationResult {
            input,
            canonical: None,
            stage: Stage::Unresolved,
            similarity: best_sim,
            warning,
        }
    }
}

/// Free-function form of [`Normalizer::normalize`] with the trigram
/// similarity.
pub fn normalize_term(
    raw: &str,
    vocab: &BTreeSet<String>,
    lexicon: &SynonymLexicon,
    tau: f64,
    provider: Option<&dyn NormalizationProvider>,
) -> NormalizationResult {
    let normalizer = Normalizer {
        lexicon: lexicon.clone(),
        tau,
        similarity: TrigramSimilarity,
    };
    normalizer.normalize(raw, vocab, provider)
}
