//! Character-trigram term vectors and cosine similarity.
//!
//! A token is padded with `^` and `$`, split into overlapping character
//! trigrams, and counted. The vector keeps the integer counts and exposes
//! L2-normalized weights; similarity is computed from the counts as
//! `dot / sqrt(|u|² · |v|²)` so identical tokens score exactly 1.0.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

pub type Trigram = [char; 3];

const START: char = '^';
const END: char = '$';

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrigramVector {
    counts: BTreeMap<Trigram, u32>,
    squared_norm: u64,
}

impl TrigramVector {
    pub fn counts(&self) -> &BTreeMap<Trigram, u32> {
        &self.counts
    }

    /// L2-normalized weight of each trigram.
    pub fn weights(&self) -> impl Iterator<Item = (&Trigram, f64)> + '_ {
        let norm = libm::sqrt(self.squared_norm as f64);
        self.counts.iter().map(move |(t, &c)| (t, c as f64 / norm))
    }

    /// Euclidean norm of the normalized weights (1 up to rounding).
    pub fn norm(&self) -> f64 {
        libm::sqrt(self.weights().map(|(_, w)| w * w).sum())
    }
}

/// Embeds a canonicalized token.
pub fn embed(token: &str) -> Result<TrigramVector, EmbedError> {
    if token.is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let padded: Vec<char> = core::iter::once(START)
        .chain(token.chars())
        .chain(core::iter::once(END))
        .collect();
    let mut counts = BTreeMap::new();
    for w in padded.windows(3) {
        *counts.entry([w[0], w[1], w[2]]).or_insert(0u32) += 1;
    }
    let squared_norm = counts.values().map(|&c| u64::from(c) * u64::from(c)).sum();
    Ok(TrigramVector {
        counts,
        squared_norm,
    })
}

/// Cosine similarity in `[0, 1]`; symmetric.
pub fn cosine(u: &TrigramVector, v: &TrigramVector) -> f64 {
    let (small, large) = if u.counts.len() <= v.counts.len() {
        (u, v)
    } else {
        (v, u)
    };
    let dot: u64 = small
        .counts
        .iter()
        .filter_map(|(t, &a)| large.counts.get(t).map(|&b| u64::from(a) * u64::from(b)))
        .sum();
    if dot == 0 {
        return 0.0;
    }
    let denom = libm::sqrt(u.squared_norm as f64 * v.squared_norm as f64);
    (dot as f64 / denom).min(1.0)
}

/// Similarity between two canonical tokens, as used by routing and the
/// embedding normalization stage.
pub trait Similarity {
    fn similarity(&self, a: &str, b: &str) -> f64;
}

/// The built-in deterministic trigram similarity.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrigramSimilarity;

impl Similarity for TrigramSimilarity {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        match (embed(a), embed(b)) {
            (Ok(u), Ok(v)) => cosine(&u, &v),
            _ => 0.0,
        }
    }
}

impl<S: Similarity + ?Sized> Similarity for &S {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        (**self).similarity(a, b)
    }
}

/// External sentence-embedding model: text in, unit vector out.
pub trait EmbeddingProvider {
    type Error;

    fn embed(&self, text: &str) -> Result<Vec<f64>, Self::Error>;
}

/// Similarity backed by an [`EmbeddingProvider`]. Identical tokens score
/// 1.0; negative cosines clamp to 0; provider errors fall back to trigrams.
pub struct ProviderSimilarity<P> {
    provider: P,
}

impl<P: EmbeddingProvider> ProviderSimilarity<P> {
    pub fn new(provider: P) -> Self {
        Self { provider }
    }
}

impl<P: EmbeddingProvider> Similarity for ProviderSimilarity<P> {
    fn similarity(&self, a: &str, b: &str) -> f64 {
        if a == b && !a.is_empty() {
            return 1.0;
        }
        match (self.provider.embed(a), self.provider.embed(b)) {
            (Ok(u), Ok(v)) if u.len() == v.len() => dense_cosine(&u, &v),
            _ => TrigramSimilarity.similarity(a, b),
        }
    }
}

fn dense_cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu: f64 = u.iter().map(|a| a * a).sum();
    let nv: f64 = v.iter().map(|a| a * a).sum();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / libm::sqrt(nu * nv)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &str, b: &str) -> f64 {
        cosine(&embed(a).unwrap(), &embed(b).unwrap())
    }

    #[test]
    fn identical_tokens_are_exactly_one() {
        for t in ["lung", "tb", "chest x-ray", "a", "covid-pneumonia", "aaaa"] {
            assert_eq!(cos(t, t), 1.0, "{t}");
        }
    }

    #[test]
    fn abc_abd_is_one_third() {
        assert_eq!(cos("abc", "abd"), 1.0 / 3.0);
    }

    #[test]
    fn disjoint_trigrams_are_zero() {
        assert_eq!(cos("tb", "glaucoma"), 0.0);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert_eq!(embed(""), Err(EmbedError::EmptyText));
    }

    #[test]
    fn repeated_trigrams_are_counted() {
        let v = embed("aaaa").unwrap();
        assert_eq!(v.counts().get(&['a', 'a', 'a']), Some(&2));
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn provider_similarity_clamps_and_falls_back() {
        struct Axis;
        impl EmbeddingProvider for Axis {
            type Error = ();
            fn embed(&self, text: &str) -> Result<Vec<f64>, ()> {
                match text {
                    "up" => Ok(alloc::vec![0.0, 1.0]),
                    "down" => Ok(alloc::vec![0.0, -1.0]),
                    "right" => Ok(alloc::vec![1.0, 0.0]),
                    _ => Err(()),
                }
            }
        }
        let sim = ProviderSimilarity::new(Axis);
        assert_eq!(sim.similarity("up", "down"), 0.0);
        assert_eq!(sim.similarity("up", "right"), 0.0);
        assert_eq!(sim.similarity("up", "up"), 1.0);
        assert_eq!(sim.similarity("abc", "abd"), 1.0 / 3.0);
    }
}
