//! Text embeddings behind a provider interface, with a deterministic hashed
//! n-gram default.

use std::hash::Hasher;

use fnv::FnvHasher;
use thiserror::Error;

use crate::text;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding endpoint returned {got} vectors for {expected} texts")]
    Count { expected: usize, got: usize },
    #[error("embedding endpoint returned an invalid vector: {0}")]
    Invalid(String),
}

/// A unit-norm vector, or the zero vector for text with nothing to embed.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    embeddable: bool,
}

impl Embedding {
    /// L2-normalizes `values`; an all-zero input yields the non-embeddable
    /// zero vector.
    pub fn from_raw(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            values.iter_mut().for_each(|v| *v /= norm);
            Self { values, embeddable: true }
        } else {
            values.iter_mut().for_each(|v| *v = 0.0);
            Self { values, embeddable: false }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_embeddable(&self) -> bool {
        self.embeddable
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Cosine similarity; 0 whenever either side is non-embeddable or the
    /// dimensions differ.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        if !self.embeddable || !other.embeddable || self.values.len() != other.values.len() {
            return 0.0;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        dot.clamp(-1.0, 1.0)
    }
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError>;

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>, ProviderError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }

    /// Cosine similarity between two texts, clamped to [0, 1].
    fn similarity(&self, a: &str, b: &str) -> Result<f64, ProviderError> {
        Ok(self.embed(a)?.cosine(&self.embed(b)?).max(0.0))
    }
}

pub const DEFAULT_LEXICAL_DIM: usize = 256;

/// Hashed character-trigram plus word-unigram term frequencies.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    dim: usize,
}

impl LexicalEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 64, "lexical embedding dimension must be at least 64, got {dim}");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn bucket(&self, namespace: &[u8], feature: &str) -> usize {
        let mut h = FnvHasher::default();
        h.write(namespace);
        h.write(feature.as_bytes());
        (h.finish() % self.dim as u64) as usize
    }
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_LEXICAL_DIM)
    }
}

/// Embeds `text` with the lexical scheme at dimension `dim`.
pub fn lexical_embed(text: &str, dim: usize) -> Embedding {
    let embedder = LexicalEmbedder::new(dim);
    embedder.embed_local(text)
}

impl LexicalEmbedder {
    fn embed_local(&self, raw: &str) -> Embedding {
        let mut tf = vec![0.0; self.dim];
        let tokens = text::tokenize(raw);
        if tokens.is_empty() {
            return Embedding::from_raw(tf);
        }
        for tok in &tokens {
            tf[self.bucket(b"w:", tok)] += 1.0;
        }
        let padded: Vec<char> = format!(" {} ", tokens.join(" ")).chars().collect();
        for window in padded.windows(3) {
            let tri: String = window.iter().collect();
            tf[self.bucket(b"c3:", &tri)] += 1.0;
        }
        Embedding::from_raw(tf)
    }
}

impl EmbeddingProvider for LexicalEmbedder {
    fn embed(&self, text: &str) -> Result<Embedding, ProviderError> {
        Ok(self.embed_local(text))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cos(a: &str, b: &str) -> f64 {
        lexical_embed(a, 256).cosine(&lexical_embed(b, 256))
    }

    #[test]
    fn identical_text_has_unit_cosine() {
        assert!((cos("fever", "fever") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_text_is_not_embeddable() {
        let e = lexical_embed("", 256);
        assert!(!e.is_embeddable());
        assert_eq!(cos("", "anything"), 0.0);
        assert_eq!(cos("   ?! ", "fever"), 0.0);
    }

    #[test]
    fn related_phrases_score_higher_than_unrelated() {
        let related = cos("chest pain", "pain in the chest");
        let unrelated = cos("chest pain", "blue bicycle");
        assert!(related > unrelated, "{related} vs {unrelated}");
    }

    #[test]
    fn unrelated_reply_stays_below_semantic_threshold() {
        assert!(cos("I feel fine", "shortness of breath") < 0.85);
    }

    #[test]
    #[should_panic]
    fn rejects_tiny_dimension() {
        LexicalEmbedder::new(16);
    }

    proptest! {
        #[test]
        fn unit_norm_and_deterministic(text in "[a-zA-Z ]{1,60}", dim in 64usize..512) {
            let a = lexical_embed(&text, dim);
            let b = lexical_embed(&text, dim);
            prop_assert_eq!(&a, &b);
            if a.is_embeddable() {
                let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-6);
            }
        }
    }
}
