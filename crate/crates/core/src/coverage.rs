//! Entity coverage detection and the covered/uncovered partition of a
//! conversation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::text;
use crate::vignette::ClinicalEntity;

pub const DEFAULT_SEMANTIC_THRESHOLD: f64 = 0.85;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("semantic threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("match references unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("entity {0:?} is already covered")]
    AlreadyCovered(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMethod {
    Exact,
    Multiword,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub entity_id: String,
    pub method: MatchMethod,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reveal {
    pub entity_id: String,
    pub turn: usize,
    pub method: MatchMethod,
}

/// Partition of a case's entities into covered (with provenance, in reveal
/// order) and uncovered (in case order). The uncovered set is always the
/// complement of the covered set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageState {
    entities: Vec<ClinicalEntity>,
    covered: Vec<Reveal>,
}

impl CoverageState {
    pub fn new(entities: Vec<ClinicalEntity>) -> Self {
        Self { entities, covered: Vec::new() }
    }

    pub fn all_entities(&self) -> &[ClinicalEntity] {
        &self.entities
    }

    pub fn covered(&self) -> &[Reveal] {
        &self.covered
    }

    pub fn is_covered(&self, id: &str) -> bool {
        self.covered.iter().any(|r| r.entity_id == id)
    }

    pub fn uncovered(&self) -> Vec<&ClinicalEntity> {
        self.entities.iter().filter(|e| !self.is_covered(&e.id)).collect()
    }

    pub fn uncovered_owned(&self) -> Vec<ClinicalEntity> {
        self.uncovered().into_iter().cloned().collect()
    }

    pub fn covered_count(&self) -> usize {
        self.covered.len()
    }

    pub fn uncovered_count(&self) -> usize {
        self.entities.len() - self.covered.len()
    }

    pub fn is_exhausted(&self) -> bool {
        self.uncovered_count() == 0
    }

    pub fn entity(&self, id: &str) -> Option<&ClinicalEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Moves every matched entity to the covered set. The whole batch is
    /// validated first, so a rejected update leaves the state untouched.
    pub fn apply(&mut self, matches: &[MatchResult], turn: usize) -> Result<(), CoverageError> {
        let mut batch = BTreeSet::new();
        for m in matches {
            if self.entity(&m.entity_id).is_none() {
                return Err(CoverageError::UnknownEntity(m.entity_id.clone()));
            }
            if self.is_covered(&m.entity_id) || !batch.insert(m.entity_id.as_str()) {
                return Err(CoverageError::AlreadyCovered(m.entity_id.clone()));
            }
        }
        self.covered.extend(matches.iter().map(|m| Reveal { entity_id: m.entity_id.clone(), turn, method: m.method }));
        Ok(())
    }
}

pub fn update_coverage(
    mut state: CoverageState,
    matches: &[MatchResult],
    turn: usize,
) -> Result<CoverageState, CoverageError> {
    state.apply(matches, turn)?;
    Ok(state)
}

fn exact_match(response_tokens: &[String], entity: &ClinicalEntity) -> bool {
    std::iter::once(&entity.surface)
        .chain(&entity.aliases)
        .any(|phrase| text::contains_phrase(response_tokens, &text::tokenize(phrase)))
}

fn multiword_match(response_set: &BTreeSet<String>, entity: &ClinicalEntity) -> bool {
    std::iter::once(&entity.surface).chain(&entity.aliases).any(|phrase| {
        let words = text::matchable_words(phrase);
        !words.is_empty() && words.iter().all(|w| response_set.contains(w))
    })
}

/// Tries exact phrase, then multi-word, then semantic matching for each
/// entity and records the first method that fires. Unmatched entities are
/// omitted; each entity appears at most once.
pub fn detect_revealed(
    response: &str,
    uncovered: &[&ClinicalEntity],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<Vec<MatchResult>, CoverageError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(CoverageError::Threshold(threshold));
    }
    let tokens = text::tokenize(response);
    if tokens.is_empty() {
        return Ok(Vec::new());
    }
    let token_set: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut response_embedding = None;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for entity in uncovered {
        if !seen.insert(entity.id.as_str()) {
            continue;
        }
        if exact_match(&tokens, entity) {
            out.push(MatchResult { entity_id: entity.id.clone(), method: MatchMethod::Exact, score: 1.0 });
            continue;
        }
        if multiword_match(&token_set, entity) {
            out.push(MatchResult { entity_id: entity.id.clone(), method: MatchMethod::Multiword, score: 1.0 });
            continue;
        }
        if response_embedding.is_none() {
            response_embedding = Some(provider.embed(response)?);
        }
        let resp = response_embedding.as_ref().expect("set above");
        let score = resp.cosine(&provider.embed(&entity.surface)?).max(0.0);
        if score > threshold {
            out.push(MatchResult { entity_id: entity.id.clone(), method: MatchMethod::Semantic, score });
        }
    }
    Ok(out)
}

/// Keyword signal: share of the entity's important words present in the text.
pub fn keyword_score(entity: &ClinicalEntity, text_tokens: &BTreeSet<String>) -> f64 {
    text::word_overlap(&entity.surface, text_tokens)
}

/// How directly a question asks about an entity: the larger of keyword
/// overlap and embedding cosine, in [0, 1].
pub fn elicitation_relevance(
    entity: &ClinicalEntity,
    question: &str,
    provider: &dyn EmbeddingProvider,
) -> Result<f64, ProviderError> {
    let key = keyword_score(entity, &text::token_set(question));
    let cos = provider.similarity(question, &entity.surface)?;
    Ok(key.max(cos).clamp(0.0, 1.0))
}
