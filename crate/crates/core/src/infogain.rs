//! Information-gain reward over uncovered entities.
//!
//! Each uncovered entity is a binary variable (revealed or not). Before a
//! question every entity carries one bit of uncertainty, so the prior entropy
//! of the uncovered set is `|U|`. A question induces a coverage probability
//! `p(e|a)` per entity; the expected conditional entropy is the sum of binary
//! entropies at those probabilities, and the gain is the difference. Category
//! weights scale each entity's share of the gain.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::keyword_score;
use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::quality::{AssessorError, QualityAssessor};
use crate::text;
use crate::vignette::ClinicalEntity;

#[derive(Debug, Error)]
pub enum GainError {
    #[error("probability {0} outside [0, 1]")]
    Domain(f64),
    #[error("mixture weights must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    Mixture(f64, f64, f64),
    #[error("clip range must satisfy 0 < p_min < p_max < 1, got [{0}, {1}]")]
    Clip(f64, f64),
    #[error("coverage probabilities do not match the uncovered set: {0}")]
    Mismatch(String),
    #[error("embedding failed for entity {entity_id}: {source}")]
    Provider {
        entity_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("assessor failed for entity {entity_id}: {source}")]
    Assessor {
        entity_id: String,
        #[source]
        source: AssessorError,
    },
}

/// Binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, GainError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GainError::Domain(p));
    }
    let term = |x: f64| if x > 0.0 { -x * x.log2() } else { 0.0 };
    Ok(term(p) + term(1.0 - p))
}

/// Convex weights of the semantic, assessor and keyword signals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl MixtureWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, GainError> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), GainError> {
        let Self { alpha, beta, gamma } = *self;
        let ok = [alpha, beta, gamma].iter().all(|w| w.is_finite() && *w >= 0.0)
            && (alpha + beta + gamma - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(GainError::Mixture(alpha, beta, gamma))
        }
    }
}

impl Default for MixtureWeights {
    fn default() -> Self {
        Self { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRange {
    pub p_min: f64,
    pub p_max: f64,
}

impl ClipRange {
    pub fn new(p_min: f64, p_max: f64) -> Result<Self, GainError> {
        let c = Self { p_min, p_max };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GainError> {
        if self.p_min > 0.0 && self.p_min < self.p_max && self.p_max < 1.0 {
            Ok(())
        } else {
            Err(GainError::Clip(self.p_min, self.p_max))
        }
    }

    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }
}

impl Default for ClipRange {
    fn default() -> Self {
        Self { p_min: 0.05, p_max: 0.95 }
    }
}

/// Raw signals behind one coverage probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signals {
    pub sem: f64,
    pub llm: f64,
    pub key: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityProbability {
    pub entity_id: String,
    pub p: f64,
    pub signals: Signals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageProbabilities {
    pub weights: MixtureWeights,
    pub entries: Vec<EntityProbability>,
}

impl CoverageProbabilities {
    pub fn get(&self, entity_id: &str) -> Option<&EntityProbability> {
        self.entries.iter().find(|e| e.entity_id == entity_id)
    }

    pub fn max_p(&self) -> f64 {
        self.entries.iter().map(|e| e.p).fold(0.0, f64::max)
    }
}

/// Mixes clamped signals and clips the result.
pub fn mix_signals(signals: Signals, weights: MixtureWeights, clip: ClipRange) -> f64 {
    let Signals { sem, llm, key } = signals;
    let raw =
        weights.alpha * sem.clamp(0.0, 1.0) + weights.beta * llm.clamp(0.0, 1.0) + weights.gamma * key.clamp(0.0, 1.0);
    clip.apply(raw)
}

pub fn estimate_coverage_probability(
    entity: &ClinicalEntity,
    question: &str,
    provider: &dyn EmbeddingProvider,
    assessor: &dyn QualityAssessor,
    weights: MixtureWeights,
    clip: ClipRange,
) -> Result<EntityProbability, GainError> {
    weights.validate()?;
    clip.validate()?;
    let sem = provider
        .similarity(question, &entity.surface)
        .map_err(|source| GainError::Provider { entity_id: entity.id.clone(), source })?
        .clamp(0.0, 1.0);
    let llm = assessor
        .relevance(entity, question)
        .map_err(|source| GainError::Assessor { entity_id: entity.id.clone(), source })?
        .clamp(0.0, 1.0);
    let key = keyword_score(entity, &text::token_set(question));
    let signals = Signals { sem, llm, key };
    Ok(EntityProbability { entity_id: entity.id.clone(), p: mix_signals(signals, weights, clip), signals })
}

pub fn estimate_all(
    uncovered: &[&ClinicalEntity],
    question: &str,
    provider: &dyn EmbeddingProvider,
    assessor: &dyn QualityAssessor,
    weights: MixtureWeights,
    clip: ClipRange,
) -> Result<CoverageProbabilities, GainError> {
    let entries = uncovered
        .iter()
        .map(|e| estimate_coverage_probability(e, question, provider, assessor, weights, clip))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CoverageProbabilities { weights, entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainBreakdown {
    pub prior_entropy: f64,
    pub conditional_entropy: f64,
    pub ig: f64,
    /// Unweighted gain per category label.
    pub per_category_ig: BTreeMap<String, f64>,
    pub weighted_ig: f64,
}

impl GainBreakdown {
    pub fn empty() -> Self {
        Self {
            prior_entropy: 0.0,
            conditional_entropy: 0.0,
            ig: 0.0,
            per_category_ig: BTreeMap::new(),
            weighted_ig: 0.0,
        }
    }
}

/// Computes prior/conditional entropy, the gain, its per-category partition
/// and the importance-weighted gain. `probs` must cover exactly `uncovered`.
pub fn information_gain(
    uncovered: &[&ClinicalEntity],
    probs: &CoverageProbabilities,
) -> Result<GainBreakdown, GainError> {
    let expected: BTreeSet<&str> = uncovered.iter().map(|e| e.id.as_str()).collect();
    let got: BTreeSet<&str> = probs.entries.iter().map(|e| e.entity_id.as_str()).collect();
    if expected.len() != uncovered.len() || got.len() != probs.entries.len() || expected != got {
        let missing: Vec<&&str> = expected.difference(&got).collect();
        let extra: Vec<&&str> = got.difference(&expected).collect();
        return Err(GainError::Mismatch(format!("missing {missing:?}, extra {extra:?}")));
    }

    let mut conditional = 0.0;
    let mut per_category: BTreeMap<String, f64> = BTreeMap::new();
    let mut per_category_weighted: BTreeMap<String, f64> = BTreeMap::new();
    for entity in uncovered {
        let p = probs.get(&entity.id).expect("checked above").p;
        let h = binary_entropy(p)?;
        conditional += h;
        let gain = 1.0 - h;
        *per_category.entry(entity.category.clone()).or_default() += gain;
        *per_category_weighted.entry(entity.category.clone()).or_default() += entity.importance_weight * gain;
    }
    let prior = uncovered.len() as f64;
    Ok(GainBreakdown {
        prior_entropy: prior,
        conditional_entropy: conditional,
        ig: prior - conditional,
        per_category_ig: per_category,
        weighted_ig: per_category_weighted.values().fold(0.0, |acc, v| acc + v),
    })
}
