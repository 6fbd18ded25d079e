//! Question quality scoring and the combined per-question reward.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::elicitation_relevance;
use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::infogain::{estimate_coverage_probability, ClipRange, GainError, MixtureWeights};
use crate::lexicon;
use crate::text;
use crate::vignette::ClinicalEntity;

#[derive(Debug, Error)]
pub enum AssessorError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("assessor transport error: {0}")]
    Transport(String),
    #[error("could not parse assessor reply after {attempts} attempt(s): {message}")]
    Unparseable { attempts: u32, message: String, raw: String },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Heuristic,
    Remote,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub information_gathering: f64,
    pub specificity: f64,
    pub patient_engagement: f64,
    pub clinical_relevance: f64,
    pub comprehensiveness: f64,
    pub aggregate: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl QualityScores {
    /// Clamps each dimension to [0, 1] and sets the aggregate to their mean.
    /// Non-finite inputs count as 0.
    pub fn new(dims: [f64; 5], provenance: Provenance) -> Self {
        let [ig, sp, pe, cr, co] = dims.map(|d| if d.is_finite() { d.clamp(0.0, 1.0) } else { 0.0 });
        Self {
            information_gathering: ig,
            specificity: sp,
            patient_engagement: pe,
            clinical_relevance: cr,
            comprehensiveness: co,
            aggregate: (ig + sp + pe + cr + co) / 5.0,
            provenance,
        }
    }

    pub fn zero() -> Self {
        Self::new([0.0; 5], Provenance::Heuristic)
    }

    pub fn dims(&self) -> [f64; 5] {
        [
            self.information_gathering,
            self.specificity,
            self.patient_engagement,
            self.clinical_relevance,
            self.comprehensiveness,
        ]
    }
}

/// What the assessor sees about the conversation when scoring a question.
#[derive(Debug, Clone, Copy)]
pub struct AssessmentContext<'a> {
    pub chief_complaint: &'a str,
    pub conversation: &'a str,
    pub uncovered: &'a [&'a ClinicalEntity],
    pub all_entities: &'a [ClinicalEntity],
}

impl AssessmentContext<'_> {
    /// Distinct uncovered categories in first-seen order.
    pub fn uncovered_categories(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.uncovered.iter().map(|e| e.category.as_str()).filter(|c| seen.insert(*c)).collect()
    }

    /// One-line digest of uncovered entities, e.g. for prompts.
    pub fn uncovered_digest(&self) -> String {
        self.uncovered.iter().map(|e| format!("{} ({})", e.surface, e.category)).collect::<Vec<_>>().join("; ")
    }
}

pub trait QualityAssessor: Send + Sync {
    fn assess(&self, question: &str, ctx: &AssessmentContext<'_>) -> Result<QualityScores, AssessorError>;

    /// Relevance of `question` to `entity` in [0, 1].
    fn relevance(&self, entity: &ClinicalEntity, question: &str) -> Result<f64, AssessorError>;
}

pub const ENGAGEMENT_MAX_WORDS: usize = 30;
pub const COMPREHENSIVENESS_COSINE: f64 = 0.3;

/// Deterministic assessor built from measurable proxies of each dimension.
#[derive(Clone)]
pub struct HeuristicAssessor {
    provider: Arc<dyn EmbeddingProvider>,
    weights: MixtureWeights,
    clip: ClipRange,
}

impl HeuristicAssessor {
    pub fn new(provider: Arc<dyn EmbeddingProvider>, weights: MixtureWeights, clip: ClipRange) -> Self {
        Self { provider, weights, clip }
    }

    fn gain_err(e: GainError) -> AssessorError {
        match e {
            GainError::Provider { source, .. } => AssessorError::Provider(source),
            GainError::Assessor { source, .. } => source,
            other => AssessorError::Other(other.to_string()),
        }
    }
}

/// 1 minus the share of function words among the question's word tokens;
/// 0 when there are no word tokens.
pub fn specificity(question: &str) -> f64 {
    let tokens = text::tokenize(question);
    if tokens.is_empty() {
        return 0.0;
    }
    let function = tokens.iter().filter(|t| text::is_stopword(t)).count();
    (1.0 - function as f64 / tokens.len() as f64).clamp(0.0, 1.0)
}

/// Questions ending in "?" with at most 30 words score 1. Longer questions
/// lose 1/30 per extra word; statements are halved.
pub fn patient_engagement(question: &str) -> f64 {
    let trimmed = question.trim();
    if trimmed.is_empty() {
        return 0.0;
    }
    let words = text::word_count(trimmed);
    let length = if words <= ENGAGEMENT_MAX_WORDS {
        1.0
    } else {
        (1.0 - (words - ENGAGEMENT_MAX_WORDS) as f64 / ENGAGEMENT_MAX_WORDS as f64).max(0.0)
    };
    let form = if trimmed.ends_with('?') { 1.0 } else { 0.5 };
    length * form
}

impl QualityAssessor for HeuristicAssessor {
    fn assess(&self, question: &str, ctx: &AssessmentContext<'_>) -> Result<QualityScores, AssessorError> {
        let provider = self.provider.as_ref();
        let mut information_gathering: f64 = 0.0;
        for e in ctx.uncovered {
            let p = estimate_coverage_probability(e, question, provider, self, self.weights, self.clip)
                .map_err(Self::gain_err)?;
            information_gathering = information_gathering.max(p.p);
        }

        let q = provider.embed(question)?;
        let mut clinical_relevance: f64 = 0.0;
        for e in ctx.all_entities {
            clinical_relevance = clinical_relevance.max(q.cosine(&provider.embed(&e.surface)?));
        }

        let categories = ctx.uncovered_categories();
        let comprehensiveness = if categories.is_empty() {
            0.0
        } else {
            let mut hits = 0usize;
            for c in &categories {
                if q.cosine(&provider.embed(&lexicon::display_name(c))?) > COMPREHENSIVENESS_COSINE {
                    hits += 1;
                }
            }
            hits as f64 / categories.len() as f64
        };

        Ok(QualityScores::new(
            [
                information_gathering,
                specificity(question),
                patient_engagement(question),
                clinical_relevance,
                comprehensiveness,
            ],
            Provenance::Heuristic,
        ))
    }

    fn relevance(&self, entity: &ClinicalEntity, question: &str) -> Result<f64, AssessorError> {
        Ok(elicitation_relevance(entity, question, self.provider.as_ref())?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub weighted_ig: f64,
    pub quality: QualityScores,
    pub lambda: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn quality_bonus(&self) -> f64 {
        self.lambda * self.quality.aggregate
    }
}

/// `total = weighted_ig + lambda * quality.aggregate`.
pub fn combine_reward(weighted_ig: f64, quality: QualityScores, lambda: f64) -> RewardBreakdown {
    debug_assert!(lambda >= 0.0, "lambda must be non-negative");
    RewardBreakdown { weighted_ig, total: weighted_ig + lambda * quality.aggregate, quality, lambda }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::LexicalEmbedder;
    use proptest::prelude::*;

    fn assessor() -> HeuristicAssessor {
        HeuristicAssessor::new(Arc::new(LexicalEmbedder::default()), MixtureWeights::default(), ClipRange::default())
    }

    fn ent(id: &str, surface: &str, category: &str) -> ClinicalEntity {
        ClinicalEntity {
            id: id.into(),
            surface: surface.into(),
            aliases: vec![],
            category: category.into(),
            importance_weight: 1.0,
        }
    }

    #[test]
    fn aggregate_is_mean_and_clamped() {
        let q = QualityScores::new([0.8, 0.7, 0.9, 0.85, 0.6], Provenance::Remote);
        assert!((q.aggregate - 0.77).abs() < 1e-9);
        let q = QualityScores::new([1.3, -0.2, f64::NAN, 0.5, 0.5], Provenance::Remote);
        assert_eq!(q.dims(), [1.0, 0.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn question_mark_only() {
        let all = [ent("a", "chest pain", "symptom")];
        let unc: Vec<&ClinicalEntity> = all.iter().collect();
        let ctx =
            AssessmentContext { chief_complaint: "chest pain", conversation: "", uncovered: &unc, all_entities: &all };
        let q = assessor().assess("?", &ctx).unwrap();
        assert_eq!(q.specificity, 0.0);
        assert_eq!(q.patient_engagement, 1.0);
        assert_eq!(q.clinical_relevance, 0.0);
        assert_eq!(q.comprehensiveness, 0.0);
        // clipped probability floor
        assert_eq!(q.information_gathering, 0.05);
    }

    #[test]
    fn empty_uncovered_set_gives_no_information_gathering() {
        let all = [ent("a", "chest pain", "symptom")];
        let ctx =
            AssessmentContext { chief_complaint: "chest pain", conversation: "", uncovered: &[], all_entities: &all };
        let q = assessor().assess("When did the chest pain start?", &ctx).unwrap();
        assert_eq!(q.information_gathering, 0.0);
        assert_eq!(q.comprehensiveness, 0.0);
    }

    #[test]
    fn targeted_question_gathers_more_than_vague_one() {
        let all = [
            ent("t", "sudden onset", "temporal_pattern"),
            ent("l", "center of the chest", "location"),
            ent("s", "chest pain", "symptom"),
        ];
        let unc: Vec<&ClinicalEntity> = all[..2].iter().collect();
        let ctx =
            AssessmentContext { chief_complaint: "chest pain", conversation: "", uncovered: &unc, all_entities: &all };
        let a = assessor();
        let targeted = a.assess("When did the chest pain start?", &ctx).unwrap();
        let vague = a.assess("Tell me more.", &ctx).unwrap();
        assert!(targeted.information_gathering >= vague.information_gathering);
    }

    #[test]
    fn engagement_rules() {
        assert_eq!(patient_engagement("Does it hurt?"), 1.0);
        assert_eq!(patient_engagement("Tell me more."), 0.5);
        let long = format!("{}?", vec!["word"; 45].join(" "));
        assert!((patient_engagement(&long) - 0.5).abs() < 1e-12);
        assert_eq!(patient_engagement(""), 0.0);
    }

    #[test]
    fn specificity_rule() {
        assert_eq!(specificity("chest pain"), 1.0);
        assert_eq!(specificity("is it on"), 0.0);
        assert!((specificity("where is the pain") - 0.25).abs() < 1e-12);
    }

    #[test]
    fn combine_examples() {
        let q = QualityScores::new([0.8; 5], Provenance::Heuristic);
        let r = combine_reward(1.244607, q.clone(), 0.5);
        assert!((r.total - 1.644607).abs() < 1e-6);
        assert_eq!(combine_reward(1.244607, q, 0.0).total, 1.244607);
        let r = combine_reward(0.0, QualityScores::new([1.0; 5], Provenance::Heuristic), 0.5);
        assert_eq!(r.total, 0.5);
        assert_eq!(r.quality_bonus(), 0.5);
    }

    proptest! {
        #[test]
        fn total_monotone(ig in 0.0f64..10.0, d in 0.0f64..0.5, dims in prop::array::uniform5(0.0f64..0.9), k in 0usize..5, lambda in 0.0f64..2.0) {
            let base = combine_reward(ig, QualityScores::new(dims, Provenance::Heuristic), lambda);
            let more_ig = combine_reward(ig + d, QualityScores::new(dims, Provenance::Heuristic), lambda);
            let mut bumped = dims;
            bumped[k] += d;
            let more_q = combine_reward(ig, QualityScores::new(bumped, Provenance::Heuristic), lambda);
            prop_assert!(more_ig.total >= base.total);
            prop_assert!(more_q.total >= base.total);
        }

        #[test]
        fn zero_lambda_ranking_matches_gain(igs in prop::collection::vec(0.0f64..5.0, 2..8), aggs in prop::collection::vec(0.0f64..1.0, 8)) {
            let totals: Vec<f64> = igs.iter().enumerate()
                .map(|(i, g)| combine_reward(*g, QualityScores::new([aggs[i]; 5], Provenance::Heuristic), 0.0).total)
                .collect();
            let mut by_total: Vec<usize> = (0..igs.len()).collect();
            by_total.sort_by(|&a, &b| totals[a].total_cmp(&totals[b]).then(a.cmp(&b)));
            let mut by_ig: Vec<usize> = (0..igs.len()).collect();
            by_ig.sort_by(|&a, &b| igs[a].total_cmp(&igs[b]).then(a.cmp(&b)));
            prop_assert_eq!(by_total, by_ig);
        }

        #[test]
        fn heuristic_is_deterministic(q in "[a-z ?]{0,40}", picks in prop::collection::vec(0usize..4, 0..4)) {
            let pool = [
                ent("a", "chest pain", "symptom"),
                ent("b", "worse at night", "temporal_pattern"),
                ent("c", "daily aspirin", "medication"),
                ent("d", "sharp", "quality_character"),
            ];
            let mut seen = BTreeSet::new();
            let unc: Vec<&ClinicalEntity> = picks.iter().filter(|i| seen.insert(**i)).map(|&i| &pool[i]).collect();
            let ctx = AssessmentContext { chief_complaint: "chest pain", conversation: "", uncovered: &unc, all_entities: &pool };
            let a = assessor();
            let s1 = a.assess(&q, &ctx).unwrap();
            let s2 = a.assess(&q, &ctx).unwrap();
            prop_assert_eq!(&s1, &s2);
            for d in s1.dims() { prop_assert!((0.0..=1.0).contains(&d)); }
        }
    }
}
