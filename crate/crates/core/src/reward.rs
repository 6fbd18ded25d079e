//! Expected reward of a question in a given interview state: coverage
//! probabilities, weighted information gain and the quality bonus.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{EmbeddingProvider, LexicalEmbedder};
use crate::infogain::{
    estimate_all, information_gain, ClipRange, CoverageProbabilities, GainBreakdown, GainError, MixtureWeights,
};
use crate::quality::{
    combine_reward, AssessmentContext, AssessorError, HeuristicAssessor, QualityAssessor, RewardBreakdown,
};
use crate::vignette::ClinicalEntity;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("reward computation failed: {0}")]
    Gain(#[from] GainError),
    #[error("quality assessment failed: {0}")]
    Assessor(#[from] AssessorError),
    #[error("invalid reward configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Weight of the embedding-similarity signal.
    pub alpha: f64,
    /// Weight of the assessor relevance signal.
    pub beta: f64,
    /// Weight of the keyword-overlap signal.
    pub gamma: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Quality bonus coefficient.
    pub lambda: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        let m = MixtureWeights::default();
        let c = ClipRange::default();
        Self { alpha: m.alpha, beta: m.beta, gamma: m.gamma, p_min: c.p_min, p_max: c.p_max, lambda: 0.5 }
    }
}

impl RewardConfig {
    pub fn mixture(&self) -> MixtureWeights {
        MixtureWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma }
    }

    pub fn clip(&self) -> ClipRange {
        ClipRange { p_min: self.p_min, p_max: self.p_max }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        self.mixture().validate()?;
        self.clip().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(RewardError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredQuestion {
    pub probabilities: CoverageProbabilities,
    pub gain: GainBreakdown,
    pub reward: RewardBreakdown,
}

#[derive(Clone)]
pub struct RewardModel {
    provider: Arc<dyn EmbeddingProvider>,
    assessor: Arc<dyn QualityAssessor>,
    config: RewardConfig,
}

impl RewardModel {
    pub fn new(
        provider: Arc<dyn EmbeddingProvider>,
        assessor: Arc<dyn QualityAssessor>,
        config: RewardConfig,
    ) -> Result<Self, RewardError> {
        config.validate()?;
        Ok(Self { provider, assessor, config })
    }

    /// Lexical embeddings and the heuristic assessor; fully deterministic.
    pub fn heuristic(config: RewardConfig) -> Result<Self, RewardError> {
        let provider: Arc<dyn EmbeddingProvider> = Arc::new(LexicalEmbedder::default());
        let assessor = Arc::new(HeuristicAssessor::new(provider.clone(), config.mixture(), config.clip()));
        Self::new(provider, assessor, config)
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    pub fn provider(&self) -> &Arc<dyn EmbeddingProvider> {
        &self.provider
    }

    pub fn assessor(&self) -> &Arc<dyn QualityAssessor> {
        &self.assessor
    }

    /// Scores `question` before its answer is observed.
    pub fn score(
        &self,
        question: &str,
        uncovered: &[&ClinicalEntity],
        ctx: &AssessmentContext<'_>,
    ) -> Result<ScoredQuestion, RewardError> {
        let probabilities = estimate_all(
            uncovered,
            question,
            self.provider.as_ref(),
            self.assessor.as_ref(),
            self.config.mixture(),
            self.config.clip(),
        )?;
        let gain = information_gain(uncovered, &probabilities)?;
        let quality = self.assessor.assess(question, ctx)?;
        let reward = combine_reward(gain.weighted_ig, quality, self.config.lambda);
        Ok(ScoredQuestion { probabilities, gain, reward })
    }
}
