//! HPI generation from finished interviews and atomic-statement scoring
//! against ground truth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::Trajectory;
use crate::embedding::{EmbeddingProvider, ProviderError};
use crate::lexicon;
use crate::text;
use crate::vignette::VignetteCase;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("match threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
    #[error("cannot extract statements from empty text")]
    EmptyText,
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("statement extraction failed: {message}")]
    Extraction { message: String, raw: String },
    #[error("HPI generation failed: {0}")]
    Generation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementSource {
    Generated,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicStatement {
    pub text: String,
    pub source: StatementSource,
}

impl AsRef<str> for AtomicStatement {
    fn as_ref(&self) -> &str {
        &self.text
    }
}

pub trait HpiGenerator: Send + Sync {
    fn generate(&self, trajectory: &Trajectory) -> Result<String, EvalError>;
}

pub trait StatementExtractor: Send + Sync {
    fn extract(&self, text: &str, source: StatementSource) -> Result<Vec<AtomicStatement>, EvalError>;
}

/// Intro sentence, then one category sentence per covered entity in reveal
/// order.
pub fn generate_hpi(trajectory: &Trajectory) -> String {
    let h = &trajectory.header;
    let mut sentences = vec![lexicon::intro_sentence(h.age, h.sex, &h.chief_complaint)];
    for reveal in trajectory.turns.iter().flat_map(|t| &t.revealed) {
        if let Some(e) = trajectory.entities.iter().find(|e| e.id == reveal.entity_id) {
            sentences.push(format!("{}.", lexicon::statement_frame(&e.category, &e.surface)));
        }
    }
    sentences.join(" ")
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateHpiGenerator;

impl HpiGenerator for TemplateHpiGenerator {
    fn generate(&self, trajectory: &Trajectory) -> Result<String, EvalError> {
        Ok(generate_hpi(trajectory))
    }
}

const CONJUNCTIONS: [&str; 3] = ["and", "or", "but"];

fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
            if at_boundary {
                let end = i + c.len_utf8();
                out.push(&text[start..end]);
                start = end;
            }
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

fn clean_segment(words: &[&str]) -> Option<String> {
    let joined = words.join(" ");
    let trimmed = joined.trim_matches(|c: char| c.is_whitespace() || ",;:.!?".contains(c));
    (!text::tokenize(trimmed).is_empty()).then(|| trimmed.to_string())
}

/// Splits on sentence boundaries, then on coordinating conjunctions.
pub fn extract_statements(hpi: &str, source: StatementSource) -> Result<Vec<AtomicStatement>, EvalError> {
    if hpi.trim().is_empty() {
        return Err(EvalError::EmptyText);
    }
    let mut out = Vec::new();
    for sentence in split_sentences(hpi) {
        let mut segment: Vec<&str> = Vec::new();
        for word in sentence.split_whitespace() {
            let bare = word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
            if CONJUNCTIONS.contains(&bare.as_str()) {
                out.extend(clean_segment(&segment));
                segment.clear();
            } else {
                segment.push(word);
            }
        }
        out.extend(clean_segment(&segment));
    }
    Ok(out.into_iter().map(|text| AtomicStatement { text, source }).collect())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleExtractor;

impl StatementExtractor for RuleExtractor {
    fn extract(&self, text: &str, source: StatementSource) -> Result<Vec<AtomicStatement>, EvalError> {
        extract_statements(text, source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub generated: usize,
    pub truth: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: Vec<MatchedPair>,
    pub unmatched_generated: Vec<usize>,
    pub unmatched_truth: Vec<usize>,
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// One-to-one greedy matching: all (truth, generated) pairs scoring at
/// least `threshold` are taken in order of decreasing score, ties broken by
/// truth index then generated index. Normalized-equal strings score 1.
pub fn match_statements<G: AsRef<str>, T: AsRef<str>>(
    generated: &[G],
    truth: &[T],
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<EvalResult, EvalError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(EvalError::Threshold(threshold));
    }
    let gen_norm: Vec<String> = generated.iter().map(|s| text::normalize(s.as_ref())).collect();
    let truth_norm: Vec<String> = truth.iter().map(|s| text::normalize(s.as_ref())).collect();
    let gen_emb = provider.embed_batch(&generated.iter().map(|s| s.as_ref()).collect::<Vec<_>>())?;
    let truth_emb = provider.embed_batch(&truth.iter().map(|s| s.as_ref()).collect::<Vec<_>>())?;

    let mut pairs = Vec::new();
    for (t, te) in truth_emb.iter().enumerate() {
        for (g, ge) in gen_emb.iter().enumerate() {
            let score = if !gen_norm[g].is_empty() && gen_norm[g] == truth_norm[t] { 1.0 } else { te.cosine(ge) };
            if score >= threshold {
                pairs.push((score, t, g));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gen_used = vec![false; generated.len()];
    let mut truth_used = vec![false; truth.len()];
    let mut matched = Vec::new();
    for (score, t, g) in pairs {
        if !gen_used[g] && !truth_used[t] {
            gen_used[g] = true;
            truth_used[t] = true;
            matched.push(MatchedPair { generated: g, truth: t, score });
        }
    }
    matched.sort_by_key(|m| (m.truth, m.generated));
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(matched.len(), generated.len());
    let recall = ratio(matched.len(), truth.len());
    Ok(EvalResult {
        precision,
        recall,
        f1: f1_score(precision, recall),
        matched,
        unmatched_generated: (0..generated.len()).filter(|&g| !gen_used[g]).collect(),
        unmatched_truth: (0..truth.len()).filter(|&t| !truth_used[t]).collect(),
    })
}

/// Ground-truth statements of a case: the stored list when present,
/// otherwise extracted from its HPI.
pub fn truth_statements(
    case: &VignetteCase,
    extractor: &dyn StatementExtractor,
) -> Result<Vec<AtomicStatement>, EvalError> {
    match &case.ground_truth_statements {
        Some(list) => {
            Ok(list.iter().map(|s| AtomicStatement { text: s.clone(), source: StatementSource::GroundTruth }).collect())
        }
        None => extractor.extract(&case.hpi_text, StatementSource::GroundTruth),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEvaluation {
    pub case_id: String,
    pub hpi: String,
    pub generated: Vec<AtomicStatement>,
    pub truth: Vec<AtomicStatement>,
    pub result: EvalResult,
}

/// Summarize, extract and match one finished interview.
pub fn evaluate_trajectory(
    trajectory: &Trajectory,
    case: &VignetteCase,
    generator: &dyn HpiGenerator,
    extractor: &dyn StatementExtractor,
    provider: &dyn EmbeddingProvider,
    threshold: f64,
) -> Result<CaseEvaluation, EvalError> {
    let hpi = generator.generate(trajectory)?;
    let generated = extractor.extract(&hpi, StatementSource::Generated)?;
    let truth = truth_statements(case, extractor)?;
    let result = match_statements(&generated, &truth, provider, threshold)?;
    Ok(CaseEvaluation { case_id: case.case_id.clone(), hpi, generated, truth, result })
}
