//! Featurized softmax policy over a bank of question templates.

use std::fs;
use std::path::{Path, PathBuf};

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dialogue::{AskedQuestion, DialogueError, InterviewState, Interviewer};
use crate::grpo::AdamState;
use crate::lexicon;
use crate::quality::RewardBreakdown;
use crate::vignette::CategoryRegistry;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("policy parameters contain non-finite values")]
    NonFinite,
    #[error("template index {index} out of range for a bank of {len}")]
    Template { index: usize, len: usize },
    #[error("invalid template bank: {0}")]
    Bank(String),
    #[error("group size must be at least 1")]
    GroupSize,
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("checkpoint {what} hash mismatch: expected {expected}, found {found}")]
    SchemaMismatch { what: &'static str, expected: String, found: String },
}

const FALLBACK_CUE: &str = "your symptoms";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TemplateTarget {
    Category { label: String },
    Generic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTemplate {
    /// Text with optional `{hint}` (chief complaint) and `{category}` slots.
    pub text: String,
    pub target: TemplateTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateBank {
    templates: Vec<QuestionTemplate>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl TemplateBank {
    /// Two targeted templates per registry category followed by the generic
    /// templates.
    pub fn default_for(registry: &CategoryRegistry) -> Self {
        let mut templates = Vec::new();
        for label in registry.labels() {
            for text in lexicon::category_templates(label) {
                templates
                    .push(QuestionTemplate { text, target: TemplateTarget::Category { label: label.to_string() } });
            }
        }
        templates.extend(
            lexicon::GENERIC_TEMPLATES
                .iter()
                .map(|t| QuestionTemplate { text: t.to_string(), target: TemplateTarget::Generic }),
        );
        Self { templates }
    }

    pub fn new(templates: Vec<QuestionTemplate>, registry: &CategoryRegistry) -> Result<Self, PolicyError> {
        if templates.len() < registry.len() {
            return Err(PolicyError::Bank(format!("{} templates for {} categories", templates.len(), registry.len())));
        }
        for (i, t) in templates.iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(PolicyError::Bank(format!("template {i} is empty")));
            }
            if let TemplateTarget::Category { label } = &t.target {
                if registry.index_of(label).is_none() {
                    return Err(PolicyError::Bank(format!("template {i} targets unknown category {label:?}")));
                }
            }
        }
        for label in registry.labels() {
            let covered =
                templates.iter().any(|t| matches!(&t.target, TemplateTarget::Category { label: l } if l == label));
            if !covered {
                return Err(PolicyError::Bank(format!("no template targets category {label:?}")));
            }
        }
        Ok(Self { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[QuestionTemplate] {
        &self.templates
    }

    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(&self.templates).expect("templates serialize"))
    }

    /// Fills the slots of template `index` from `state`.
    pub fn render(
        &self,
        index: usize,
        state: &InterviewState,
        registry: &CategoryRegistry,
    ) -> Result<String, PolicyError> {
        let t = self.templates.get(index).ok_or(PolicyError::Template { index, len: self.len() })?;
        let mut text = t.text.replace("{hint}", &state.header.chief_complaint);
        if text.contains("{category}") {
            let cue = priority_category(state, registry).map(lexicon::category_cue);
            text = text.replace("{category}", cue.as_deref().unwrap_or(FALLBACK_CUE));
        }
        Ok(text)
    }
}

/// The uncovered category with the largest total entity weight; ties go to
/// the earlier registry entry.
pub fn priority_category<'r>(state: &InterviewState, registry: &'r CategoryRegistry) -> Option<&'r str> {
    let uncovered = state.coverage.uncovered();
    let mut best: Option<(&str, f64)> = None;
    for label in registry.labels() {
        let mass: f64 = uncovered.iter().filter(|e| e.category == label).map(|e| e.importance_weight).sum();
        let present = uncovered.iter().any(|e| e.category == label);
        if present && best.is_none_or(|(_, m)| mass > m) {
            best = Some((label, mass));
        }
    }
    best.map(|(l, _)| l)
}

/// Names and order of the state features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    labels: Vec<String>,
    names: Vec<String>,
}

impl FeatureSchema {
    pub fn for_registry(registry: &CategoryRegistry) -> Self {
        let labels: Vec<String> = registry.labels().map(String::from).collect();
        let mut names: Vec<String> = labels.iter().map(|l| format!("uncovered_share:{l}")).collect();
        names.extend(["turn_progress", "covered_fraction", "last_answer_informative"].map(String::from));
        names.extend(labels.iter().map(|l| format!("chief_category:{l}")));
        Self { labels, names }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.names.join("\n").as_bytes())
    }

    /// Feature vector of `state`; every entry lies in [0, 1].
    pub fn extract(&self, state: &InterviewState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        let all = state.coverage.all_entities();
        let uncovered = state.coverage.uncovered();
        for label in &self.labels {
            let total = all.iter().filter(|e| &e.category == label).count();
            let open = uncovered.iter().filter(|e| &e.category == label).count();
            out.push(if total == 0 { 0.0 } else { open as f64 / total as f64 });
        }
        out.push((state.turn() as f64 / state.max_turns.max(1) as f64).min(1.0));
        out.push(if all.is_empty() { 0.0 } else { state.coverage.covered_count() as f64 / all.len() as f64 });
        out.push(if state.last_answer_informative() { 1.0 } else { 0.0 });
        for label in &self.labels {
            out.push(if state.header.chief_category.as_deref() == Some(label) { 1.0 } else { 0.0 });
        }
        out
    }
}

/// θ (row-major, `templates × features`) and the bias vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub templates: usize,
    pub features: usize,
    pub theta: Vec<f64>,
    pub bias: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(templates: usize, features: usize) -> Self {
        Self { templates, features, theta: vec![0.0; templates * features], bias: vec![0.0; templates] }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(templates: usize, features: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(templates, features);
        for v in p.theta.iter_mut().chain(p.bias.iter_mut()) {
            *v = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.theta.len() != self.templates * self.features || self.bias.len() != self.templates {
            return Err(PolicyError::Dimension(format!(
                "theta has {} entries and bias {}, expected {}x{} and {}",
                self.theta.len(),
                self.bias.len(),
                self.templates,
                self.features,
                self.templates
            )));
        }
        if self.theta.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(PolicyError::NonFinite);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.theta.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// θ followed by b.
    pub fn flat(&self) -> Vec<f64> {
        self.theta.iter().chain(&self.bias).copied().collect()
    }

    pub fn from_flat(templates: usize, features: usize, values: &[f64]) -> Result<Self, PolicyError> {
        let n = templates * features;
        if values.len() != n + templates {
            return Err(PolicyError::Dimension(format!(
                "{} values for {templates}x{features} parameters",
                values.len()
            )));
        }
        Ok(Self { templates, features, theta: values[..n].to_vec(), bias: values[n..].to_vec() })
    }

    pub fn logits(&self, phi: &[f64]) -> Result<Vec<f64>, PolicyError> {
        if phi.len() != self.features {
            return Err(PolicyError::Dimension(format!(
                "{} features for parameters expecting {}",
                phi.len(),
                self.features
            )));
        }
        Ok((0..self.templates)
            .map(|k| {
                let row = &self.theta[k * self.features..(k + 1) * self.features];
                self.bias[k] + row.iter().zip(phi).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect())
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

/// π(· | φ) = softmax(θφ + b).
pub fn action_distribution(params: &PolicyParameters, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
    Ok(softmax(&params.logits(features)?))
}

pub fn log_action_distribution(params: &PolicyParameters, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
    Ok(log_softmax(&params.logits(features)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampledAction {
    pub template: usize,
    pub log_prob: f64,
}

/// `k` independent draws, with replacement, from the action distribution.
pub fn sample_candidates(
    params: &PolicyParameters,
    features: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SampledAction>, PolicyError> {
    if k == 0 {
        return Err(PolicyError::GroupSize);
    }
    let log_probs = log_action_distribution(params, features)?;
    let probs: Vec<f64> = log_probs.iter().map(|l| l.exp()).collect();
    let dist = WeightedIndex::new(&probs).map_err(|_| PolicyError::NonFinite)?;
    Ok((0..k)
        .map(|_| {
            let template = dist.sample(rng);
            SampledAction { template, log_prob: log_probs[template] }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionCandidate {
    pub template: usize,
    pub text: String,
    pub log_prob: f64,
    pub reward: Option<RewardBreakdown>,
}

/// The trainable interviewer.
#[derive(Debug, Clone)]
pub struct SoftmaxPolicy {
    pub registry: CategoryRegistry,
    pub bank: TemplateBank,
    pub schema: FeatureSchema,
    pub params: PolicyParameters,
}

impl SoftmaxPolicy {
    pub fn new(registry: CategoryRegistry, bank: TemplateBank, params: PolicyParameters) -> Result<Self, PolicyError> {
        let schema = FeatureSchema::for_registry(&registry);
        params.validate()?;
        if params.templates != bank.len() || params.features != schema.dim() {
            return Err(PolicyError::Dimension(format!(
                "parameters are {}x{}, bank and schema need {}x{}",
                params.templates,
                params.features,
                bank.len(),
                schema.dim()
            )));
        }
        Ok(Self { registry, bank, schema, params })
    }

    /// Zero parameters: the uniform policy over the default bank.
    pub fn uniform(registry: CategoryRegistry) -> Self {
        let bank = TemplateBank::default_for(&registry);
        let schema = FeatureSchema::for_registry(&registry);
        let params = PolicyParameters::zeros(bank.len(), schema.dim());
        Self { registry, bank, schema, params }
    }

    pub fn with_params(&self, params: PolicyParameters) -> Result<Self, PolicyError> {
        Self::new(self.registry.clone(), self.bank.clone(), params)
    }

    pub fn features(&self, state: &InterviewState) -> Vec<f64> {
        self.schema.extract(state)
    }

    pub fn distribution(&self, state: &InterviewState) -> Result<Vec<f64>, PolicyError> {
        action_distribution(&self.params, &self.features(state))
    }

    pub fn candidates(
        &self,
        state: &InterviewState,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<QuestionCandidate>, PolicyError> {
        let phi = self.features(state);
        sample_candidates(&self.params, &phi, k, rng)?
            .into_iter()
            .map(|a| {
                Ok(QuestionCandidate {
                    template: a.template,
                    text: self.bank.render(a.template, state, &self.registry)?,
                    log_prob: a.log_prob,
                    reward: None,
                })
            })
            .collect()
    }
}

impl Interviewer for SoftmaxPolicy {
    fn ask(&self, state: &InterviewState, rng: &mut ChaCha8Rng) -> Result<AskedQuestion, DialogueError> {
        let c = self.candidates(state, 1, rng).map_err(|e| DialogueError::Interviewer(e.to_string()))?.remove(0);
        Ok(AskedQuestion { text: c.text, template: Some(c.template), log_prob: Some(c.log_prob) })
    }
}

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub bank_hash: String,
    pub feature_schema_hash: String,
    pub epochs_completed: usize,
    pub params: PolicyParameters,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(policy: &SoftmaxPolicy, optimizer: Option<AdamState>, epochs_completed: usize) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            bank_hash: policy.bank.hash(),
            feature_schema_hash: policy.schema.hash(),
            epochs_completed,
            params: policy.params.clone(),
            optimizer,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let io_err = |source| PolicyError::Io { path: path.to_path_buf(), source };
        let mut body = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        body.push('\n');
        fs::write(path, body).map_err(io_err)
    }

    /// Reads a checkpoint without checking it against a policy.
    pub fn read(path: &Path) -> Result<Self, PolicyError> {
        let raw = fs::read_to_string(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)
            .map_err(|e| PolicyError::Checkpoint { path: path.to_path_buf(), message: e.to_string() })?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(PolicyError::Checkpoint {
                path: path.to_path_buf(),
                message: format!("unsupported format version {}", ckpt.format_version),
            });
        }
        ckpt.params.validate()?;
        Ok(ckpt)
    }

    /// Reads a checkpoint and refuses it unless its bank and feature schema
    /// match `template`'s.
    pub fn load(path: &Path, template: &SoftmaxPolicy) -> Result<(SoftmaxPolicy, Self), PolicyError> {
        let ckpt = Self::read(path)?;
        let bank_hash = template.bank.hash();
        if ckpt.bank_hash != bank_hash {
            return Err(PolicyError::SchemaMismatch {
                what: "template bank",
                expected: bank_hash,
                found: ckpt.bank_hash,
            });
        }
        let schema_hash = template.schema.hash();
        if ckpt.feature_schema_hash != schema_hash {
            return Err(PolicyError::SchemaMismatch {
                what: "feature schema",
                expected: schema_hash,
                found: ckpt.feature_schema_hash,
            });
        }
        let policy = template.with_params(ckpt.params.clone())?;
        Ok((policy, ckpt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vignette::{generate_synthetic_cases, Category};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn state() -> InterviewState {
        let reg = CategoryRegistry::default();
        let case = generate_synthetic_cases(1, 2, &reg, (10, 15)).unwrap().remove(0);
        InterviewState::new(&case, 8)
    }

    #[test]
    fn default_bank_has_two_per_category_plus_generic() {
        let reg = CategoryRegistry::default();
        let bank = TemplateBank::default_for(&reg);
        assert_eq!(bank.len(), 24);
        assert_eq!(FeatureSchema::for_registry(&reg).dim(), 23);
        assert!(TemplateBank::new(bank.templates().to_vec(), &reg).is_ok());
    }

    #[test]
    fn bank_missing_a_category_is_rejected() {
        let reg = CategoryRegistry::default();
        let bank = TemplateBank::default_for(&reg);
        let pruned: Vec<_> = bank.templates()[2..].to_vec();
        assert!(matches!(TemplateBank::new(pruned, &reg), Err(PolicyError::Bank(_))));
    }

    #[test]
    fn zero_params_give_uniform() {
        let p = PolicyParameters::zeros(24, 23);
        let d = action_distribution(&p, &[0.3; 23]).unwrap();
        for x in d {
            assert!((x - 1.0 / 24.0).abs() < 1e-15);
        }
    }

    #[test]
    fn dominant_bias_oracle() {
        let mut p = PolicyParameters::zeros(4, 2);
        p.bias[0] = 5.0;
        let d = action_distribution(&p, &[0.0, 0.0]).unwrap();
        let e5 = 5f64.exp();
        let oracle = [e5 / (e5 + 3.0), 1.0 / (e5 + 3.0)];
        assert!((d[0] - oracle[0]).abs() < 1e-12);
        assert!((d[0] - 0.980187).abs() < 1e-6);
        assert!((d[0] - 0.9811).abs() < 2e-3);
        for x in &d[1..] {
            assert!((x - oracle[1]).abs() < 1e-12);
            assert!((x - 0.006604).abs() < 1e-6);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = PolicyParameters::zeros(4, 3);
        assert!(matches!(action_distribution(&p, &[0.0; 2]), Err(PolicyError::Dimension(_))));
    }

    #[test]
    fn sampling_replays_and_matches_distribution() {
        let mut p = PolicyParameters::zeros(4, 2);
        p.bias[0] = 5.0;
        let phi = [0.0, 0.0];
        let a = sample_candidates(&p, &phi, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_candidates(&p, &phi, 2, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let draws = sample_candidates(&p, &phi, 1000, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let freq = draws.iter().filter(|d| d.template == 0).count() as f64 / 1000.0;
        assert!((freq - 0.9811).abs() < 0.03, "{freq}");
        let lp = log_action_distribution(&p, &phi).unwrap();
        for d in &draws {
            assert!((d.log_prob - lp[d.template]).abs() < 1e-12);
        }
    }

    #[test]
    fn features_are_in_unit_interval_and_sized() {
        let s = state();
        let schema = FeatureSchema::for_registry(&CategoryRegistry::default());
        let phi = schema.extract(&s);
        assert_eq!(phi.len(), schema.dim());
        assert!(phi.iter().all(|x| (0.0..=1.0).contains(x)));
        let cc_slot = 13 + CategoryRegistry::default().index_of("symptom").unwrap();
        assert_eq!(phi[cc_slot], 1.0);
    }

    #[test]
    fn rendering_fills_slots_deterministically() {
        let reg = CategoryRegistry::default();
        let bank = TemplateBank::default_for(&reg);
        let s = state();
        for i in 0..bank.len() {
            let a = bank.render(i, &s, &reg).unwrap();
            assert_eq!(a, bank.render(i, &s, &reg).unwrap());
            assert!(!a.contains('{'), "{a}");
        }
        assert!(bank.render(99, &s, &reg).is_err());
    }

    #[test]
    fn priority_category_prefers_heaviest_then_registry_order() {
        let s = state();
        let reg = CategoryRegistry::default();
        // Round-robin generation puts one or two entities in each category;
        // symptom has the top weight among the most populated.
        assert_eq!(priority_category(&s, &reg), Some("symptom"));
        let flat =
            CategoryRegistry::new(reg.labels().map(|l| Category { label: l.into(), weight: 1.0 }).collect()).unwrap();
        let mut s2 = s.clone();
        let e: Vec<_> = s2
            .coverage
            .all_entities()
            .iter()
            .map(|e| crate::vignette::ClinicalEntity { importance_weight: 1.0, ..e.clone() })
            .collect();
        s2.coverage = crate::coverage::CoverageState::new(e);
        assert_eq!(priority_category(&s2, &flat), Some("symptom"));
    }

    #[test]
    fn checkpoint_round_trip_and_hash_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let reg = CategoryRegistry::default();
        let mut policy = SoftmaxPolicy::uniform(reg.clone());
        policy.params = PolicyParameters::random(24, 23, 0.7, &mut ChaCha8Rng::seed_from_u64(3));
        Checkpoint::new(&policy, None, 4).save(&path).unwrap();
        let (loaded, ckpt) = Checkpoint::load(&path, &SoftmaxPolicy::uniform(reg.clone())).unwrap();
        assert_eq!(loaded.params, policy.params);
        assert_eq!(ckpt.epochs_completed, 4);

        let mut other = SoftmaxPolicy::uniform(reg);
        other.bank = TemplateBank { templates: other.bank.templates().iter().rev().cloned().collect() };
        assert!(matches!(Checkpoint::load(&path, &other), Err(PolicyError::SchemaMismatch { .. })));
    }

    proptest! {
        #[test]
        fn distribution_sums_to_one_and_is_shift_invariant(
            theta in prop::collection::vec(-20.0f64..20.0, 12),
            bias in prop::collection::vec(-20.0f64..20.0, 4),
            phi in prop::collection::vec(0.0f64..1.0, 3),
            c in -50.0f64..50.0,
        ) {
            let p = PolicyParameters { templates: 4, features: 3, theta, bias };
            let d = action_distribution(&p, &phi).unwrap();
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.iter().all(|x| *x > 0.0));
            prop_assert!(log_action_distribution(&p, &phi).unwrap().iter().all(|l| l.is_finite()));
            let shifted = PolicyParameters { bias: p.bias.iter().map(|b| b + c).collect(), ..p.clone() };
            let d2 = action_distribution(&shifted, &phi).unwrap();
            for (a, b) in d.iter().zip(&d2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
