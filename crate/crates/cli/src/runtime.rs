//! Builds the pipeline components selected by a run configuration.

use std::path::Path;
use std::sync::Arc;

use igft_core::dialogue::{Interviewer, OraclePolicy, PatientFactory, SimulatorFactory};
use igft_core::embedding::{EmbeddingProvider, LexicalEmbedder};
use igft_core::eval::{HpiGenerator, RuleExtractor, StatementExtractor, TemplateHpiGenerator};
use igft_core::grpo::SelfPlay;
use igft_core::policy::{Checkpoint, SoftmaxPolicy};
use igft_core::quality::{HeuristicAssessor, QualityAssessor};
use igft_core::remote::{
    ChatClient, RemoteAssessor, RemoteEmbeddingProvider, RemoteExtractor, RemoteHpiGenerator, RemotePatientFactory,
};
use igft_core::reward::RewardModel;
use igft_core::vignette::{generate_synthetic_cases, load_cases, VignetteCase};

use crate::config::RunConfig;
use crate::CliError;

pub struct Components {
    pub model: RewardModel,
    pub provider: Arc<dyn EmbeddingProvider>,
    pub patients: Box<dyn PatientFactory>,
    pub generator: Box<dyn HpiGenerator>,
    pub extractor: Box<dyn StatementExtractor>,
}

impl Components {
    pub fn build(config: &RunConfig) -> Result<Self, CliError> {
        let reward = config.reward;
        let model_err = |e: igft_core::reward::RewardError| CliError::Other(e.to_string());
        if !config.remote.enabled {
            let provider: Arc<dyn EmbeddingProvider> = Arc::new(LexicalEmbedder::default());
            let assessor = Arc::new(HeuristicAssessor::new(provider.clone(), reward.mixture(), reward.clip()));
            return Ok(Self {
                model: RewardModel::new(provider.clone(), assessor, reward).map_err(model_err)?,
                provider,
                patients: Box::new(SimulatorFactory { config: config.simulator }),
                generator: Box::new(TemplateHpiGenerator),
                extractor: Box::new(RuleExtractor),
            });
        }
        let r = &config.remote;
        let remote_err = |e: igft_core::remote::RemoteError| CliError::Remote(e.to_string());
        let chat = ChatClient::new(r.chat.clone()).map_err(remote_err)?;
        let provider: Arc<dyn EmbeddingProvider> =
            Arc::new(RemoteEmbeddingProvider::new(r.embed.clone()).map_err(remote_err)?);
        let fallback: Option<Arc<dyn QualityAssessor>> = r.fallback.then(|| {
            let lexical: Arc<dyn EmbeddingProvider> = Arc::new(LexicalEmbedder::default());
            Arc::new(HeuristicAssessor::new(lexical, reward.mixture(), reward.clip())) as Arc<dyn QualityAssessor>
        });
        let assessor = Arc::new(RemoteAssessor::new(chat.clone(), fallback, r.parse_attempts, r.max_in_flight));
        Ok(Self {
            model: RewardModel::new(provider.clone(), assessor, reward).map_err(model_err)?,
            provider,
            patients: Box::new(RemotePatientFactory {
                chat: chat.clone(),
                disclosure_cap: config.simulator.disclosure_cap,
            }),
            generator: Box::new(RemoteHpiGenerator { chat: chat.clone() }),
            extractor: Box::new(RemoteExtractor { chat }),
        })
    }

    pub fn self_play<'a>(&'a self, config: &RunConfig, cases: &'a [VignetteCase]) -> SelfPlay<'a> {
        SelfPlay { cases, model: &self.model, patients: self.patients.as_ref(), episode: config.episode() }
    }
}

/// Cases from `override_path`, else from `paths.cases`, else generated.
pub fn cases(config: &RunConfig, override_path: Option<&Path>) -> Result<Vec<VignetteCase>, CliError> {
    let registry = config.registry();
    match override_path.or(config.paths.cases.as_deref()) {
        Some(path) => Ok(load_cases(path, &registry)?),
        None => {
            let d = &config.data;
            Ok(generate_synthetic_cases(d.synthetic_cases, d.seed, &registry, (d.min_entities, d.max_entities))?)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BuiltinPolicy {
    /// Untrained policy: every template equally likely.
    Uniform,
    /// Names the uncovered entities directly.
    Oracle,
}

/// The interviewer to run and a short description of it.
pub fn interviewer(
    config: &RunConfig,
    checkpoint: Option<&Path>,
    builtin: BuiltinPolicy,
) -> Result<(Box<dyn Interviewer>, String), CliError> {
    let per_turn = config.simulator.disclosure_cap;
    match (checkpoint, builtin) {
        (Some(path), _) => {
            let template = SoftmaxPolicy::uniform(config.registry());
            let (policy, ckpt) = Checkpoint::load(path, &template)?;
            Ok((Box::new(policy), format!("checkpoint {} (epoch {})", path.display(), ckpt.epochs_completed)))
        }
        (None, BuiltinPolicy::Uniform) => Ok((Box::new(SoftmaxPolicy::uniform(config.registry())), "uniform".into())),
        (None, BuiltinPolicy::Oracle) => Ok((Box::new(OraclePolicy { per_turn }), "oracle".into())),
    }
}
