//! Run configuration: a TOML document with a documented default for every
//! key. Unknown keys and invalid values are all reported together.

use std::fmt;
use std::path::{Path, PathBuf};

use igft_core::dialogue::{EpisodeConfig, SimulatorConfig};
use igft_core::grpo::GrpoConfig;
use igft_core::remote::EndpointConfig;
use igft_core::reward::RewardConfig;
use igft_core::vignette::{Category, CategoryRegistry};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_CHAT_ENDPOINT: &str = "IGFT_CHAT_ENDPOINT";
pub const ENV_CHAT_MODEL: &str = "IGFT_CHAT_MODEL";
pub const ENV_API_TOKEN: &str = "IGFT_API_TOKEN";
pub const ENV_EMBED_ENDPOINT: &str = "IGFT_EMBED_ENDPOINT";
pub const ENV_EMBED_TOKEN: &str = "IGFT_EMBED_TOKEN";

#[derive(Debug, Error)]
pub struct ConfigError {
    pub source_name: String,
    pub problems: Vec<String>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration {}:", self.source_name)?;
        for p in &self.problems {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    /// Case file; when unset, cases come from the `[data]` generator.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cases: Option<PathBuf>,
    /// Parent directory of run and evaluation directories.
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { cases: None, output_dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub synthetic_cases: usize,
    pub seed: u64,
    pub min_entities: usize,
    pub max_entities: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { synthetic_cases: 20, seed: 0, min_entities: 10, max_entities: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeSection {
    pub max_turns: usize,
    pub semantic_threshold: f64,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        Self { max_turns: e.max_turns, semantic_threshold: e.semantic_threshold }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    /// Write a checkpoint every this many epochs (and after the last one).
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { checkpoint_every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub seeds: Vec<u64>,
    pub match_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { seeds: vec![0, 1, 2], match_threshold: 0.85 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteSection {
    /// Switches assessor, embeddings, patient, HPI writer and extractor to
    /// the remote implementations.
    pub enabled: bool,
    pub chat: EndpointConfig,
    pub embed: EndpointConfig,
    pub parse_attempts: u32,
    pub max_in_flight: usize,
    /// Use the heuristic assessor when the remote assessor fails.
    pub fallback: bool,
}

impl Default for RemoteSection {
    fn default() -> Self {
        Self {
            enabled: false,
            chat: EndpointConfig::default(),
            embed: EndpointConfig::default(),
            parse_attempts: 3,
            max_in_flight: 4,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub data: DataConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub episode: EpisodeSection,
    pub simulator: SimulatorConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub remote: RemoteSection,
    pub categories: Vec<Category>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: PathsConfig::default(),
            data: DataConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::desk(),
            episode: EpisodeSection::default(),
            simulator: SimulatorConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            remote: RemoteSection::default(),
            categories: CategoryRegistry::default().categories().to_vec(),
        }
    }
}

impl RunConfig {
    /// Parses, applies environment overrides and validates.
    pub fn from_toml(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let err = |problems| ConfigError { source_name: source_name.to_string(), problems };
        let value: toml::Table = toml::from_str(text).map_err(|e| err(vec![e.to_string()]))?;
        let mut unknown = Vec::new();
        unknown_keys(&value, &schema_table(), "", &mut unknown);
        if !unknown.is_empty() {
            return Err(err(unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect()));
        }
        let mut merged = toml::Table::try_from(RunConfig::default()).expect("config serializes");
        merge(&mut merged, value);
        let mut config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| err(vec![e.to_string()]))?;
        config.apply_env(|k| std::env::var(k).ok());
        config.validate().map_err(err)?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, crate::CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| crate::CliError::io(path, source))?;
        Ok(Self::from_toml(&text, &path.display().to_string())?)
    }

    /// Defaults with environment overrides, validated.
    pub fn defaults() -> Result<Self, ConfigError> {
        Self::from_toml("", "<defaults>")
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_CHAT_ENDPOINT) {
            self.remote.chat.url = v;
        }
        if let Some(v) = get(ENV_CHAT_MODEL) {
            self.remote.chat.model = v;
        }
        if let Some(v) = get(ENV_API_TOKEN) {
            self.remote.chat.token = Some(v);
        }
        if let Some(v) = get(ENV_EMBED_ENDPOINT) {
            self.remote.embed.url = v;
        }
        if let Some(v) = get(ENV_EMBED_TOKEN) {
            self.remote.embed.token = Some(v);
        }
    }

    /// Every problem found, one entry per offending section or key.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if let Err(e) = CategoryRegistry::new(self.categories.clone()) {
            problems.push(format!("categories: {e}"));
        }
        if let Err(e) = self.reward.validate() {
            problems.push(format!("reward: {e}"));
        }
        if let Err(e) = self.grpo.validate() {
            problems.push(format!("grpo: {e}"));
        }
        if let Err(e) = self.episode().validate() {
            problems.push(format!("episode: {e}"));
        }
        if let Err(e) = self.simulator.validate() {
            problems.push(format!("simulator: {e}"));
        }
        let d = &self.data;
        if d.min_entities < 1 || d.max_entities < d.min_entities {
            problems.push(format!(
                "data.min_entities/max_entities: need 1 <= min <= max, got {}..{}",
                d.min_entities, d.max_entities
            ));
        }
        if self.train.checkpoint_every == 0 {
            problems.push("train.checkpoint_every: must be at least 1".into());
        }
        if self.eval.seeds.is_empty() {
            problems.push("eval.seeds: at least one seed is required".into());
        }
        if !(self.eval.match_threshold > 0.0 && self.eval.match_threshold <= 1.0) {
            problems.push(format!("eval.match_threshold: must lie in (0, 1], got {}", self.eval.match_threshold));
        }
        let r = &self.remote;
        if r.parse_attempts == 0 {
            problems.push("remote.parse_attempts: must be at least 1".into());
        }
        if r.max_in_flight == 0 {
            problems.push("remote.max_in_flight: must be at least 1".into());
        }
        if r.enabled {
            for (key, value) in [
                ("remote.chat.url", &r.chat.url),
                ("remote.chat.model", &r.chat.model),
                ("remote.embed.url", &r.embed.url),
            ] {
                if value.trim().is_empty() {
                    problems.push(format!("{key}: required when remote.enabled is true"));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    pub fn registry(&self) -> CategoryRegistry {
        CategoryRegistry::new(self.categories.clone()).expect("validated registry")
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig {
            max_turns: self.episode.max_turns,
            discount: self.grpo.discount,
            semantic_threshold: self.episode.semantic_threshold,
        }
    }

    /// TOML snapshot of the resolved configuration with credentials removed.
    pub fn snapshot(&self) -> String {
        let mut c = self.clone();
        c.remote.chat.token = None;
        c.remote.embed.token = None;
        toml::to_string_pretty(&c).expect("config serializes")
    }
}

/// The default configuration with every optional key present, used as the
/// reference for unknown-key detection.
fn schema_table() -> toml::Table {
    let mut c = RunConfig::default();
    c.paths.cases = Some(PathBuf::new());
    c.remote.chat.token = Some(String::new());
    c.remote.embed.token = Some(String::new());
    toml::Table::try_from(&c).expect("config serializes")
}

/// Overlays `top` onto `base`; tables merge key by key, anything else
/// (including arrays) replaces the base value.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn unknown_keys(given: &toml::Table, schema: &toml::Table, prefix: &str, out: &mut Vec<String>) {
    for (key, value) in given {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (value, schema.get(key)) {
            (_, None) => out.push(path),
            (toml::Value::Table(g), Some(toml::Value::Table(s))) => unknown_keys(g, s, &path, out),
            (toml::Value::Array(items), Some(toml::Value::Array(s))) => {
                if let Some(toml::Value::Table(s)) = s.first() {
                    for (i, item) in items.iter().enumerate() {
                        if let toml::Value::Table(g) = item {
                            unknown_keys(g, s, &format!("{path}[{i}]"), out);
                        }
                    }
                }
            }
            _ => {}
        }
    }
}
