use std::error::Error as StdError;
use std::path::Path;

use igft_core::embedding::ProviderError;
use igft_core::eval::EvalError;
use igft_core::policy::PolicyError;
use igft_core::quality::AssessorError;
use igft_core::remote::RemoteError;
use igft_core::vignette::VignetteError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("remote dependency failed: {0}")]
    Remote(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Remote(_) => 4,
            Self::Other(_) => 1,
        }
    }

    /// Wraps a pipeline failure, classifying it as remote when any error in
    /// its chain came from a remote component.
    pub fn pipeline(err: &(dyn StdError + 'static), remote: bool) -> Self {
        let message = chain_message(err);
        if remote && chain(err).any(is_remote_failure) {
            Self::Remote(message)
        } else {
            Self::Other(message)
        }
    }
}

impl From<VignetteError> for CliError {
    fn from(e: VignetteError) -> Self {
        match e {
            VignetteError::Io { path, source } => Self::Io { path, source },
            other => Self::Other(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Io { path, source } => Self::Io { path: path.display().to_string(), source },
            other => Self::Other(other.to_string()),
        }
    }
}

fn chain<'a>(err: &'a (dyn StdError + 'static)) -> impl Iterator<Item = &'a (dyn StdError + 'static)> {
    std::iter::successors(Some(err), |&e| e.source())
}

fn chain_message(err: &(dyn StdError + 'static)) -> String {
    let top = err.to_string();
    let mut msg = top.clone();
    for e in chain(err).skip(1) {
        let s = e.to_string();
        if !top.contains(&s) {
            msg.push_str(": ");
            msg.push_str(&s);
        }
    }
    msg
}

fn is_remote_failure(e: &(dyn StdError + 'static)) -> bool {
    if e.is::<RemoteError>() {
        return true;
    }
    if let Some(a) = e.downcast_ref::<AssessorError>() {
        return matches!(a, AssessorError::Transport(_) | AssessorError::Unparseable { .. });
    }
    if let Some(p) = e.downcast_ref::<ProviderError>() {
        return !matches!(p, ProviderError::Invalid(_));
    }
    if let Some(ev) = e.downcast_ref::<EvalError>() {
        return matches!(ev, EvalError::Generation(_) | EvalError::Extraction { .. });
    }
    if let Some(d) = e.downcast_ref::<igft_core::dialogue::DialogueError>() {
        return matches!(d, igft_core::dialogue::DialogueError::Patient(_));
    }
    false
}
