//! Model backends. A backend can sample a continuation of a prompt and report
//! per-token log-probs of a forced completion; nothing else is assumed.

mod http;
pub mod mock;
pub mod openai;
pub mod scenario;
pub mod shim;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::Prompt;
use crate::scoring::TokenScore;

pub use mock::{MockBackend, MockTables, MockTablesBuilder};
pub use openai::OpenAiBackend;
pub use scenario::{compile_scenario, Scenario};
pub use shim::ShimBackend;

pub trait Backend: Send + Sync {
    /// Stable identity used in cache keys and report echoes.
    fn id(&self) -> String;

    fn generate(&self, prompt: &Prompt, params: &SamplingParams) -> Result<String>;

    /// Log-probs of `completion`'s tokens given `prompt`, in order.
    fn score(&self, prompt: &Prompt, completion: &str) -> Result<Vec<TokenScore>>;

    /// Checks health and forced-completion scoring; returns the model name.
    fn probe(&self) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpShim,
    OpenaiCompatible,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http_shim" | "http-shim" | "shim" => Ok(BackendKind::HttpShim),
            "openai_compatible" | "openai-compatible" | "openai" => {
                Ok(BackendKind::OpenaiCompatible)
            }
            "mock" => Ok(BackendKind::Mock),
            other => Err(Error::validation(format!("unknown backend kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Base URL for network kinds; unused for the mock.
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_token_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Mock fixture tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<PathBuf>,
}

impl BackendDescriptor {
    pub fn mock(fixture: impl Into<PathBuf>) -> Self {
        BackendDescriptor {
            kind: BackendKind::Mock,
            endpoint: String::new(),
            model_name: "mock".into(),
            auth_token_env: None,
            timeout_secs: 30.0,
            max_retries: 0,
            fixture: Some(fixture.into()),
        }
    }

    pub fn network(
        kind: BackendKind,
        endpoint: impl Into<String>,
        model: impl Into<String>,
    ) -> Self {
        BackendDescriptor {
            kind,
            endpoint: endpoint.into(),
            model_name: model.into(),
            auth_token_env: None,
            timeout_secs: 60.0,
            max_retries: 2,
            fixture: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::validation(format!(
                "timeout must be positive, got {}",
                self.timeout_secs
            )));
        }
        match self.kind {
            BackendKind::Mock => {
                if self.fixture.is_none() {
                    return Err(Error::validation(
                        "mock backend needs a fixture tables file",
                    ));
                }
            }
            BackendKind::HttpShim | BackendKind::OpenaiCompatible => {
                let uri: ureq::http::Uri = self.endpoint.parse().map_err(|e| {
                    Error::validation(format!("malformed endpoint `{}`: {e}", self.endpoint))
                })?;
                let scheme_ok = matches!(uri.scheme_str(), Some("http" | "https"));
                if !scheme_ok || uri.authority().is_none() {
                    return Err(Error::validation(format!(
                        "endpoint `{}` must be an absolute http(s) URL",
                        self.endpoint
                    )));
                }
            }
        }
        Ok(())
    }

    fn auth_token(&self) -> Result<Option<String>> {
        match &self.auth_token_env {
            None => Ok(None),
            Some(var) => std::env::var(var).map(Some).map_err(|_| {
                Error::validation(format!(
                    "credential environment variable `{var}` is not set"
                ))
            }),
        }
    }
}

/// Sampling for context generation. `top_k` truncates the token distribution
/// and is unrelated to top-k aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_k: u32,
    pub seed: u64,
    pub max_new_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            temperature: 0.9,
            top_k: 40,
            seed: 0,
            max_new_tokens: 256,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::validation(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.top_k == 0 {
            return Err(Error::validation("sampling top_k must be at least 1"));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::validation("max_new_tokens must be at least 1"));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SamplingParams { seed, ..self }
    }
}

pub(crate) fn check_completion(completion: &str) -> Result<()> {
    if completion.is_empty() {
        return Err(Error::validation("cannot score an empty completion"));
    }
    Ok(())
}

/// Builds the backend a descriptor names. Network backends are not contacted
/// until first use; call [`Backend::probe`] to check capabilities up front.
pub fn open_backend(descriptor: &BackendDescriptor) -> Result<Arc<dyn Backend>> {
    descriptor.validate()?;
    Ok(match descriptor.kind {
        BackendKind::Mock => {
            let path = descriptor.fixture.as_ref().expect("validated");
            Arc::new(MockBackend::from_file(path)?)
        }
        BackendKind::HttpShim => Arc::new(ShimBackend::new(descriptor)?),
        BackendKind::OpenaiCompatible => Arc::new(OpenAiBackend::new(descriptor)?),
    })
}
