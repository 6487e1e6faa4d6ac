//! Client for the shim protocol:
//!
//! ```text
//! POST /generate {"model","prompt":[{"kind","content"}],"sampling":{...}} -> {"text"}
//! POST /score    {"model","prompt":[...],"completion"}                  -> {"tokens","logprobs"}
//! GET  /health                                                         -> {"status":"ok","model"}
//! ```

use serde::{Deserialize, Serialize};

use super::http::HttpClient;
use super::{check_completion, Backend, BackendDescriptor, SamplingParams};
use crate::error::{Error, Result};
use crate::prompt::{Block, Prompt, WireBlock};
use crate::scoring::TokenScore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub model: String,
    pub prompt: Vec<WireBlock>,
    pub sampling: SamplingParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub model: String,
    pub prompt: Vec<WireBlock>,
    pub completion: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

impl ScoreResponse {
    pub fn into_token_scores(self) -> Result<Vec<TokenScore>> {
        if self.tokens.len() != self.logprobs.len() {
            return Err(Error::Capability(format!(
                "score response has {} tokens but {} logprobs",
                self.tokens.len(),
                self.logprobs.len()
            )));
        }
        Ok(self
            .tokens
            .into_iter()
            .zip(self.logprobs)
            .map(|(t, l)| TokenScore::new(t, l))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
}

#[derive(Debug)]
pub struct ShimBackend {
    client: HttpClient,
    endpoint: String,
    model: String,
}

impl ShimBackend {
    pub fn new(descriptor: &BackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        Ok(ShimBackend {
            client: HttpClient::new(descriptor)?,
            endpoint: descriptor.endpoint.clone(),
            model: descriptor.model_name.clone(),
        })
    }
}

impl Backend for ShimBackend {
    fn id(&self) -> String {
        format!("shim:{}@{}", self.model, self.endpoint)
    }

    fn generate(&self, prompt: &Prompt, params: &SamplingParams) -> Result<String> {
        params.validate()?;
        let req = GenerateRequest {
            model: self.model.clone(),
            prompt: prompt.to_wire(),
            sampling: *params,
        };
        let resp: GenerateResponse = self.client.post_json("/generate", &req)?;
        Ok(resp.text)
    }

    fn score(&self, prompt: &Prompt, completion: &str) -> Result<Vec<TokenScore>> {
        check_completion(completion)?;
        let req = ScoreRequest {
            model: self.model.clone(),
            prompt: prompt.to_wire(),
            completion: completion.to_string(),
        };
        let resp: ScoreResponse = self.client.post_json("/score", &req)?;
        resp.into_token_scores()
    }

    fn probe(&self) -> Result<String> {
        let health: HealthResponse = self.client.get_json("/health")?;
        if health.status != "ok" {
            return Err(Error::Capability(format!(
                "health status is `{}`",
                health.status
            )));
        }
        let prompt = Prompt::new(None, vec![Block::Text("Hello".into())])?;
        let tokens = self.score(&prompt, "ok").map_err(|e| match e {
            Error::Rejected {
                status: 404 | 405 | 501,
                ..
            } => Error::Capability(
                "endpoint does not support forced-completion scoring (/score)".into(),
            ),
            other => other,
        })?;
        if tokens.is_empty() {
            return Err(Error::Capability("/score returned no tokens".into()));
        }
        Ok(health.model)
    }
}
