//! Adapter for OpenAI-compatible `/v1/completions` servers (vLLM, llama.cpp
//! server, TGI). Scoring uses `echo` with `max_tokens: 0`; servers that do not
//! return prompt log-probs are rejected by [`Backend::probe`].
//!
//! Image blocks are not expressible in the legacy completions API, so this
//! backend is text-only.

use serde::Deserialize;
use serde_json::json;

use super::http::HttpClient;
use super::{check_completion, Backend, BackendDescriptor, SamplingParams};
use crate::error::{Error, Result};
use crate::prompt::{Block, Prompt};
use crate::scoring::TokenScore;

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

#[derive(Debug)]
pub struct OpenAiBackend {
    client: HttpClient,
    endpoint: String,
    model: String,
}

impl OpenAiBackend {
    pub fn new(descriptor: &BackendDescriptor) -> Result<Self> {
        descriptor.validate()?;
        Ok(OpenAiBackend {
            client: HttpClient::new(descriptor)?,
            endpoint: descriptor.endpoint.clone(),
            model: descriptor.model_name.clone(),
        })
    }

    fn first_choice(resp: CompletionResponse) -> Result<Choice> {
        resp.choices
            .into_iter()
            .next()
            .ok_or_else(|| Error::Capability("completion response has no choices".into()))
    }
}

/// Picks the tokens that overlap the completion, i.e. end past `boundary`
/// (a character offset into the echoed text).
fn completion_tokens(lp: Logprobs, boundary: usize, total_chars: usize) -> Result<Vec<TokenScore>> {
    let n = lp.tokens.len();
    if lp.token_logprobs.len() != n || lp.text_offset.len() != n {
        return Err(Error::Capability(
            "logprobs arrays have unequal lengths".into(),
        ));
    }
    let mut out = Vec::new();
    for i in 0..n {
        let end = lp.text_offset.get(i + 1).copied().unwrap_or(total_chars);
        if end <= boundary {
            continue;
        }
        let logprob = lp.token_logprobs[i].ok_or_else(|| {
            Error::Capability(format!(
                "no log-prob for completion token `{}`",
                lp.tokens[i]
            ))
        })?;
        out.push(TokenScore::new(lp.tokens[i].clone(), logprob));
    }
    if out.is_empty() {
        return Err(Error::Capability(
            "echoed log-probs did not cover the completion".into(),
        ));
    }
    Ok(out)
}

impl Backend for OpenAiBackend {
    fn id(&self) -> String {
        format!("openai:{}@{}", self.model, self.endpoint)
    }

    fn generate(&self, prompt: &Prompt, params: &SamplingParams) -> Result<String> {
        params.validate()?;
        let body = json!({
            "model": self.model,
            "prompt": prompt.to_plain_text()?,
            "max_tokens": params.max_new_tokens,
            "temperature": params.temperature,
            "top_k": params.top_k,
            "seed": params.seed,
        });
        let resp: CompletionResponse = self.client.post_json("/v1/completions", &body)?;
        Ok(Self::first_choice(resp)?.text)
    }

    fn score(&self, prompt: &Prompt, completion: &str) -> Result<Vec<TokenScore>> {
        check_completion(completion)?;
        let prefix = prompt.to_plain_text()?;
        let full = format!("{prefix}{completion}");
        let body = json!({
            "model": self.model,
            "prompt": full,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 0,
            "temperature": 0.0,
        });
        let resp: CompletionResponse = self.client.post_json("/v1/completions", &body)?;
        let lp = Self::first_choice(resp)?.logprobs.ok_or_else(|| {
            Error::Capability("server did not return echoed log-probs; scoring unsupported".into())
        })?;
        completion_tokens(lp, prefix.chars().count(), full.chars().count())
    }

    fn probe(&self) -> Result<String> {
        let prompt = Prompt::new(None, vec![Block::Text("Hello".into())])?;
        self.score(&prompt, " ok").map_err(|e| match e {
            Error::Rejected { status, message } => Error::Capability(format!(
                "forced-completion scoring rejected ({status}): {message}"
            )),
            other => other,
        })?;
        Ok(self.model.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(tokens: &[&str], lps: &[Option<f64>]) -> Logprobs {
        let mut offsets = Vec::new();
        let mut at = 0;
        for t in tokens {
            offsets.push(at);
            at += t.chars().count();
        }
        Logprobs {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            token_logprobs: lps.to_vec(),
            text_offset: offsets,
        }
    }

    #[test]
    fn selects_tokens_after_prompt() {
        // "Q: x\nA:" + " yes please"
        let l = lp(
            &["Q", ":", " x", "\n", "A", ":", " yes", " please"],
            &[
                None,
                Some(-1.0),
                Some(-2.0),
                Some(-0.1),
                Some(-0.2),
                Some(-0.3),
                Some(-0.5),
                Some(-0.7),
            ],
        );
        let toks = completion_tokens(l, 7, 18).unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].token, " yes");
        assert_eq!(toks[1].logprob, -0.7);
    }

    #[test]
    fn straddling_token_is_kept() {
        // Prompt "ab", completion "cd", tokenized as "a", "bc", "d".
        let l = lp(&["a", "bc", "d"], &[None, Some(-1.0), Some(-2.0)]);
        let toks = completion_tokens(l, 2, 4).unwrap();
        assert_eq!(toks.len(), 2);
        assert_eq!(toks[0].token, "bc");
    }

    #[test]
    fn missing_logprob_is_a_capability_error() {
        let l = lp(&["a", "b"], &[None, None]);
        assert!(matches!(
            completion_tokens(l, 1, 2),
            Err(Error::Capability(_))
        ));
    }
}
