//! Option likelihoods from token log-probabilities and the normalized answer
//! distributions built from them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::effects::AnswerDistribution;
use crate::error::{Error, Result};
use crate::prompt::Prompt;

/// One token of a forced completion, natural-log probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub logprob: f64,
}

impl TokenScore {
    pub fn new(token: impl Into<String>, logprob: f64) -> Self {
        TokenScore {
            token: token.into(),
            logprob,
        }
    }
}

/// The answer options of a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct OptionSet(Vec<String>);

impl OptionSet {
    pub fn new(options: Vec<String>) -> Result<Self> {
        if options.len() < 2 {
            return Err(Error::validation(format!(
                "need at least 2 options, got {}",
                options.len()
            )));
        }
        for (i, o) in options.iter().enumerate() {
            if o.is_empty() {
                return Err(Error::validation(format!("option {i} is empty")));
            }
            if options[..i].contains(o) {
                return Err(Error::validation(format!("duplicate option `{o}`")));
            }
        }
        Ok(OptionSet(options))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, String> {
        self.0.iter()
    }
}

impl<'de> Deserialize<'de> for OptionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        OptionSet::new(Vec::<String>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Length-normalized likelihood of one option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionLikelihood {
    /// Mean token log-probability.
    pub mean_log: f64,
    /// `exp(mean_log)`.
    pub likelihood: f64,
    /// Token count of the option under the backend's tokenizer.
    pub token_count: usize,
    /// Positive log-probs clamped to zero.
    pub clamped: usize,
}

/// `exp(mean token log-prob)`. Slightly positive log-probs (backend rounding)
/// are clamped to zero and counted.
pub fn option_likelihood(token_scores: &[TokenScore]) -> Result<OptionLikelihood> {
    if token_scores.is_empty() {
        return Err(Error::validation("option scored with zero tokens"));
    }
    let mut sum = 0.0;
    let mut clamped = 0;
    for t in token_scores {
        if !t.logprob.is_finite() {
            return Err(Error::validation(format!(
                "non-finite log-prob {} for token `{}`",
                t.logprob, t.token
            )));
        }
        if t.logprob > 0.0 {
            clamped += 1;
        } else {
            sum += t.logprob;
        }
    }
    if clamped > 0 {
        log::warn!("clamped {clamped} positive log-prob(s) to 0");
    }
    let mean_log = sum / token_scores.len() as f64;
    Ok(OptionLikelihood {
        mean_log,
        likelihood: mean_log.exp(),
        token_count: token_scores.len(),
        clamped,
    })
}

/// Normalizes length-normalized likelihoods given as mean logs. The largest
/// mean log is shifted to zero first, so the normalizer is at least 1.
pub fn normalize_mean_logs(mean_logs: &[f64]) -> Result<AnswerDistribution> {
    if let Some(bad) = mean_logs.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite mean log {bad}")));
    }
    let max = mean_logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = mean_logs.iter().map(|m| (m - max).exp()).collect();
    // Summed in sorted order so permuting the options permutes the output exactly.
    let mut sorted = shifted.clone();
    sorted.sort_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    AnswerDistribution::new(shifted.iter().map(|w| w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredOptions {
    pub dist: AnswerDistribution,
    pub per_option: Vec<OptionLikelihood>,
}

impl ScoredOptions {
    pub fn from_likelihoods(per_option: Vec<OptionLikelihood>) -> Result<Self> {
        let means: Vec<f64> = per_option.iter().map(|o| o.mean_log).collect();
        Ok(ScoredOptions {
            dist: normalize_mean_logs(&means)?,
            per_option,
        })
    }

    pub fn clamped(&self) -> usize {
        self.per_option.iter().map(|o| o.clamped).sum()
    }
}

/// Scores every option as a forced completion of `prompt`. Requests run on
/// the current rayon pool; results are assembled in option order.
pub fn score_option_set(
    backend: &dyn Backend,
    prompt: &Prompt,
    options: &OptionSet,
) -> Result<ScoredOptions> {
    let per_option = options
        .as_slice()
        .par_iter()
        .enumerate()
        .map(|(i, option)| {
            backend
                .score(prompt, option)
                .and_then(|tokens| option_likelihood(&tokens))
                .map_err(|e| Error::OptionScoring {
                    option: i,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    ScoredOptions::from_likelihoods(per_option)
}

/// Smallest index attaining the highest probability.
pub fn argmax_option(dist: &AnswerDistribution) -> usize {
    dist.argmax()
}
