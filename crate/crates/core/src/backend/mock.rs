//! Deterministic table-driven backend.
//!
//! Fixture tables map canonical prompt digests to responses: generation is
//! keyed by `(digest, seed)`, scoring by `(digest, completion)`. A lookup that
//! misses is an error, never a fallback.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{check_completion, Backend, SamplingParams};
use crate::error::{Error, Result};
use crate::prompt::{Prompt, PromptDigest};
use crate::scoring::{OptionSet, TokenScore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub tokens: Vec<String>,
    pub logprobs: Vec<f64>,
}

/// On-disk fixture format. Seeds are decimal strings so the file is plain
/// JSON objects throughout; `BTreeMap` keeps serialization sorted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockTables {
    pub model: String,
    #[serde(default)]
    pub generate: BTreeMap<PromptDigest, BTreeMap<String, String>>,
    #[serde(default)]
    pub score: BTreeMap<PromptDigest, BTreeMap<String, ScoreEntry>>,
}

impl MockTables {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tables: MockTables = serde_json::from_str(&text)?;
        for (digest, entries) in &tables.score {
            for (completion, entry) in entries {
                if entry.tokens.len() != entry.logprobs.len() {
                    return Err(Error::validation(format!(
                        "mock score entry {digest}/{completion:?} has unequal tokens and logprobs"
                    )));
                }
            }
        }
        Ok(tables)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Accumulates fixture entries for a set of prompts.
#[derive(Debug, Clone, Default)]
pub struct MockTablesBuilder {
    tables: MockTables,
}

impl MockTablesBuilder {
    pub fn new(model: impl Into<String>) -> Self {
        MockTablesBuilder {
            tables: MockTables {
                model: model.into(),
                ..Default::default()
            },
        }
    }

    pub fn add_generate(
        &mut self,
        prompt: &Prompt,
        seed: u64,
        text: impl Into<String>,
    ) -> &mut Self {
        self.tables
            .generate
            .entry(prompt.digest())
            .or_default()
            .insert(seed.to_string(), text.into());
        self
    }

    pub fn add_score(
        &mut self,
        prompt: &Prompt,
        completion: impl Into<String>,
        tokens: Vec<String>,
        logprobs: Vec<f64>,
    ) -> &mut Self {
        self.tables
            .score
            .entry(prompt.digest())
            .or_default()
            .insert(completion.into(), ScoreEntry { tokens, logprobs });
        self
    }

    /// Adds score entries whose normalized likelihoods reproduce `probs`.
    /// Each whitespace-separated word of an option becomes one token with
    /// log-prob `ln p`, so the mean log is `ln p` whatever the length.
    pub fn add_distribution(
        &mut self,
        prompt: &Prompt,
        options: &OptionSet,
        probs: &[f64],
    ) -> Result<&mut Self> {
        if probs.len() != options.len() {
            return Err(Error::Dimension {
                expected: options.len(),
                found: probs.len(),
            });
        }
        if let Some(p) = probs.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::validation(format!(
                "mock probabilities must lie in (0, 1], got {p}"
            )));
        }
        for (option, &p) in options.iter().zip(probs) {
            let tokens: Vec<String> = option.split_whitespace().map(str::to_string).collect();
            let tokens = if tokens.is_empty() {
                vec![option.clone()]
            } else {
                tokens
            };
            let logprobs = vec![p.ln(); tokens.len()];
            self.add_score(prompt, option.clone(), tokens, logprobs);
        }
        Ok(self)
    }

    pub fn build(self) -> MockTables {
        self.tables
    }
}

#[derive(Debug, Default)]
pub struct MockBackend {
    tables: MockTables,
    generate_calls: AtomicUsize,
    score_calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(tables: MockTables) -> Self {
        MockBackend {
            tables,
            ..Default::default()
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(MockTables::from_file(path)?))
    }

    pub fn generate_calls(&self) -> usize {
        self.generate_calls.load(Ordering::SeqCst)
    }

    pub fn score_calls(&self) -> usize {
        self.score_calls.load(Ordering::SeqCst)
    }

    pub fn reset_counters(&self) {
        self.generate_calls.store(0, Ordering::SeqCst);
        self.score_calls.store(0, Ordering::SeqCst);
    }

    pub fn tables(&self) -> &MockTables {
        &self.tables
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        format!("mock:{}", self.tables.model)
    }

    fn generate(&self, prompt: &Prompt, params: &SamplingParams) -> Result<String> {
        self.generate_calls.fetch_add(1, Ordering::SeqCst);
        params.validate()?;
        let digest = prompt.digest();
        self.tables
            .generate
            .get(&digest)
            .and_then(|by_seed| by_seed.get(&params.seed.to_string()))
            .cloned()
            .ok_or_else(|| Error::MockMiss {
                kind: "generate",
                key: format!("{digest} seed={}", params.seed),
            })
    }

    fn score(&self, prompt: &Prompt, completion: &str) -> Result<Vec<TokenScore>> {
        self.score_calls.fetch_add(1, Ordering::SeqCst);
        check_completion(completion)?;
        let digest = prompt.digest();
        let entry = self
            .tables
            .score
            .get(&digest)
            .and_then(|by_completion| by_completion.get(completion))
            .ok_or_else(|| Error::MockMiss {
                kind: "score",
                key: format!("{digest} completion={completion:?}"),
            })?;
        Ok(entry
            .tokens
            .iter()
            .zip(&entry.logprobs)
            .map(|(t, &l)| TokenScore::new(t.clone(), l))
            .collect())
    }

    fn probe(&self) -> Result<String> {
        if self.tables.score.is_empty() {
            return Err(Error::Capability(
                "mock tables contain no score entries".into(),
            ));
        }
        Ok(self.tables.model.clone())
    }
}
