//! Readable scenario files compiled into mock tables.
//!
//! A scenario states, per sample, the answer distributions the mock model
//! should produce under each configuration and the context it should return
//! for each candidate seed. Compilation builds the exact prompts the engine
//! will send and records their digests.
//!
//! ```json
//! {"model": "demo", "system_prompt_index": 0, "base_seed": 0,
//!  "samples": {"s1": {"direct": [0.6, 0.4], "question_only": [0.5, 0.5],
//!                     "candidates": [{"context": "A cat.", "dist": [0.2, 0.8]}]}}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mock::{MockTables, MockTablesBuilder};
use crate::error::{Error, Result};
use crate::harness::Sample;
use crate::prompt::{Configuration, Prompt, PromptBuilder, PromptDigest, VqaInput};
use crate::scoring::OptionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    /// Generated text; empty text triggers the engine's retry.
    pub context: String,
    /// Distribution after conditioning on the context; absent means the
    /// scoring lookups miss and the candidate is dropped.
    #[serde(default)]
    pub dist: Option<Vec<f64>>,
    /// Response to the retry seed.
    #[serde(default)]
    pub retry: Option<Box<CandidateSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScenario {
    pub direct: Vec<f64>,
    pub question_only: Vec<f64>,
    #[serde(default)]
    pub candidates: Vec<CandidateSpec>,
    /// Direct distributions under each library system prompt.
    #[serde(default)]
    pub ensemble: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub one_shot: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: String,
    #[serde(default)]
    pub system_prompt_index: usize,
    #[serde(default)]
    pub base_seed: u64,
    pub samples: BTreeMap<String, SampleScenario>,
}

impl Scenario {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Number of candidates, which must be the same for every sample that
    /// lists any.
    pub fn n_candidates(&self) -> Result<usize> {
        let mut n = None;
        for (id, s) in &self.samples {
            if s.candidates.is_empty() {
                continue;
            }
            match n {
                None => n = Some(s.candidates.len()),
                Some(m) if m != s.candidates.len() => {
                    return Err(Error::validation(format!(
                        "scenario sample `{id}` lists {} candidates, others {m}",
                        s.candidates.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(n.unwrap_or(0))
    }
}

/// Builder wrapper that refuses to record two different distributions for
/// the same prompt.
struct Recorder {
    builder: MockTablesBuilder,
    seen: BTreeMap<PromptDigest, Vec<f64>>,
}

impl Recorder {
    fn dist(
        &mut self,
        prompt: &Prompt,
        options: &OptionSet,
        probs: &[f64],
        what: &str,
    ) -> Result<()> {
        let digest = prompt.digest();
        if let Some(prev) = self.seen.get(&digest) {
            if prev.as_slice() != probs {
                return Err(Error::validation(format!(
                    "{what}: prompt {digest} already has distribution {prev:?}"
                )));
            }
            return Ok(());
        }
        self.builder.add_distribution(prompt, options, probs)?;
        self.seen.insert(digest, probs.to_vec());
        Ok(())
    }
}

/// Compiles `scenario` against the dataset using `prompts`. Every dataset
/// sample must have a scenario entry.
pub fn compile_scenario(
    scenario: &Scenario,
    samples: &[Sample],
    prompts: &PromptBuilder,
) -> Result<MockTables> {
    let n = scenario.n_candidates()? as u64;
    let system = prompts
        .library
        .system_prompt(scenario.system_prompt_index)?;
    let mut rec = Recorder {
        builder: MockTablesBuilder::new(scenario.model.clone()),
        seen: BTreeMap::new(),
    };
    for sample in samples {
        let spec = scenario.samples.get(&sample.id).ok_or_else(|| {
            Error::validation(format!("scenario has no entry for sample `{}`", sample.id))
        })?;
        let image = sample.resolve_image()?;
        let input = VqaInput {
            question: &sample.question,
            image: image.as_ref(),
        };
        let opts = &sample.options;
        let id = &sample.id;
        let vqa = |config, sys: &str, one_shot| {
            prompts.build_vqa_prompt(&input, config, Some(sys), one_shot)
        };

        rec.dist(
            &vqa(Configuration::Direct, system, false)?,
            opts,
            &spec.direct,
            id,
        )?;
        rec.dist(
            &vqa(Configuration::QuestionOnly, system, false)?,
            opts,
            &spec.question_only,
            id,
        )?;

        let gen_prompt = prompts.build_context_prompt(&input, Some(system))?;
        for (i, cand) in spec.candidates.iter().enumerate() {
            let seed = scenario.base_seed + i as u64;
            let mut attempts = vec![(seed, cand)];
            if let Some(retry) = &cand.retry {
                attempts.push((seed + n, retry.as_ref()));
            }
            for (seed, c) in attempts {
                rec.builder
                    .add_generate(&gen_prompt, seed, c.context.clone());
                if let Some(dist) = &c.dist {
                    let p = vqa(Configuration::WithContext(&c.context), system, false)?;
                    rec.dist(&p, opts, dist, &format!("{id} candidate {i}"))?;
                }
            }
        }

        if let Some(members) = &spec.ensemble {
            for (j, dist) in members.iter().enumerate() {
                let sys = prompts.library.system_prompt(j)?;
                rec.dist(
                    &vqa(Configuration::Direct, sys, false)?,
                    opts,
                    dist,
                    &format!("{id} ensemble {j}"),
                )?;
            }
        }
        if let Some(dist) = &spec.one_shot {
            rec.dist(&vqa(Configuration::Direct, system, true)?, opts, dist, id)?;
        }
    }
    Ok(rec.builder.build())
}
