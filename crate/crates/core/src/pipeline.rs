//! Per-sample orchestration.
//!
//! For one sample the engine scores the direct and question-only
//! configurations, samples `n_candidates` contexts with seeds
//! `base_seed + i`, scores every context-conditioned configuration, and
//! computes NDE, TIE and per-candidate TIE^c. When `tie > nde` the candidates
//! are aggregated; otherwise the direct answer stands.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, AggregationConfig, AggregationResult, Candidate, Strategy};
use crate::backend::{Backend, SamplingParams};
use crate::effects::{AnswerDistribution, CausalEffects, FilterDecision, Verdict};
use crate::error::{Error, Result};
use crate::harness::Sample;
use crate::prompt::{
    Configuration, Prompt, PromptBuilder, PromptLibrary, PromptTemplate, VqaInput,
};
use crate::scoring::{score_option_set, ScoredOptions, TokenScore};

fn default_max_parallel() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_candidates: usize,
    pub aggregation: AggregationConfig,
    pub sampling: SamplingParams,
    pub system_prompt_index: usize,
    pub base_seed: u64,
    /// Execution knob; not echoed so reports match across worker counts.
    #[serde(skip_serializing, default = "default_max_parallel")]
    pub max_parallel: usize,
    pub cache_enabled: bool,
    #[serde(default)]
    pub template: PromptTemplate,
    /// Adds wall-clock fields to outcomes, which makes reports non-reproducible.
    #[serde(skip_serializing, default)]
    pub record_timing: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_candidates: 20,
            aggregation: AggregationConfig::default(),
            sampling: SamplingParams::default(),
            system_prompt_index: 0,
            base_seed: 0,
            max_parallel: default_max_parallel(),
            cache_enabled: true,
            template: PromptTemplate::default(),
            record_timing: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(Error::validation("n_candidates must be at least 1"));
        }
        if self.aggregation.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.max_parallel == 0 {
            return Err(Error::validation("max_parallel must be at least 1"));
        }
        if self.aggregation.k > self.n_candidates {
            log::warn!(
                "k={} exceeds n_candidates={}; every candidate will be kept",
                self.aggregation.k,
                self.n_candidates
            );
        }
        self.sampling.validate()
    }

    /// Single-candidate configuration (Naive-CoG).
    pub fn naive(self) -> Self {
        PipelineConfig {
            n_candidates: 1,
            aggregation: AggregationConfig {
                k: 1,
                ..self.aggregation
            },
            ..self
        }
    }

    /// Fewest surviving candidates for which the contexts are trusted.
    pub fn min_survivors(&self) -> usize {
        self.n_candidates.min(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeUsed {
    CausalCog,
    Direct,
    FallbackDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    CausalCog,
    Direct,
    Ensemble,
    OneShot,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal-cog" | "causal_cog" => Ok(Method::CausalCog),
            "direct" => Ok(Method::Direct),
            "ensemble" => Ok(Method::Ensemble),
            "one-shot" | "one_shot" => Ok(Method::OneShot),
            other => Err(Error::validation(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub generate_calls: usize,
    pub score_calls: usize,
    pub cache_hits: usize,
    pub clamped_logprobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub sample_id: String,
    pub direct_dist: AnswerDistribution,
    pub question_only_dist: AnswerDistribution,
    pub candidates: Vec<Candidate>,
    pub failed_candidates: Vec<CandidateFailure>,
    /// Absent only when no candidate survived.
    pub effects: Option<CausalEffects>,
    pub decision: Option<FilterDecision>,
    /// Aggregation over all surviving candidates, computed whatever the filter
    /// decides so that unfiltered answers can be diagnosed.
    pub aggregation: Option<AggregationResult>,
    pub direct_option: usize,
    pub final_option: usize,
    pub mode_used: ModeUsed,
    pub telemetry: Telemetry,
}

impl SampleOutcome {
    /// Answer of context aggregation without the filter, or the direct answer
    /// when aggregation was impossible.
    pub fn cog_option(&self) -> usize {
        self.aggregation
            .as_ref()
            .map_or(self.direct_option, |a| a.chosen_option)
    }
}

/// Outcome of a single-distribution baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub sample_id: String,
    pub dist: AnswerDistribution,
    pub final_option: usize,
    /// Ensemble members dropped after scoring failures.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    pub telemetry: Telemetry,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    CausalCog(SampleOutcome),
    Baseline(BaselineOutcome),
}

impl Outcome {
    pub fn final_option(&self) -> usize {
        match self {
            Outcome::CausalCog(o) => o.final_option,
            Outcome::Baseline(o) => o.final_option,
        }
    }
}

/// Per-candidate weights for [`Strategy::ExternalWeights`], e.g. image/context
/// similarity from an embedding model.
pub trait CandidateWeigher: Send + Sync {
    fn weights(&self, sample: &Sample, candidates: &[Candidate]) -> Result<Vec<f64>>;
}

/// Counts calls made on behalf of one sample.
struct Counted<'a> {
    inner: &'a dyn Backend,
    generate: AtomicUsize,
    score: AtomicUsize,
}

impl<'a> Counted<'a> {
    fn new(inner: &'a dyn Backend) -> Self {
        Counted {
            inner,
            generate: AtomicUsize::new(0),
            score: AtomicUsize::new(0),
        }
    }

    fn telemetry(&self, cache_hits: usize, clamped: usize, started: Option<Instant>) -> Telemetry {
        Telemetry {
            generate_calls: self.generate.load(Ordering::SeqCst),
            score_calls: self.score.load(Ordering::SeqCst),
            cache_hits,
            clamped_logprobs: clamped,
            elapsed_ms: started.map(|t| t.elapsed().as_secs_f64() * 1e3),
        }
    }
}

impl Backend for Counted<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn generate(&self, prompt: &Prompt, params: &SamplingParams) -> Result<String> {
        self.generate.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, params)
    }

    fn score(&self, prompt: &Prompt, completion: &str) -> Result<Vec<TokenScore>> {
        self.score.fetch_add(1, Ordering::SeqCst);
        self.inner.score(prompt, completion)
    }

    fn probe(&self) -> Result<String> {
        self.inner.probe()
    }
}

/// Elementwise mean of distributions, renormalized.
pub fn average_distributions(dists: &[AnswerDistribution]) -> Result<AnswerDistribution> {
    let first = dists
        .first()
        .ok_or_else(|| Error::validation("cannot average zero distributions"))?;
    let m = first.option_count();
    let mut acc = vec![0.0; m];
    for d in dists {
        if d.option_count() != m {
            return Err(Error::Dimension {
                expected: m,
                found: d.option_count(),
            });
        }
        for (a, p) in acc.iter_mut().zip(d.probs()) {
            *a += p;
        }
    }
    let total: f64 = acc.iter().sum();
    AnswerDistribution::new(acc.iter().map(|a| a / total).collect())
}

pub struct Engine {
    backend: Arc<dyn Backend>,
    config: PipelineConfig,
    prompts: PromptBuilder,
    weigher: Option<Arc<dyn CandidateWeigher>>,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.id())
            .field("config", &self.config)
            .finish()
    }
}

impl Engine {
    pub fn new(backend: Arc<dyn Backend>, config: PipelineConfig) -> Result<Self> {
        Self::with_library(backend, config, PromptLibrary::default())
    }

    pub fn with_library(
        backend: Arc<dyn Backend>,
        config: PipelineConfig,
        library: PromptLibrary,
    ) -> Result<Self> {
        config.validate()?;
        library.system_prompt(config.system_prompt_index)?;
        let prompts = PromptBuilder::new(config.template.clone(), library)?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_parallel)
            .build()
            .map_err(|e| Error::validation(format!("cannot build worker pool: {e}")))?;
        Ok(Engine {
            backend,
            config,
            prompts,
            weigher: None,
            pool,
        })
    }

    pub fn with_weigher(mut self, weigher: Arc<dyn CandidateWeigher>) -> Self {
        self.weigher = Some(weigher);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backend(&self) -> &Arc<dyn Backend> {
        &self.backend
    }

    pub fn prompts(&self) -> &PromptBuilder {
        &self.prompts
    }

    fn system_prompt(&self) -> &str {
        self.prompts
            .library
            .system_prompt(self.config.system_prompt_index)
            .expect("validated in constructor")
    }

    fn started(&self) -> Option<Instant> {
        self.config.record_timing.then(Instant::now)
    }

    /// Runs `method` over every sample on the engine's pool; results keep
    /// dataset order.
    pub fn run_batch(&self, samples: &[Sample], method: Method) -> Vec<Result<Outcome>> {
        self.pool
            .install(|| samples.par_iter().map(|s| self.run(s, method)).collect())
    }

    pub fn run(&self, sample: &Sample, method: Method) -> Result<Outcome> {
        Ok(match method {
            Method::CausalCog => Outcome::CausalCog(self.run_sample(sample)?),
            Method::Direct => Outcome::Baseline(self.run_direct(sample)?),
            Method::Ensemble => Outcome::Baseline(self.run_ensemble(sample)?),
            Method::OneShot => Outcome::Baseline(self.run_oneshot(sample)?),
        })
    }

    pub fn run_sample(&self, sample: &Sample) -> Result<SampleOutcome> {
        self.pool.install(|| self.causal_cog(sample))
    }

    fn causal_cog(&self, sample: &Sample) -> Result<SampleOutcome> {
        let started = self.started();
        sample.validate()?;
        let image = sample.resolve_image()?;
        let input = VqaInput {
            question: &sample.question,
            image: image.as_ref(),
        };
        let system = Some(self.system_prompt());
        let backend = Counted::new(self.backend.as_ref());
        let options = &sample.options;
        let n = self.config.n_candidates;

        let direct_prompt =
            self.prompts
                .build_vqa_prompt(&input, Configuration::Direct, system, false)?;
        let qo_prompt =
            self.prompts
                .build_vqa_prompt(&input, Configuration::QuestionOnly, system, false)?;
        let gen_prompt = self.prompts.build_context_prompt(&input, system)?;

        let (direct, question_only) = rayon::join(
            || score_option_set(&backend, &direct_prompt, options),
            || score_option_set(&backend, &qo_prompt, options),
        );
        let (direct, question_only) = (direct?, question_only?);
        let mut clamped = direct.clamped() + question_only.clamped();

        let generated: Vec<(usize, Result<String>)> = (0..n)
            .into_par_iter()
            .map(|i| (i, self.generate_context(&backend, &gen_prompt, i)))
            .collect();

        let mut failures = Vec::new();
        let mut contexts = Vec::new();
        for (i, r) in generated {
            match r {
                Ok(text) => contexts.push((i, text)),
                Err(e) => failures.push(CandidateFailure {
                    index: i,
                    error: e.to_string(),
                }),
            }
        }

        let (scored, cache_hits) =
            self.score_contexts(&backend, &input, system, &contexts, options);
        let mut survivors = Vec::new();
        for ((i, text), r) in contexts.into_iter().zip(scored) {
            match r {
                Ok(s) => {
                    clamped += s.clamped();
                    survivors.push((i, text, s.dist));
                }
                Err(e) => failures.push(CandidateFailure {
                    index: i,
                    error: e.to_string(),
                }),
            }
        }
        failures.sort_by_key(|f| f.index);

        let direct_option = direct.dist.argmax();
        let mut outcome = SampleOutcome {
            sample_id: sample.id.clone(),
            direct_dist: direct.dist,
            question_only_dist: question_only.dist,
            candidates: Vec::new(),
            failed_candidates: failures,
            effects: None,
            decision: None,
            aggregation: None,
            direct_option,
            final_option: direct_option,
            mode_used: ModeUsed::FallbackDirect,
            telemetry: Telemetry::default(),
        };

        if !survivors.is_empty() {
            let dists: Vec<AnswerDistribution> = survivors.iter().map(|s| s.2.clone()).collect();
            let effects =
                CausalEffects::compute(&outcome.direct_dist, &outcome.question_only_dist, &dists)?;
            let decision = effects.decision()?;
            let candidates: Vec<Candidate> = survivors
                .into_iter()
                .zip(&effects.tie_c)
                .map(|((i, text, dist), &tie_c)| Candidate::new(i, text, dist, tie_c))
                .collect();

            let aggregation = self.aggregate_candidates(sample, &candidates)?;
            let enough = candidates.len() >= self.config.min_survivors();
            match (&aggregation, decision.verdict) {
                _ if !enough => {}
                (_, Verdict::Direct) => outcome.mode_used = ModeUsed::Direct,
                (Some(agg), Verdict::UseCog) => {
                    outcome.mode_used = ModeUsed::CausalCog;
                    outcome.final_option = agg.chosen_option;
                }
                (None, Verdict::UseCog) => {}
            }
            outcome.candidates = candidates;
            outcome.effects = Some(effects);
            outcome.decision = Some(decision);
            outcome.aggregation = aggregation;
        }
        outcome.telemetry = backend.telemetry(cache_hits, clamped, started);
        Ok(outcome)
    }

    /// Empty output or an error earns one retry with seed `base + i + n`.
    fn generate_context(&self, backend: &dyn Backend, prompt: &Prompt, i: usize) -> Result<String> {
        let n = self.config.n_candidates as u64;
        let seed = self.config.base_seed + i as u64;
        let attempt = |seed: u64| -> Result<String> {
            let text = backend.generate(prompt, &self.config.sampling.with_seed(seed))?;
            if text.trim().is_empty() {
                return Err(Error::validation(format!("empty context for seed {seed}")));
            }
            Ok(text)
        };
        attempt(seed).or_else(|first| {
            log::debug!("candidate {i}: {first}; retrying with a new seed");
            attempt(seed + n)
        })
    }

    /// Scores each context-conditioned prompt. With the cache on, prompts with
    /// equal digests are scored once.
    fn score_contexts(
        &self,
        backend: &dyn Backend,
        input: &VqaInput<'_>,
        system: Option<&str>,
        contexts: &[(usize, String)],
        options: &crate::scoring::OptionSet,
    ) -> (Vec<Result<ScoredOptions>>, usize) {
        let prompts: Vec<Result<Prompt>> = contexts
            .iter()
            .map(|(_, text)| {
                self.prompts.build_vqa_prompt(
                    input,
                    Configuration::WithContext(text),
                    system,
                    false,
                )
            })
            .collect();

        // slot[j] = position of the first prompt with the same digest
        let mut slot: Vec<usize> = (0..prompts.len()).collect();
        if self.config.cache_enabled {
            let mut first_seen = HashMap::new();
            for (j, p) in prompts.iter().enumerate() {
                if let Ok(p) = p {
                    slot[j] = *first_seen.entry(p.digest()).or_insert(j);
                }
            }
        }
        let unique: Vec<usize> = (0..prompts.len()).filter(|&j| slot[j] == j).collect();
        let results: Vec<(usize, Result<ScoredOptions>)> = unique
            .par_iter()
            .map(|&j| {
                let r = match &prompts[j] {
                    Ok(p) => score_option_set(backend, p, options),
                    Err(e) => Err(Error::validation(e.to_string())),
                };
                (j, r)
            })
            .collect();
        let by_slot: HashMap<usize, Result<ScoredOptions>> = results.into_iter().collect();
        let cache_hits = (prompts.len() - unique.len()) * options.len();
        let out = slot
            .iter()
            .map(|s| match &by_slot[s] {
                Ok(v) => Ok(v.clone()),
                Err(e) => Err(Error::validation(e.to_string())),
            })
            .collect();
        (out, cache_hits)
    }

    fn aggregate_candidates(
        &self,
        sample: &Sample,
        candidates: &[Candidate],
    ) -> Result<Option<AggregationResult>> {
        let external = match (self.config.aggregation.strategy, &self.weigher) {
            (Strategy::ExternalWeights, Some(w)) => Some(w.weights(sample, candidates)?),
            (Strategy::ExternalWeights, None) => {
                return Err(Error::validation(
                    "external-weights strategy configured without a weigher",
                ))
            }
            _ => None,
        };
        match aggregate(candidates, &self.config.aggregation, external.as_deref()) {
            Ok(r) => Ok(Some(r)),
            Err(Error::DegenerateVote) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn single_distribution(
        &self,
        sample: &Sample,
        system: &str,
        one_shot: bool,
        backend: &Counted<'_>,
    ) -> Result<ScoredOptions> {
        let image = sample.resolve_image()?;
        let input = VqaInput {
            question: &sample.question,
            image: image.as_ref(),
        };
        let prompt =
            self.prompts
                .build_vqa_prompt(&input, Configuration::Direct, Some(system), one_shot)?;
        score_option_set(backend, &prompt, &sample.options)
    }

    /// Direct decoding: argmax of the image+question distribution.
    pub fn run_direct(&self, sample: &Sample) -> Result<BaselineOutcome> {
        self.pool.install(|| self.baseline(sample, false))
    }

    /// Direct decoding with the one-shot exemplar turn prepended.
    pub fn run_oneshot(&self, sample: &Sample) -> Result<BaselineOutcome> {
        self.pool.install(|| self.baseline(sample, true))
    }

    fn baseline(&self, sample: &Sample, one_shot: bool) -> Result<BaselineOutcome> {
        let started = self.started();
        sample.validate()?;
        let backend = Counted::new(self.backend.as_ref());
        let scored = self.single_distribution(sample, self.system_prompt(), one_shot, &backend)?;
        Ok(BaselineOutcome {
            sample_id: sample.id.clone(),
            final_option: scored.dist.argmax(),
            telemetry: backend.telemetry(0, scored.clamped(), started),
            dist: scored.dist,
            dropped: Vec::new(),
        })
    }

    /// Averages the direct distributions under every library system prompt.
    /// Failed members are dropped; at least two must survive.
    pub fn run_ensemble(&self, sample: &Sample) -> Result<BaselineOutcome> {
        self.pool.install(|| {
            let started = self.started();
            sample.validate()?;
            let backend = Counted::new(self.backend.as_ref());
            let results: Vec<Result<ScoredOptions>> = self
                .prompts
                .library
                .system_prompts()
                .par_iter()
                .map(|sys| self.single_distribution(sample, sys, false, &backend))
                .collect();
            let mut dists = Vec::new();
            let mut dropped = Vec::new();
            let mut clamped = 0;
            let mut last_err = None;
            for (j, r) in results.into_iter().enumerate() {
                match r {
                    Ok(s) => {
                        clamped += s.clamped();
                        dists.push(s.dist);
                    }
                    Err(e) => {
                        dropped.push(format!("system prompt {j}: {e}"));
                        last_err = Some(e);
                    }
                }
            }
            if dists.len() < 2 {
                return Err(last_err.unwrap_or_else(|| {
                    Error::validation("ensemble needs at least two scored system prompts")
                }));
            }
            let dist = average_distributions(&dists)?;
            Ok(BaselineOutcome {
                sample_id: sample.id.clone(),
                final_option: dist.argmax(),
                dist,
                dropped,
                telemetry: backend.telemetry(0, clamped, started),
            })
        })
    }
}
