//! Batch evaluation over JSONL datasets.

mod dataset;
mod report;

pub use dataset::{load_dataset, parse_dataset, Sample};
pub use report::{
    bin_index, canonical_json, diagnose, BackendEcho, CandidateSummary, Counts, Diagnostics,
    EvalReport, Flip, Histograms, PairRecord, SampleRecord, StratifiedCounts, Stratum, Totals,
    HISTOGRAM_BINS,
};

use std::time::Instant;

use crate::backend::BackendDescriptor;
use crate::pipeline::{BaselineOutcome, Engine, Method, ModeUsed, Outcome, SampleOutcome};

/// Report label: `causal_cog`, `naive_cog` (one candidate), `direct`,
/// `ensemble` or `one_shot`.
pub fn method_label(method: Method, n_candidates: usize) -> &'static str {
    match method {
        Method::CausalCog if n_candidates == 1 => "naive_cog",
        Method::CausalCog => "causal_cog",
        Method::Direct => "direct",
        Method::Ensemble => "ensemble",
        Method::OneShot => "one_shot",
    }
}

fn causal_record(sample: &Sample, o: &SampleOutcome) -> SampleRecord {
    SampleRecord {
        id: sample.id.clone(),
        gold_index: sample.gold_index,
        final_option: Some(o.final_option),
        correct: sample.gold_index.map(|g| g == o.final_option),
        mode_used: Some(o.mode_used),
        direct_option: Some(o.direct_option),
        cog_option: o.aggregation.as_ref().map(|a| a.chosen_option),
        nde: o.effects.as_ref().map(|e| e.nde),
        tie: o.effects.as_ref().map(|e| e.tie),
        te: o.effects.as_ref().and_then(|e| e.te),
        direct_dist: Some(o.direct_dist.clone()),
        question_only_dist: Some(o.question_only_dist.clone()),
        candidates: o
            .candidates
            .iter()
            .map(|c| CandidateSummary {
                index: c.index,
                answer: c.argmax_option,
                tie_c: c.tie_c,
            })
            .collect(),
        failed_candidates: o.failed_candidates.iter().map(|f| f.index).collect(),
        selected_indices: o.aggregation.as_ref().map(|a| a.selected_indices.clone()),
        vote_mass: o.aggregation.as_ref().map(|a| a.vote_mass.clone()),
        vote_tied: o.aggregation.as_ref().map(|a| a.tied),
        telemetry: Some(o.telemetry.clone()),
        ..Default::default()
    }
}

fn baseline_record(sample: &Sample, o: &BaselineOutcome) -> SampleRecord {
    SampleRecord {
        id: sample.id.clone(),
        gold_index: sample.gold_index,
        final_option: Some(o.final_option),
        correct: sample.gold_index.map(|g| g == o.final_option),
        dist: Some(o.dist.clone()),
        dropped: o.dropped.clone(),
        telemetry: Some(o.telemetry.clone()),
        ..Default::default()
    }
}

/// Runs `method` over `samples` and assembles the report. Failed samples are
/// recorded with their error and excluded from accuracy.
pub fn evaluate(
    samples: &[Sample],
    engine: &Engine,
    method: Method,
    descriptor: Option<&BackendDescriptor>,
) -> EvalReport {
    let started = Instant::now();
    let outcomes = engine.run_batch(samples, method);
    let config = engine.config().clone();

    let mut per_sample = Vec::with_capacity(samples.len());
    let mut counts = StratifiedCounts::default();
    let mut histograms = Histograms::default();
    let mut totals = Totals::default();
    let mut cog_used = 0;
    for (sample, outcome) in samples.iter().zip(outcomes) {
        let record = match &outcome {
            Ok(Outcome::CausalCog(o)) => {
                if o.mode_used == ModeUsed::CausalCog {
                    cog_used += 1;
                }
                if let Some(e) = &o.effects {
                    histograms.record(e.nde, e.tie);
                }
                causal_record(sample, o)
            }
            Ok(Outcome::Baseline(o)) => baseline_record(sample, o),
            Err(e) => {
                log::warn!("sample `{}` failed: {e}", sample.id);
                SampleRecord {
                    id: sample.id.clone(),
                    gold_index: sample.gold_index,
                    error: Some(e.to_string()),
                    ..Default::default()
                }
            }
        };
        if let Some(t) = &record.telemetry {
            totals.generate_calls += t.generate_calls;
            totals.score_calls += t.score_calls;
            totals.cache_hits += t.cache_hits;
            totals.clamped_logprobs += t.clamped_logprobs;
        }
        if let (true, Some(gold), Some(direct)) =
            (record.is_scored(), record.gold_index, record.direct_option)
        {
            let cog = record.cog_option.unwrap_or(direct);
            counts.add(
                record.stratum(),
                Flip::classify(direct == gold, cog == gold),
            );
        }
        per_sample.push(record);
    }

    let n_errors = per_sample.iter().filter(|r| r.error.is_some()).count();
    let n_scored = per_sample.iter().filter(|r| r.is_scored()).count();
    let n_correct = per_sample
        .iter()
        .filter(|r| r.is_scored() && r.correct == Some(true))
        .count();
    let processed = samples.len() - n_errors;
    let is_causal = method == Method::CausalCog;
    if config.record_timing {
        totals.wall_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }

    EvalReport {
        method: method_label(method, config.n_candidates).to_string(),
        accuracy: (n_scored > 0).then(|| n_correct as f64 / n_scored as f64),
        n_samples: samples.len(),
        n_scored,
        n_correct,
        n_errors,
        cog_rate: if processed > 0 {
            cog_used as f64 / processed as f64
        } else {
            0.0
        },
        counts: is_causal.then_some(counts),
        histograms: is_causal.then_some(histograms),
        config,
        backend: BackendEcho {
            id: engine.backend().id(),
            descriptor: descriptor.cloned(),
        },
        totals,
        per_sample,
    }
}
