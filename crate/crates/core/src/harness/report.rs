//! Evaluation reports and W2R/R2W diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backend::BackendDescriptor;
use crate::effects::AnswerDistribution;
use crate::error::{Error, Result};
use crate::pipeline::{ModeUsed, PipelineConfig, Telemetry};

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub w2r: usize,
    pub r2w: usize,
    pub both_right: usize,
    pub both_wrong: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.w2r + self.r2w + self.both_right + self.both_wrong
    }

    fn add(&mut self, class: Flip) {
        match class {
            Flip::W2r => self.w2r += 1,
            Flip::R2w => self.r2w += 1,
            Flip::BothRight => self.both_right += 1,
            Flip::BothWrong => self.both_wrong += 1,
        }
    }

    /// Counts with the roles of the two answers exchanged.
    pub fn swapped(&self) -> Counts {
        Counts {
            w2r: self.r2w,
            r2w: self.w2r,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flip {
    W2r,
    R2w,
    BothRight,
    BothWrong,
}

impl Flip {
    pub fn classify(before_right: bool, after_right: bool) -> Flip {
        match (before_right, after_right) {
            (false, true) => Flip::W2r,
            (true, false) => Flip::R2w,
            (true, true) => Flip::BothRight,
            (false, false) => Flip::BothWrong,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratum {
    TieGtNde,
    TieLeNde,
    /// No surviving candidates, hence no effects.
    NoEffects,
}

impl Stratum {
    pub fn of(nde: Option<f64>, tie: Option<f64>) -> Stratum {
        match (nde, tie) {
            (Some(n), Some(t)) if t > n => Stratum::TieGtNde,
            (Some(_), Some(_)) => Stratum::TieLeNde,
            _ => Stratum::NoEffects,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratifiedCounts {
    pub tie_gt_nde: Counts,
    pub tie_le_nde: Counts,
    pub no_effects: Counts,
    pub total: Counts,
}

impl StratifiedCounts {
    pub fn add(&mut self, stratum: Stratum, class: Flip) {
        match stratum {
            Stratum::TieGtNde => self.tie_gt_nde.add(class),
            Stratum::TieLeNde => self.tie_le_nde.add(class),
            Stratum::NoEffects => self.no_effects.add(class),
        }
        self.total.add(class);
    }

    pub fn get(&self, stratum: Stratum) -> &Counts {
        match stratum {
            Stratum::TieGtNde => &self.tie_gt_nde,
            Stratum::TieLeNde => &self.tie_le_nde,
            Stratum::NoEffects => &self.no_effects,
        }
    }

    pub fn swapped(&self) -> StratifiedCounts {
        StratifiedCounts {
            tie_gt_nde: self.tie_gt_nde.swapped(),
            tie_le_nde: self.tie_le_nde.swapped(),
            no_effects: self.no_effects.swapped(),
            total: self.total.swapped(),
        }
    }

    /// Plain-text table, one row per stratum.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>6} {:>11} {:>11}\n",
            "stratum", "w2r", "r2w", "both_right", "both_wrong"
        );
        for (name, c) in [
            ("tie>nde", &self.tie_gt_nde),
            ("tie<=nde", &self.tie_le_nde),
            ("no_effects", &self.no_effects),
            ("total", &self.total),
        ] {
            out.push_str(&format!(
                "{:<12} {:>6} {:>6} {:>11} {:>11}\n",
                name, c.w2r, c.r2w, c.both_right, c.both_wrong
            ));
        }
        out
    }
}

/// 20 uniform bins over [0, 1] bits; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histograms {
    pub bins: usize,
    pub nde: Vec<usize>,
    pub tie: Vec<usize>,
}

impl Default for Histograms {
    fn default() -> Self {
        Histograms {
            bins: HISTOGRAM_BINS,
            nde: vec![0; HISTOGRAM_BINS],
            tie: vec![0; HISTOGRAM_BINS],
        }
    }
}

pub fn bin_index(value: f64, bins: usize) -> usize {
    ((value.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

impl Histograms {
    pub fn record(&mut self, nde: f64, tie: f64) {
        self.nde[bin_index(nde, self.bins)] += 1;
        self.tie[bin_index(tie, self.bins)] += 1;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub index: usize,
    pub answer: usize,
    pub tie_c: f64,
}

/// One line of `per_sample`. Method-specific fields are omitted when absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub gold_index: Option<usize>,
    pub final_option: Option<usize>,
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_used: Option<ModeUsed>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_option: Option<usize>,
    /// Aggregated answer before the filter is applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cog_option: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tie: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub te: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct_dist: Option<AnswerDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_only_dist: Option<AnswerDistribution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<AnswerDistribution>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub candidates: Vec<CandidateSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_candidates: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_indices: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_mass: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_tied: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub telemetry: Option<Telemetry>,
}

impl SampleRecord {
    pub fn stratum(&self) -> Stratum {
        Stratum::of(self.nde, self.tie)
    }

    pub fn is_scored(&self) -> bool {
        self.error.is_none() && self.gold_index.is_some() && self.final_option.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEcho {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub descriptor: Option<BackendDescriptor>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub generate_calls: usize,
    pub score_calls: usize,
    pub cache_hits: usize,
    pub clamped_logprobs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// None when no sample carries a gold label.
    pub accuracy: Option<f64>,
    pub n_samples: usize,
    pub n_scored: usize,
    pub n_correct: usize,
    pub n_errors: usize,
    /// Fraction of processed samples answered by context aggregation.
    pub cog_rate: f64,
    /// Direct answer versus unfiltered aggregation, for Causal-CoG runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<StratifiedCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histograms: Option<Histograms>,
    pub config: PipelineConfig,
    pub backend: BackendEcho,
    pub totals: Totals,
    pub per_sample: Vec<SampleRecord>,
}

impl EvalReport {
    pub fn from_file(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_canonical_json(&self) -> Result<String> {
        canonical_json(self)
    }

    /// `accuracy=<x> n=<n> cog_rate=<f>`
    pub fn summary_line(&self) -> String {
        let acc = self
            .accuracy
            .map_or_else(|| "nan".to_string(), |a| format!("{a:.4}"));
        format!(
            "accuracy={acc} n={} cog_rate={:.4}",
            self.n_scored, self.cog_rate
        )
    }
}

fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

fn round_value(v: &mut serde_json::Value) {
    use serde_json::Value;
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n
                .as_f64()
                .map(round_sig)
                .and_then(serde_json::Number::from_f64)
            {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

/// Sorted keys, floats rounded to 9 significant digits, pretty-printed with
/// a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    round_value(&mut v);
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub class: Flip,
    pub stratum: Stratum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub report_method: String,
    pub baseline_method: String,
    pub counts: StratifiedCounts,
    pub pairs: Vec<PairRecord>,
    /// Samples without a gold label or errored in either report.
    pub skipped: Vec<String>,
}

/// Classifies each sample by the baseline's correctness versus the report's.
/// Strata come from the report's effects, or the baseline's when the report
/// has none. Pairs follow the report's sample order.
pub fn diagnose(report: &EvalReport, baseline: &EvalReport) -> Result<Diagnostics> {
    let by_id: BTreeMap<&str, &SampleRecord> = baseline
        .per_sample
        .iter()
        .map(|r| (r.id.as_str(), r))
        .collect();
    if by_id.len() != report.per_sample.len()
        || report
            .per_sample
            .iter()
            .any(|r| !by_id.contains_key(r.id.as_str()))
    {
        let missing: Vec<&str> = report
            .per_sample
            .iter()
            .map(|r| r.id.as_str())
            .filter(|id| !by_id.contains_key(id))
            .take(5)
            .collect();
        return Err(Error::validation(format!(
            "reports cover different sample ids ({} vs {} samples; unmatched e.g. {:?})",
            report.per_sample.len(),
            baseline.per_sample.len(),
            missing
        )));
    }

    let mut counts = StratifiedCounts::default();
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for rec in &report.per_sample {
        let base = by_id[rec.id.as_str()];
        if !rec.is_scored() || !base.is_scored() {
            skipped.push(rec.id.clone());
            continue;
        }
        if rec.gold_index != base.gold_index {
            return Err(Error::validation(format!(
                "sample `{}` has different gold labels in the two reports",
                rec.id
            )));
        }
        let class = Flip::classify(base.correct == Some(true), rec.correct == Some(true));
        let stratum = match rec.stratum() {
            Stratum::NoEffects => base.stratum(),
            s => s,
        };
        counts.add(stratum, class);
        pairs.push(PairRecord {
            id: rec.id.clone(),
            class,
            stratum,
        });
    }
    Ok(Diagnostics {
        report_method: report.method.clone(),
        baseline_method: baseline.method.clone(),
        counts,
        pairs,
        skipped,
    })
}
