//! Candidate aggregation: top-k selection by TIE^c and weighted majority
//! voting, plus the alternative weightings used for ablations.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::effects::AnswerDistribution;
use crate::error::{Error, Result};

/// Relative tolerance under which two vote masses count as tied. Masses are
/// sums of floats, so rescaling every weight can move them by a few ulps.
pub const VOTE_TIE_TOLERANCE: f64 = 1e-12;

/// One generated context with its context-conditioned answer distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Position in the generation order, in `[0, n_candidates)`.
    pub index: usize,
    pub context_text: String,
    pub dist: AnswerDistribution,
    pub tie_c: f64,
    pub argmax_option: usize,
}

impl Candidate {
    pub fn new(index: usize, context_text: String, dist: AnswerDistribution, tie_c: f64) -> Self {
        let argmax_option = dist.argmax();
        Candidate {
            index,
            context_text,
            dist,
            tie_c,
            argmax_option,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Keep the k highest-TIE^c candidates and vote with TIE^c weights.
    TieCTopK,
    /// Weight every candidate by the probability of its own answer.
    LikelihoodWeighted,
    /// Plain majority vote.
    UnweightedVote,
    /// Caller-supplied weights, e.g. image/context similarity.
    ExternalWeights,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tie-c" | "tie_c_top_k" => Ok(Strategy::TieCTopK),
            "likelihood" | "likelihood_weighted" => Ok(Strategy::LikelihoodWeighted),
            "unweighted" | "unweighted_vote" => Ok(Strategy::UnweightedVote),
            "external" | "external_weights" => Ok(Strategy::ExternalWeights),
            other => Err(Error::validation(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub strategy: Strategy,
    pub k: usize,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig {
            strategy: Strategy::TieCTopK,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub chosen_option: usize,
    /// Candidate indices that carried weight into the vote, ascending.
    pub selected_indices: Vec<usize>,
    pub vote_mass: Vec<f64>,
    pub tied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    /// Positions of the kept entries, ascending.
    pub selected: Vec<usize>,
    /// Input values with every non-kept position set to zero.
    pub masked: Vec<f64>,
}

/// Keeps the `min(k, n)` largest values; equal values keep the lower index.
pub fn select_topk(tie_c: &[f64], k: usize) -> Result<TopK> {
    if tie_c.is_empty() {
        return Err(Error::validation(
            "top-k selection over an empty candidate list",
        ));
    }
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if let Some(bad) = tie_c.iter().find(|v| !v.is_finite()) {
        return Err(Error::validation(format!("non-finite TIE^c value {bad}")));
    }
    let mut order: Vec<usize> = (0..tie_c.len()).collect();
    // Stable sort: ties stay in index order.
    order.sort_by(|&a, &b| tie_c[b].partial_cmp(&tie_c[a]).unwrap_or(Ordering::Equal));
    let mut selected: Vec<usize> = order.into_iter().take(k.min(tie_c.len())).collect();
    selected.sort_unstable();

    let mut masked = vec![0.0; tie_c.len()];
    for &i in &selected {
        masked[i] = tie_c[i];
    }
    Ok(TopK { selected, masked })
}

fn masses_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= VOTE_TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Each candidate casts `weights[i]` for its own argmax option; the option with
/// the largest total wins, ties going to the lowest option index.
pub fn weighted_vote(candidates: &[Candidate], weights: &[f64]) -> Result<AggregationResult> {
    if candidates.is_empty() {
        return Err(Error::validation("vote over an empty candidate list"));
    }
    if candidates.len() != weights.len() {
        return Err(Error::validation(format!(
            "{} candidates but {} weights",
            candidates.len(),
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::validation(format!("invalid vote weight {w}")));
    }
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(Error::DegenerateVote);
    }
    let option_count = candidates[0].dist.option_count();
    let mut vote_mass = vec![0.0; option_count];
    for (c, &w) in candidates.iter().zip(weights) {
        if c.dist.option_count() != option_count {
            return Err(Error::Dimension {
                expected: option_count,
                found: c.dist.option_count(),
            });
        }
        vote_mass[c.argmax_option] += w;
    }

    let mut chosen = 0;
    for (i, &m) in vote_mass.iter().enumerate().skip(1) {
        if m > vote_mass[chosen] && !masses_tied(m, vote_mass[chosen]) {
            chosen = i;
        }
    }
    let tied = vote_mass
        .iter()
        .enumerate()
        .any(|(i, &m)| i != chosen && masses_tied(m, vote_mass[chosen]));
    let selected_indices = candidates
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(c, _)| c.index)
        .collect();

    Ok(AggregationResult {
        chosen_option: chosen,
        selected_indices,
        vote_mass,
        tied,
    })
}

/// Dispatches on the configured strategy. `external` is required for
/// [`Strategy::ExternalWeights`] and ignored otherwise.
pub fn aggregate(
    candidates: &[Candidate],
    config: &AggregationConfig,
    external: Option<&[f64]>,
) -> Result<AggregationResult> {
    if candidates.is_empty() {
        return Err(Error::validation(
            "aggregation over an empty candidate list",
        ));
    }
    match (vote_by_strategy(candidates, config, external), candidates) {
        // A lone candidate answers for itself even with zero weight.
        (Err(Error::DegenerateVote), [only]) => Ok(AggregationResult {
            chosen_option: only.argmax_option,
            selected_indices: vec![only.index],
            vote_mass: vec![0.0; only.dist.option_count()],
            tied: false,
        }),
        (result, _) => result,
    }
}

fn vote_by_strategy(
    candidates: &[Candidate],
    config: &AggregationConfig,
    external: Option<&[f64]>,
) -> Result<AggregationResult> {
    match config.strategy {
        Strategy::TieCTopK => {
            let tie_c: Vec<f64> = candidates.iter().map(|c| c.tie_c).collect();
            let top = select_topk(&tie_c, config.k)?;
            let mut result = weighted_vote(candidates, &top.masked)?;
            // Selected set is the top-k set even where a kept TIE^c is zero.
            result.selected_indices = top.selected.iter().map(|&i| candidates[i].index).collect();
            Ok(result)
        }
        Strategy::LikelihoodWeighted => {
            let weights: Vec<f64> = candidates
                .iter()
                .map(|c| c.dist.probs()[c.argmax_option])
                .collect();
            weighted_vote(candidates, &weights)
        }
        Strategy::UnweightedVote => weighted_vote(candidates, &vec![1.0; candidates.len()]),
        Strategy::ExternalWeights => {
            let weights = external.ok_or_else(|| {
                Error::validation("external-weights strategy requires caller-supplied weights")
            })?;
            weighted_vote(candidates, weights)
        }
    }
}
