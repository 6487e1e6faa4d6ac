//! Causal-effect quantities over answer distributions.
//!
//! Every comparison between two answer distributions is a Jensen-Shannon
//! divergence with a base-2 logarithm, so all effects are in bits and lie in
//! `[0, 1]`. Three scoring configurations feed these functions:
//!
//! | distribution        | inputs                       |
//! |---------------------|------------------------------|
//! | question-only       | question                     |
//! | direct              | image + question             |
//! | context-conditioned | image + context + question   |
//!
//! The natural direct effect (NDE) compares direct against question-only; the
//! total indirect effect (TIE) averages the divergence of each
//! context-conditioned distribution from the single shared direct
//! distribution. Contexts are used only when `tie > nde`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the sum of a distribution.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Normalized probability weights over the answer options of one sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AnswerDistribution(Vec<f64>);

impl AnswerDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::validation(format!(
                "answer distribution needs at least 2 options, got {}",
                probs.len()
            )));
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!(
                    "probability {p} at option {i} is outside [0, 1]"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(AnswerDistribution(probs))
    }

    /// Uniform distribution over `option_count` options.
    pub fn uniform(option_count: usize) -> Result<Self> {
        if option_count == 0 {
            return Err(Error::validation("uniform distribution over zero options"));
        }
        Self::new(vec![1.0 / option_count as f64; option_count])
    }

    pub fn option_count(&self) -> usize {
        self.0.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    /// Smallest option index attaining the maximum probability.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl<'de> Deserialize<'de> for AnswerDistribution {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        // Reports round floats to 9 significant digits, so re-read values are
        // renormalized before validation.
        let sum: f64 = probs.iter().sum();
        let probs = if sum > 0.0 && (sum - 1.0).abs() < 1e-6 {
            probs.iter().map(|p| p / sum).collect()
        } else {
            probs
        };
        AnswerDistribution::new(probs).map_err(serde::de::Error::custom)
    }
}

impl AsRef<[f64]> for AnswerDistribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_same_size(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<()> {
    if p.option_count() != q.option_count() {
        return Err(Error::Dimension {
            expected: p.option_count(),
            found: q.option_count(),
        });
    }
    Ok(())
}

/// Jensen-Shannon divergence in bits.
///
/// `0 * log 0` is taken as zero. The mixture is strictly positive wherever
/// either input is, so no term is infinite and no smoothing is applied.
pub fn jsd(p: &AnswerDistribution, q: &AnswerDistribution) -> Result<f64> {
    check_same_size(p, q)?;
    let mut kl_p = 0.0;
    let mut kl_q = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        let mi = 0.5 * (pi + qi);
        if pi > 0.0 {
            kl_p += pi * (pi / mi).log2();
        }
        if qi > 0.0 {
            kl_q += qi * (qi / mi).log2();
        }
    }
    Ok((0.5 * kl_p + 0.5 * kl_q).clamp(0.0, 1.0))
}

/// Mean of a set of divergences, summed in ascending order so the result
/// does not depend on candidate order.
pub fn mean_bits(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.iter().sum::<f64>() / sorted.len() as f64
}

/// NDE: divergence of the direct distribution from the question-only one.
pub fn compute_nde(direct: &AnswerDistribution, question_only: &AnswerDistribution) -> Result<f64> {
    jsd(direct, question_only)
}

/// Per-candidate indirect effect against the shared direct distribution.
pub fn compute_tie_c(
    context_dist: &AnswerDistribution,
    direct: &AnswerDistribution,
) -> Result<f64> {
    jsd(context_dist, direct)
}

fn mean_divergence_from(
    dists: &[AnswerDistribution],
    reference: &AnswerDistribution,
) -> Result<f64> {
    if dists.is_empty() {
        return Err(Error::validation("effect needs at least one candidate"));
    }
    let terms = dists
        .iter()
        .map(|d| jsd(d, reference))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_bits(&terms))
}

/// TIE: mean divergence of the context-conditioned distributions from the
/// direct distribution.
pub fn compute_tie(
    context_dists: &[AnswerDistribution],
    direct: &AnswerDistribution,
) -> Result<f64> {
    mean_divergence_from(context_dists, direct)
}

/// TE: mean divergence of the context-conditioned distributions from the
/// question-only distribution. Diagnostic only.
pub fn compute_te(
    context_dists: &[AnswerDistribution],
    question_only: &AnswerDistribution,
) -> Result<f64> {
    mean_divergence_from(context_dists, question_only)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    UseCog,
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub verdict: Verdict,
    pub nde: f64,
    pub tie: f64,
}

/// Use the generated contexts only when the indirect effect strictly exceeds
/// the direct one; equality keeps the direct answer.
pub fn decide(nde: f64, tie: f64) -> Result<FilterDecision> {
    for (name, v) in [("nde", nde), ("tie", tie)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::validation(format!(
                "{name} must be finite and non-negative, got {v}"
            )));
        }
    }
    let verdict = if tie > nde {
        Verdict::UseCog
    } else {
        Verdict::Direct
    };
    Ok(FilterDecision { verdict, nde, tie })
}

/// All effect quantities for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEffects {
    pub nde: f64,
    pub tie: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub te: Option<f64>,
    pub tie_c: Vec<f64>,
}

impl CausalEffects {
    /// Computes NDE, TE, per-candidate TIE^c and TIE, with TIE built from the
    /// same TIE^c terms.
    pub fn compute(
        direct: &AnswerDistribution,
        question_only: &AnswerDistribution,
        context_dists: &[AnswerDistribution],
    ) -> Result<Self> {
        if context_dists.is_empty() {
            return Err(Error::validation("effects need at least one candidate"));
        }
        let nde = compute_nde(direct, question_only)?;
        let tie_c = context_dists
            .iter()
            .map(|d| compute_tie_c(d, direct))
            .collect::<Result<Vec<_>>>()?;
        let tie = mean_bits(&tie_c);
        let te = compute_te(context_dists, question_only)?;
        Ok(CausalEffects {
            nde,
            tie,
            te: Some(te),
            tie_c,
        })
    }

    pub fn decision(&self) -> Result<FilterDecision> {
        decide(self.nde, self.tie)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(p: &[f64]) -> AnswerDistribution {
        AnswerDistribution::new(p.to_vec()).unwrap()
    }

    // Independent route: JSD = H(m) - (H(p) + H(q)) / 2 in natural log, then
    // converted to bits.
    fn entropy_form_jsd(p: &[f64], q: &[f64]) -> f64 {
        let h = |v: &[f64]| -> f64 { v.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum() };
        let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
        (h(&m) - 0.5 * (h(p) + h(q))) / std::f64::consts::LN_2
    }

    #[test]
    fn jsd_fixed_values() {
        assert_eq!(jsd(&d(&[0.3, 0.7]), &d(&[0.3, 0.7])).unwrap(), 0.0);
        assert!((jsd(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        // KL((.5,.5)||(.75,.25)) and KL((1,0)||(.75,.25)) by hand.
        let by_hand = 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2())
            + 0.5 * (1.0f64 / 0.75).log2();
        let got = jsd(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap();
        assert!((got - by_hand).abs() < 1e-12);
        assert!((got - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn jsd_rejects_mismatched_sizes() {
        let err = jsd(&d(&[0.5, 0.5]), &d(&[0.2, 0.3, 0.5])).unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn distribution_validation() {
        assert!(AnswerDistribution::new(vec![1.0]).is_err());
        assert!(AnswerDistribution::new(vec![0.6, 0.6]).is_err());
        assert!(AnswerDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(AnswerDistribution::new(vec![f64::NAN, 1.0]).is_err());
        assert!(AnswerDistribution::new(vec![0.5, 0.5 + 1e-10]).is_ok());
    }

    #[test]
    fn argmax_prefers_lower_index() {
        assert_eq!(d(&[0.7, 0.3]).argmax(), 0);
        assert_eq!(d(&[0.5, 0.5]).argmax(), 0);
        assert_eq!(d(&[0.1, 0.2, 0.7]).argmax(), 2);
    }

    #[test]
    fn nde_examples() {
        assert_eq!(compute_nde(&d(&[0.4, 0.6]), &d(&[0.4, 0.6])).unwrap(), 0.0);
        assert!((compute_nde(&d(&[1.0, 0.0]), &d(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        assert!((compute_nde(&d(&[0.5, 0.5]), &d(&[1.0, 0.0])).unwrap() - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn tie_examples() {
        let direct = d(&[1.0, 0.0]);
        assert_eq!(
            compute_tie(&[direct.clone(), direct.clone()], &direct).unwrap(),
            0.0
        );
        let single = d(&[0.5, 0.5]);
        assert_eq!(
            compute_tie(std::slice::from_ref(&single), &direct).unwrap(),
            jsd(&single, &direct).unwrap()
        );
        // JSDs 0.311278 and 1.0 against (1,0).
        let tie = compute_tie(&[d(&[0.5, 0.5]), d(&[0.0, 1.0])], &direct).unwrap();
        assert!((tie - 0.655639).abs() < 1e-6);
        assert!(compute_tie(&[], &direct).is_err());
    }

    #[test]
    fn tie_c_examples() {
        let direct = d(&[1.0, 0.0]);
        assert_eq!(compute_tie_c(&direct, &direct).unwrap(), 0.0);
        assert!((compute_tie_c(&d(&[0.0, 1.0]), &direct).unwrap() - 1.0).abs() < 1e-12);
        assert!((compute_tie_c(&d(&[0.5, 0.5]), &direct).unwrap() - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn te_examples() {
        let qo = d(&[1.0, 0.0]);
        assert_eq!(compute_te(std::slice::from_ref(&qo), &qo).unwrap(), 0.0);
        assert!((compute_te(&[d(&[1.0, 0.0])], &d(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        let te = compute_te(&[d(&[1.0, 0.0]), d(&[0.5, 0.5])], &qo).unwrap();
        assert!((te - 0.155639).abs() < 1e-6);
        assert!(compute_te(&[], &qo).is_err());
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(0.4, 0.3).unwrap().verdict, Verdict::Direct);
        assert_eq!(decide(0.2, 0.35).unwrap().verdict, Verdict::UseCog);
        assert_eq!(decide(0.3, 0.3).unwrap().verdict, Verdict::Direct);
        assert!(decide(f64::NAN, 0.3).is_err());
        assert!(decide(0.1, f64::NAN).is_err());
        assert!(decide(-0.1, 0.3).is_err());
    }

    fn dist_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..=8).prop_flat_map(|m| {
            let raw = proptest::collection::vec(0.0f64..1.0, m);
            (raw.clone(), raw).prop_map(|(a, b)| (normalize(a), normalize(b)))
        })
    }

    fn normalize(mut v: Vec<f64>) -> Vec<f64> {
        // Zero some entries to exercise the 0 log 0 convention.
        if v[0] < 0.2 {
            v[0] = 0.0;
        }
        let s: f64 = v.iter().sum();
        if s == 0.0 {
            let n = v.len();
            return vec![1.0 / n as f64; n];
        }
        v.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn jsd_symmetric_bounded_and_matches_entropy_form((p, q) in dist_strategy()) {
            let (dp, dq) = (d(&p), d(&q));
            let a = jsd(&dp, &dq).unwrap();
            let b = jsd(&dq, &dp).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
            prop_assert!(jsd(&dp, &dp).unwrap() <= 1e-12);
            prop_assert!((a - entropy_form_jsd(&p, &q)).abs() < 1e-9);
        }

        #[test]
        fn tie_is_permutation_invariant(
            (p, q) in dist_strategy(),
            rot in 0usize..3,
        ) {
            let direct = d(&p);
            let mut list = vec![d(&q), d(&p), d(&normalize(q.iter().rev().cloned().collect()))];
            let before = compute_tie(&list, &direct).unwrap();
            let te_before = compute_te(&list, &direct).unwrap();
            list.rotate_left(rot);
            list.swap(0, 2);
            prop_assert_eq!(before.to_bits(), compute_tie(&list, &direct).unwrap().to_bits());
            prop_assert_eq!(te_before.to_bits(), compute_te(&list, &direct).unwrap().to_bits());
        }
    }
}
