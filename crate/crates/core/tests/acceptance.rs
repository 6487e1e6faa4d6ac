//! Acceptance suite. One PASS/FAIL line per criterion; exits non-zero when any
//! criterion fails. Run with `cargo test -p causal-cog --test acceptance`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use causal_cog::aggregation::{aggregate, AggregationConfig, Candidate, Strategy};
use causal_cog::backend::scenario::{compile_scenario, CandidateSpec, SampleScenario, Scenario};
use causal_cog::backend::{
    open_backend, BackendDescriptor, BackendKind, MockBackend, MockTablesBuilder,
};
use causal_cog::effects::{
    compute_tie, compute_tie_c, jsd, mean_bits, AnswerDistribution, CausalEffects,
};
use causal_cog::harness::{diagnose, evaluate, load_dataset, Sample, Stratum};
use causal_cog::pipeline::{Engine, Method, ModeUsed, PipelineConfig};
use causal_cog::prompt::{Configuration, ImageData, ImageRef, PromptBuilder, VqaInput};
use causal_cog::scoring::{
    normalize_mean_logs, option_likelihood, score_option_set, OptionSet, TokenScore,
};
use causal_cog::Error;

const JSD_PAIRS: usize = 10_000;
const JSD_TOL: f64 = 1e-9;
const JSD_RANGE_SLACK: f64 = 1e-12;
const JSD_SELF_TOL: f64 = 1e-12;
const JSD_BUDGET: Duration = Duration::from_secs(5);
const EFFECT_FIXTURES: usize = 1_000;
const EFFECT_TOL: f64 = 1e-9;
const AGG_INSTANCES_PER_SHAPE: usize = 32;
const AGG_MIN_INSTANCES: usize = 1_000;
const SCALING_TRIALS: usize = 1_000;
const SCORING_TOL: f64 = 1e-9;
const E2E_BUDGET: Duration = Duration::from_secs(10);
const REDUCTION_SAMPLES: usize = 200;
const REDUCTION_TOL: f64 = 1e-12;

type Outcome = std::result::Result<String, String>;
type Criterion = fn() -> Outcome;

fn check(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- oracles

/// Direct summation of the two KL terms against the midpoint, natural log
/// converted to bits at the end.
fn oracle_jsd(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let s = a + b;
        if a > 0.0 {
            total += 0.5 * a * (2.0 * a / s).ln();
        }
        if b > 0.0 {
            total += 0.5 * b * (2.0 * b / s).ln();
        }
    }
    total / std::f64::consts::LN_2
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn random_dist(rng: &mut ChaCha8Rng, m: usize, sparse: bool) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..m)
            .map(|_| {
                if sparse && rng.gen_bool(0.25) {
                    0.0
                } else {
                    rng.gen::<f64>()
                }
            })
            .collect();
        if sparse && rng.gen_bool(0.05) {
            v = vec![0.0; m];
            v[rng.gen_range(0..m)] = 1.0;
        }
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            return v.iter().map(|x| x / s).collect();
        }
    }
}

fn positive_dist(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn dist(p: &[f64]) -> AnswerDistribution {
    AnswerDistribution::new(p.to_vec()).unwrap()
}

/// Distribution over `m` options whose unique argmax is `answer`.
fn peaked(answer: usize, m: usize) -> AnswerDistribution {
    let rest = 0.4 / (m - 1) as f64;
    dist(
        &(0..m)
            .map(|j| if j == answer { 0.6 } else { rest })
            .collect::<Vec<_>>(),
    )
}

// ---------------------------------------------------------------- criteria

fn jsd_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..JSD_PAIRS {
        let m = rng.gen_range(2..=8);
        let sparse = i % 2 == 0;
        let (p, q) = (
            random_dist(&mut rng, m, sparse),
            random_dist(&mut rng, m, sparse),
        );
        let (dp, dq) = (dist(&p), dist(&q));
        let pq = jsd(&dp, &dq).map_err(|e| e.to_string())?;
        let qp = jsd(&dq, &dp).map_err(|e| e.to_string())?;
        check(pq.to_bits() == qp.to_bits(), || {
            format!("asymmetric on {p:?} {q:?}: {pq} vs {qp}")
        })?;
        check((0.0..=1.0 + JSD_RANGE_SLACK).contains(&pq), || {
            format!("out of range: {pq}")
        })?;
        let pp = jsd(&dp, &dp).map_err(|e| e.to_string())?;
        check(pp <= JSD_SELF_TOL, || format!("jsd(P,P) = {pp} for {p:?}"))?;
        let err = (pq - oracle_jsd(&p, &q)).abs();
        worst = worst.max(err);
        check(err <= JSD_TOL, || {
            format!("oracle mismatch {err:e} on {p:?} {q:?}")
        })?;
    }
    let elapsed = started.elapsed();
    check(elapsed < JSD_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{JSD_PAIRS} pairs, max |err| {worst:.1e}, {elapsed:.2?}"
    ))
}

fn effects_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..EFFECT_FIXTURES {
        let m = rng.gen_range(2..=8);
        let n = rng.gen_range(1..=10);
        let direct = random_dist(&mut rng, m, true);
        let q_only = random_dist(&mut rng, m, true);
        let ctx: Vec<Vec<f64>> = (0..n).map(|_| random_dist(&mut rng, m, true)).collect();
        let ctx_d: Vec<AnswerDistribution> = ctx.iter().map(|c| dist(c)).collect();

        let fx = CausalEffects::compute(&dist(&direct), &dist(&q_only), &ctx_d)
            .map_err(|e| e.to_string())?;
        let tie_c: Vec<f64> = ctx.iter().map(|c| oracle_jsd(c, &direct)).collect();
        let expected_nde = oracle_jsd(&direct, &q_only);
        let expected_tie = tie_c.iter().sum::<f64>() / n as f64;
        let expected_te = ctx.iter().map(|c| oracle_jsd(c, &q_only)).sum::<f64>() / n as f64;
        let mut errs = vec![
            (fx.nde - expected_nde).abs(),
            (fx.tie - expected_tie).abs(),
            (fx.te.unwrap() - expected_te).abs(),
        ];
        errs.extend(fx.tie_c.iter().zip(&tie_c).map(|(a, b)| (a - b).abs()));
        let err = errs.into_iter().fold(0.0, f64::max);
        worst = worst.max(err);
        check(err <= EFFECT_TOL, || format!("oracle mismatch {err:e}"))?;

        // TIE is built from exactly the per-candidate terms.
        let d = dist(&direct);
        let recomputed: Vec<f64> = ctx_d
            .iter()
            .map(|c| compute_tie_c(c, &d).unwrap())
            .collect();
        check(recomputed == fx.tie_c, || {
            "tie_c differs from compute_tie_c".into()
        })?;
        let tie = compute_tie(&ctx_d, &d).map_err(|e| e.to_string())?;
        check(
            tie.to_bits() == fx.tie.to_bits() && tie.to_bits() == mean_bits(&fx.tie_c).to_bits(),
            || format!("tie {} != mean of tie_c {}", fx.tie, mean_bits(&fx.tie_c)),
        )?;
    }
    Ok(format!(
        "{EFFECT_FIXTURES} fixtures, max |err| {worst:.1e}, TIE == mean(TIE^c) bitwise"
    ))
}

/// Enumeration oracle over integer weights. The top-k set is the unique
/// subset of size min(k, n) in which every member beats every non-member,
/// equal weights ordered by index.
fn oracle_topk(w: &[u32], k: usize) -> Vec<usize> {
    let n = w.len();
    let size = k.min(n);
    let beats = |i: usize, j: usize| w[i] > w[j] || (w[i] == w[j] && i < j);
    let mut found = Vec::new();
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != size {
            continue;
        }
        let inside = |i: usize| mask & (1 << i) != 0;
        let ok = (0..n).all(|i| !inside(i) || (0..n).all(|j| inside(j) || beats(i, j)));
        if ok {
            found.push((0..n).filter(|&i| inside(i)).collect::<Vec<_>>());
        }
    }
    assert_eq!(found.len(), 1, "top-k oracle must be unique");
    found.pop().unwrap()
}

/// `Ok((chosen, tied))`, or `Err(())` for a degenerate vote.
fn oracle_vote(
    answers: &[usize],
    weights: &[u32],
    m: usize,
) -> std::result::Result<(usize, bool), ()> {
    let mut mass = vec![0u32; m];
    for (&a, &w) in answers.iter().zip(weights) {
        mass[a] += w;
    }
    let top = *mass.iter().max().unwrap();
    if top == 0 {
        return Err(());
    }
    let winners: Vec<usize> = (0..m).filter(|&o| mass[o] == top).collect();
    Ok((winners[0], winners.len() > 1))
}

fn aggregation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut instances, mut topk_ties, mut vote_ties, mut degenerate) = (0, 0, 0, 0);
    for n in 1..=6usize {
        for m in 2..=4usize {
            for k in 1..=n {
                for _ in 0..AGG_INSTANCES_PER_SHAPE {
                    instances += 1;
                    let answers: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
                    let w: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=4)).collect();
                    let cands: Vec<Candidate> = (0..n)
                        .map(|i| {
                            Candidate::new(
                                i,
                                String::new(),
                                peaked(answers[i], m),
                                w[i] as f64 * 0.1,
                            )
                        })
                        .collect();

                    let selected = oracle_topk(&w, k);
                    let mut masked = vec![0u32; n];
                    for &i in &selected {
                        masked[i] = w[i];
                    }
                    let sel_w: Vec<u32> = selected.iter().map(|&i| w[i]).collect();
                    if sel_w.len() < n
                        && sel_w.iter().any(|x| {
                            w.iter()
                                .enumerate()
                                .any(|(j, y)| y == x && !selected.contains(&j))
                        })
                    {
                        topk_ties += 1;
                    }
                    let expected = match oracle_vote(&answers, &masked, m) {
                        Ok(r) => Ok(r),
                        Err(()) if n == 1 => Ok((answers[0], false)),
                        Err(()) => Err(()),
                    };
                    let cfg = AggregationConfig {
                        strategy: Strategy::TieCTopK,
                        k,
                    };
                    let got = aggregate(&cands, &cfg, None);
                    match (&expected, &got) {
                        (Ok((opt, tied)), Ok(r)) => {
                            if *tied {
                                vote_ties += 1;
                            }
                            check(r.chosen_option == *opt && r.tied == *tied && r.selected_indices == selected, || {
                                format!("n={n} m={m} k={k} answers={answers:?} w={w:?}: expected {opt} tied={tied} sel={selected:?}, got {r:?}")
                            })?;
                        }
                        (Err(()), Err(Error::DegenerateVote)) => degenerate += 1,
                        _ => {
                            return Err(format!(
                                "n={n} m={m} k={k} answers={answers:?} w={w:?}: expected {expected:?}, got {got:?}"
                            ))
                        }
                    }

                    let expected = oracle_vote(&answers, &vec![1; n], m).unwrap();
                    let cfg = AggregationConfig {
                        strategy: Strategy::UnweightedVote,
                        k,
                    };
                    let r = aggregate(&cands, &cfg, None).map_err(|e| e.to_string())?;
                    check((r.chosen_option, r.tied) == expected, || {
                        format!("unweighted answers={answers:?}: expected {expected:?}, got {r:?}")
                    })?;
                }
            }
        }
    }
    check(instances >= AGG_MIN_INSTANCES, || {
        format!("only {instances} instances")
    })?;
    check(topk_ties > 0 && vote_ties > 0 && degenerate > 0, || {
        "tie and degenerate cases not exercised".into()
    })?;
    Ok(format!(
        "{instances} instances, {topk_ties} top-k boundary ties, {vote_ties} vote ties, {degenerate} degenerate"
    ))
}

fn argmax_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut vote_ties = 0;
    for _ in 0..SCALING_TRIALS {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(2..=5);
        let k = rng.gen_range(1..=n);
        let mut tie_c: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            let v = if i > 0 && rng.gen_bool(0.3) {
                tie_c[rng.gen_range(0..i)]
            } else {
                rng.gen::<f64>()
            };
            tie_c.push(v);
        }
        let answers: Vec<usize> = (0..n).map(|_| rng.gen_range(0..m)).collect();
        let c = 10f64.powf(rng.gen_range(-6.0..6.0));
        let build = |scale: f64| -> Vec<Candidate> {
            (0..n)
                .map(|i| Candidate::new(i, String::new(), peaked(answers[i], m), tie_c[i] * scale))
                .collect()
        };
        let cfg = AggregationConfig {
            strategy: Strategy::TieCTopK,
            k,
        };
        let base = aggregate(&build(1.0), &cfg, None).map_err(|e| e.to_string())?;
        let scaled = aggregate(&build(c), &cfg, None).map_err(|e| e.to_string())?;
        if base.tied {
            vote_ties += 1;
        }
        check(
            base.chosen_option == scaled.chosen_option
                && base.selected_indices == scaled.selected_indices
                && base.tied == scaled.tied,
            || format!("c={c} tie_c={tie_c:?} answers={answers:?}: {base:?} vs {scaled:?}"),
        )?;
    }
    Ok(format!(
        "{SCALING_TRIALS} trials, c in [1e-6, 1e6], {vote_ties} with tied votes"
    ))
}

fn scoring_fixtures() -> Outcome {
    let tok =
        |lps: &[f64]| -> Vec<TokenScore> { lps.iter().map(|&l| TokenScore::new("t", l)).collect() };
    let mut worst = 0.0f64;
    let mut close = |got: f64, want: f64, what: &str| -> std::result::Result<(), String> {
        let err = (got - want).abs();
        worst = worst.max(err);
        check(err <= SCORING_TOL, || {
            format!("{what}: got {got}, want {want}")
        })
    };

    close(
        option_likelihood(&tok(&[0.0])).unwrap().likelihood,
        1.0,
        "[0.0]",
    )?;
    let l = option_likelihood(&tok(&[-0.5, -1.5])).unwrap();
    close(l.likelihood, 1.0 / std::f64::consts::E, "[-0.5, -1.5]")?;
    close(l.mean_log, -1.0, "[-0.5, -1.5] mean log")?;
    check(option_likelihood(&[]).is_err(), || {
        "empty token list accepted".into()
    })?;

    let from_raw =
        |raw: &[f64]| normalize_mean_logs(&raw.iter().map(|r| r.ln()).collect::<Vec<_>>()).unwrap();
    for (raw, want) in [
        (vec![0.2, 0.2], vec![0.5, 0.5]),
        (vec![0.6, 0.2, 0.2], vec![0.6, 0.2, 0.2]),
    ] {
        let d = from_raw(&raw);
        for (g, w) in d.probs().iter().zip(&want) {
            close(*g, *w, &format!("raw {raw:?}"))?;
        }
    }
    let d = normalize_mean_logs(&[-1.0, -2.0]).unwrap();
    let logistic = 1.0 / (1.0 + (-1.0f64).exp());
    close(d.probs()[0], logistic, "mean logs [-1, -2] first")?;
    close(d.probs()[1], 1.0 - logistic, "mean logs [-1, -2] second")?;

    // Through a backend: multi-token options are length-normalized.
    let image = ImageData::new(vec![1u8, 2, 3]);
    let prompts = PromptBuilder::default();
    let prompt = prompts
        .build_vqa_prompt(
            &VqaInput {
                question: "Which?",
                image: Some(&image),
            },
            Configuration::Direct,
            None,
            false,
        )
        .unwrap();
    let options = OptionSet::new(vec!["red ball".into(), "blue".into()]).unwrap();
    let mut b = MockTablesBuilder::new("fixture");
    b.add_score(
        &prompt,
        "red ball",
        vec!["red".into(), " ball".into()],
        vec![-0.5, -1.5],
    );
    b.add_score(&prompt, "blue", vec!["blue".into()], vec![-2.0]);
    let scored = score_option_set(&MockBackend::new(b.build()), &prompt, &options)
        .map_err(|e| e.to_string())?;
    close(scored.dist.probs()[0], logistic, "scored option 0")?;
    close(scored.dist.probs()[1], 1.0 - logistic, "scored option 1")?;
    Ok(format!("max |err| {worst:.1e}"))
}

fn demo_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo")
}

fn demo_config(max_parallel: usize) -> PipelineConfig {
    PipelineConfig {
        n_candidates: 5,
        aggregation: AggregationConfig {
            strategy: Strategy::TieCTopK,
            k: 3,
        },
        max_parallel,
        ..Default::default()
    }
}

fn mock_end_to_end() -> Outcome {
    let started = Instant::now();
    let samples = load_dataset(demo_dir().join("dataset.jsonl")).map_err(|e| e.to_string())?;
    let descriptor = BackendDescriptor::mock(demo_dir().join("mock_tables.json"));
    let run = |method: Method, max_parallel: usize| {
        let backend = open_backend(&descriptor).unwrap();
        let engine = Engine::new(backend, demo_config(max_parallel)).unwrap();
        evaluate(&samples, &engine, method, Some(&descriptor))
    };

    let direct = run(Method::Direct, 4);
    let cog = run(Method::CausalCog, 4);
    check((direct.n_correct, direct.n_scored) == (2, 6), || {
        format!("direct {}/{}", direct.n_correct, direct.n_scored)
    })?;
    check((cog.n_correct, cog.n_scored) == (5, 6), || {
        format!("causal-cog {}/{}", cog.n_correct, cog.n_scored)
    })?;
    let diag = diagnose(&cog, &direct).map_err(|e| e.to_string())?;
    let total = diag.counts.total;
    let in_stratum = diag.counts.get(Stratum::TieGtNde).w2r;
    check(total.w2r == 3 && total.r2w == 0 && in_stratum == 3, || {
        format!(
            "w2r={} r2w={} w2r(tie>nde)={in_stratum}",
            total.w2r, total.r2w
        )
    })?;

    let reference = cog.to_canonical_json().map_err(|e| e.to_string())?;
    for max_parallel in [1, 4, 16, 1, 16] {
        let again = run(Method::CausalCog, max_parallel)
            .to_canonical_json()
            .map_err(|e| e.to_string())?;
        check(again == reference, || {
            format!("report differs at max_parallel={max_parallel}")
        })?;
    }
    let elapsed = started.elapsed();
    check(elapsed < E2E_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "direct 2/6, causal-cog 5/6, W2R 3 (all tie>nde), R2W 0, reports identical at max_parallel 1/4/16, {elapsed:.2?}"
    ))
}

fn call_accounting() -> Outcome {
    let samples = load_dataset(demo_dir().join("dataset.jsonl")).map_err(|e| e.to_string())?;
    let mock = Arc::new(
        MockBackend::from_file(demo_dir().join("mock_tables.json")).map_err(|e| e.to_string())?,
    );
    let cfg = PipelineConfig {
        cache_enabled: false,
        ..demo_config(4)
    };
    let n = cfg.n_candidates;
    let engine = Engine::new(mock.clone(), cfg).map_err(|e| e.to_string())?;
    for s in &samples {
        mock.reset_counters();
        let out = engine.run_sample(s).map_err(|e| e.to_string())?;
        let m = s.options.len();
        let (gen, score) = (mock.generate_calls(), mock.score_calls());
        check(gen == n && score == (n + 2) * m, || {
            format!(
                "{}: {gen} generate / {score} score calls, want {n} / {}",
                s.id,
                (n + 2) * m
            )
        })?;
        check(
            out.telemetry.generate_calls == gen && out.telemetry.score_calls == score,
            || {
                format!(
                    "{}: telemetry {:?} disagrees with backend counters",
                    s.id, out.telemetry
                )
            },
        )?;
    }
    Ok(format!(
        "{} samples: N={n} generate, (N+2)*M score calls each",
        samples.len()
    ))
}

const OPTION_WORDS: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

fn random_samples(rng: &mut ChaCha8Rng, count: usize) -> Vec<Sample> {
    (0..count)
        .map(|i| Sample {
            id: format!("r{i:03}"),
            image: Some(ImageRef::Inline(vec![i as u8, (i >> 8) as u8, 7])),
            question: format!("Synthetic question {i}?"),
            options: OptionSet::new(
                OPTION_WORDS[..rng.gen_range(2..=4)]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            )
            .unwrap(),
            gold_index: Some(0),
            metadata: BTreeMap::new(),
        })
        .collect()
}

fn baseline_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let prompts = PromptBuilder::default();
    let system_prompts = prompts.library.system_prompts().len();

    // One candidate: the answer is that candidate's argmax exactly when its
    // divergence from the direct answer exceeds the direct effect.
    let samples = random_samples(&mut rng, REDUCTION_SAMPLES);
    let mut specs = BTreeMap::new();
    for s in &samples {
        let m = s.options.len();
        let direct = positive_dist(&mut rng, m);
        specs.insert(
            s.id.clone(),
            SampleScenario {
                question_only: positive_dist(&mut rng, m),
                candidates: vec![CandidateSpec {
                    context: format!("Context for {}.", s.id),
                    dist: Some(positive_dist(&mut rng, m)),
                    retry: None,
                }],
                ensemble: Some(vec![direct.clone(); system_prompts]),
                one_shot: None,
                direct,
            },
        );
    }
    let scenario = Scenario {
        model: "reductions".into(),
        system_prompt_index: 0,
        base_seed: 0,
        samples: specs,
    };
    let tables = compile_scenario(&scenario, &samples, &prompts).map_err(|e| e.to_string())?;
    let mock = Arc::new(MockBackend::new(tables));
    let engine = Engine::new(mock.clone(), demo_config(4).naive()).map_err(|e| e.to_string())?;
    let mut used_cog = 0;
    for s in &samples {
        let spec = &scenario.samples[&s.id];
        let cand = spec.candidates[0].dist.as_ref().unwrap();
        let take_cog =
            oracle_jsd(cand, &spec.direct) > oracle_jsd(&spec.direct, &spec.question_only);
        let want = if take_cog {
            first_max(cand)
        } else {
            first_max(&spec.direct)
        };
        mock.reset_counters();
        let out = engine.run_sample(s).map_err(|e| e.to_string())?;
        check(out.final_option == want, || {
            format!("naive {}: got {}, want {want}", s.id, out.final_option)
        })?;
        check(mock.generate_calls() == 1, || {
            format!("naive {}: {} generations", s.id, mock.generate_calls())
        })?;
        check((out.mode_used == ModeUsed::CausalCog) == take_cog, || {
            format!("naive {}: mode {:?}", s.id, out.mode_used)
        })?;
        used_cog += take_cog as usize;
    }
    check(used_cog > 0 && used_cog < REDUCTION_SAMPLES, || {
        format!("naive: degenerate split {used_cog}")
    })?;
    let report = evaluate(&samples[..3], &engine, Method::CausalCog, None);
    check(report.method == "naive_cog", || {
        format!("naive label {}", report.method)
    })?;

    // Identical ensemble members decode exactly like direct decoding.
    for s in &samples {
        let ens = engine.run_ensemble(s).map_err(|e| e.to_string())?;
        let dir = engine.run_direct(s).map_err(|e| e.to_string())?;
        let err = ens
            .dist
            .probs()
            .iter()
            .zip(dir.dist.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        check(
            ens.final_option == dir.final_option && err <= REDUCTION_TOL,
            || {
                format!(
                    "ensemble {}: {} vs {} (|err| {err:e})",
                    s.id, ens.final_option, dir.final_option
                )
            },
        )?;
    }

    // Equal weights with k >= N give the plain majority vote.
    let mut cases = 0;
    for _ in 0..1_000 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(2..=4);
        let k = n + rng.gen_range(0..=2);
        let w = rng.gen_range(0.001..1.0);
        let cands: Vec<Candidate> = (0..n)
            .map(|i| Candidate::new(i, String::new(), peaked(rng.gen_range(0..m), m), w))
            .collect();
        let top = aggregate(
            &cands,
            &AggregationConfig {
                strategy: Strategy::TieCTopK,
                k,
            },
            None,
        )
        .map_err(|e| e.to_string())?;
        let plain = aggregate(
            &cands,
            &AggregationConfig {
                strategy: Strategy::UnweightedVote,
                k,
            },
            None,
        )
        .map_err(|e| e.to_string())?;
        check(
            top.chosen_option == plain.chosen_option && top.tied == plain.tied,
            || format!("k={k} w={w}: {top:?} vs {plain:?}"),
        )?;
        cases += 1;
    }
    Ok(format!(
        "naive over {REDUCTION_SAMPLES} samples ({used_cog} used CoG), identical ensemble == direct, {cases} uniform-weight votes"
    ))
}

fn hermetic() -> Outcome {
    // Any attempted network traffic would be routed to a closed port.
    for var in [
        "HTTP_PROXY",
        "HTTPS_PROXY",
        "ALL_PROXY",
        "http_proxy",
        "https_proxy",
        "all_proxy",
    ] {
        std::env::set_var(var, "http://127.0.0.1:9");
    }
    let descriptor = BackendDescriptor::mock(demo_dir().join("mock_tables.json"));
    check(descriptor.kind == BackendKind::Mock, || {
        "descriptor is not a mock".into()
    })?;
    let samples = load_dataset(demo_dir().join("dataset.jsonl")).map_err(|e| e.to_string())?;
    let backend = open_backend(&descriptor).map_err(|e| e.to_string())?;
    let engine = Engine::new(backend, demo_config(4)).map_err(|e| e.to_string())?;
    for method in [
        Method::CausalCog,
        Method::Direct,
        Method::Ensemble,
        Method::OneShot,
    ] {
        let report = evaluate(&samples, &engine, method, Some(&descriptor));
        check(report.n_errors == 0, || {
            format!("{} had {} errors", report.method, report.n_errors)
        })?;
    }

    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).join("..");
    let mut members: Vec<String> = std::fs::read_dir(&crates)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().join("Cargo.toml").exists())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    members.sort();
    check(members == ["cli", "core"], || {
        format!("unexpected workspace members {members:?}")
    })?;
    Ok(
        "all methods on the mock backend with proxies pointed at a closed port; no secondary crate"
            .into(),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("jsd properties", jsd_properties),
        ("effects oracle", effects_oracle),
        ("aggregation oracle", aggregation_oracle),
        ("argmax invariance", argmax_invariance),
        ("option scoring fixtures", scoring_fixtures),
        ("mock end-to-end", mock_end_to_end),
        ("call accounting", call_accounting),
        ("baseline reductions", baseline_reductions),
        ("hermetic mock run", hermetic),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        match f() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
