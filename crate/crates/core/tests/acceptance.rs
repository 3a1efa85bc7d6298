//! Acceptance suite: one PASS/FAIL line per criterion. Runs with its own
//! `main` so the lines always reach the log.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use commfuse_core::agents::{AgentContext, HardwareContext, MockProvider, MockScript, RetryPolicy, Role};
use commfuse_core::analyzer::{analyze, render_graph};
use commfuse_core::blocks::{frozen_skeleton, is_marker_line};
use commfuse_core::cascade::{
    cascade_eval, score_from_latency, Artifact, BenchOutcome, CompileOutcome, EvalHarness, HarnessError, Level,
    RunOutcome, SimHarness,
};
use commfuse_core::directive::{
    conservative_directive, enumerate_concrete_space, parse_directive, render_directive, Backend, Issuer,
    OptimizationDirective,
};
use commfuse_core::evolve::run::score_log;
use commfuse_core::evolve::{
    apply_diff, choose_phase, embedding_text, migrate, parse_offspring, EvolutionOutcome, Evolver, Island, Member,
    Phase, SearchParams,
};
use commfuse_core::fastpath::{run_fastpath_with, FastpathConfig};
use commfuse_core::program::{Program, Topology};
use commfuse_core::store::{cosine_similarity, Candidate, EmbeddingProvider, HashEmbedder, Novelty, Store};

type Outcome = Result<String, String>;

const SCORE_TOL: f64 = 1e-4;
const NOVELTY_THRESHOLD: f64 = 0.95;
const KNN_STORES: usize = 100;
const KNN_MAX_RECORDS: usize = 1000;
const GATING_CANDIDATES: usize = 100;
const FUZZ_PATCHES: u32 = 1000;
const ROUND_TRIP_CASES: u32 = 500;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn fixture(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel)).unwrap()
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn candidate(
    id: &str,
    source: &str,
    directive: OptimizationDirective,
    result: commfuse_core::cascade::CascadeResult,
    embedding: Vec<f64>,
) -> Candidate {
    Candidate {
        id: id.into(),
        run_id: "acc".into(),
        source: source.into(),
        directive,
        parent_id: None,
        island: 1,
        generation: 0,
        mutation_form: None,
        result,
        feedback: None,
        embedding,
        strategy: "other".into(),
        created_at_ms: 0,
        seq: 0,
    }
}

// 1 ------------------------------------------------------------------------

fn scoring_formula() -> Outcome {
    let s0 = score_from_latency(0.0).map_err(|e| e.to_string())?;
    let s999 = score_from_latency(999.0).map_err(|e| e.to_string())?;
    let s = score_from_latency(1091.7).map_err(|e| e.to_string())?;
    ensure(s0 == 10000.0, format!("score(0) = {s0}"))?;
    ensure(s999 == 10.0, format!("score(999) = {s999}"))?;
    ensure((s - 9.1517).abs() <= SCORE_TOL, format!("score(1091.7) = {s}"))?;
    Ok(format!("score(1091.7) = {s:.4}"))
}

// 2 ------------------------------------------------------------------------

fn analyzer_golden() -> Outcome {
    let g = analyze(&fixture("moe_host.cu")).map_err(|e| e.to_string())?;
    let got = render_graph(&g);
    let want = fixture("moe_host.graph.txt");
    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    ensure(toks(&got) == toks(&want), "rendered graph differs from golden")?;
    ensure(g.nodes.len() == 2, format!("{} nodes", g.nodes.len()))?;
    ensure(
        g.execution_order.len() == 7,
        format!("{} execution steps", g.execution_order.len()),
    )?;
    Ok(format!("{} tokens match", toks(&want).len()))
}

// 3 ------------------------------------------------------------------------

fn phase_policy() -> Outcome {
    for g in 1..=18 {
        let want = if g <= 7 { Phase::Explore } else { Phase::Exploit };
        let got = choose_phase(g, 18, 0.4);
        ensure(got == want, format!("generation {g}: {got:?}"))?;
    }
    Ok("Explore 1-7, Exploit 8-18".into())
}

// 4 ------------------------------------------------------------------------

/// Sim harness wrapper that injects failures and logs every call.
struct Spy {
    inner: SimHarness,
    calls: Mutex<Vec<&'static str>>,
    fail_compile: bool,
    fail_verify: bool,
    fail_bench: bool,
}

impl EvalHarness for Spy {
    fn name(&self) -> &str {
        "spy"
    }
    fn compile(&self, p: &Program) -> Result<CompileOutcome, HarnessError> {
        self.calls.lock().unwrap().push("compile");
        if self.fail_compile {
            return Ok(CompileOutcome::Failed("[spy] compile error".into()));
        }
        self.inner.compile(p)
    }
    fn run_verify(&self, a: &Artifact, t: &Topology) -> Result<RunOutcome, HarnessError> {
        self.calls.lock().unwrap().push("verify");
        if self.fail_verify {
            return Ok(RunOutcome::Failed("[spy] mismatch".into()));
        }
        self.inner.run_verify(a, t)
    }
    fn run_benchmark(&self, a: &Artifact, t: &Topology, reps: u32) -> Result<BenchOutcome, HarnessError> {
        self.calls.lock().unwrap().push("bench");
        if self.fail_bench {
            return Ok(BenchOutcome::Timeout("[spy] hung".into()));
        }
        self.inner.run_benchmark(a, t, reps)
    }
}

fn cascade_gating() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let seed = fixture("fastpath/moe_seed_gin.cu");
    let d = conservative_directive(Backend::Gin);
    let emb = HashEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    {
        let store = Store::open(dir.path()).map_err(|e| e.to_string())?;
        for n in 0..GATING_CANDIDATES {
            let spy = Spy {
                inner: SimHarness::default(),
                calls: Mutex::new(Vec::new()),
                fail_compile: rng.random_bool(0.3),
                fail_verify: rng.random_bool(0.3),
                fail_bench: rng.random_bool(0.2),
            };
            let src = format!("{seed}// variant {n}\n");
            let r = cascade_eval(
                &Program::new(src.clone(), d.clone()),
                &spy,
                &Topology::default(),
                3,
                None,
                "c",
            )
            .map_err(|e| e.to_string())?;
            let calls = spy.calls.lock().unwrap().clone();
            let expect: Vec<&str> = if spy.fail_compile {
                vec!["compile"]
            } else if spy.fail_verify {
                vec!["compile", "verify"]
            } else {
                vec!["compile", "verify", "bench"]
            };
            ensure(calls == expect, format!("candidate {n}: calls {calls:?}"))?;
            let want_level = match (spy.fail_compile, spy.fail_verify, spy.fail_bench) {
                (true, _, _) => Level::L1Failed,
                (false, true, _) | (false, false, true) => Level::L2Failed,
                _ => Level::L3Complete,
            };
            ensure(
                r.level_reached == want_level,
                format!("candidate {n}: level {:?}", r.level_reached),
            )?;
            let id = format!("c{n}");
            if want_level != Level::L3Complete {
                failures.push(id.clone());
            }
            let e = emb.embed(&src).map_err(|e| e.to_string())?;
            store
                .insert(candidate(&id, &src, d.clone(), r, e))
                .map_err(|e| e.to_string())?;
        }
    }
    let reopened = Store::open(dir.path()).map_err(|e| e.to_string())?;
    ensure(reopened.len() == GATING_CANDIDATES, "records lost")?;
    for id in &failures {
        let c = reopened.get(id).ok_or(format!("{id} not persisted"))?;
        ensure(
            c.score() == 0.0 && !c.result.diagnostics.is_empty(),
            format!("{id}: score {} diag {:?}", c.score(), c.result.diagnostics),
        )?;
    }
    Ok(format!(
        "{GATING_CANDIDATES} candidates, {} failures persisted with score 0",
        failures.len()
    ))
}

// 5 ------------------------------------------------------------------------

fn knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = conservative_directive(Backend::Gin);
    let dim = 16;
    let mut checked = 0;
    for s in 0..KNN_STORES {
        let n = rng.random_range(1..=KNN_MAX_RECORDS);
        let store = Store::in_memory();
        let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let v: Vec<f64> = if i > 0 && rng.random_bool(0.05) {
                vecs[rng.random_range(0..i)].clone()
            } else {
                (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let mut c = candidate(
                &format!("s{s}r{i}"),
                "",
                d.clone(),
                commfuse_core::cascade::CascadeResult::failed(Level::L1Failed, "x"),
                v.clone(),
            );
            c.generation = i as u32;
            store.insert(c).map_err(|e| e.to_string())?;
            vecs.push(v);
        }
        let q: Vec<f64> = if rng.random_bool(0.2) {
            vecs[rng.random_range(0..n)].clone()
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        // Exhaustive oracle: similarity descending, newer record first on ties.
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut all: Vec<(usize, f64)> = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| {
                (
                    i,
                    v.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (norm(v) * norm(&q)),
                )
            })
            .collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0)));
        for k in [1, 5, 10] {
            let got = store.knn(&q, k).map_err(|e| e.to_string())?;
            let want: Vec<&(usize, f64)> = all.iter().take(k).collect();
            ensure(
                got.len() == want.len(),
                format!("store {s} k {k}: {} results", got.len()),
            )?;
            for (g, w) in got.iter().zip(want) {
                ensure(
                    g.0.id == format!("s{s}r{}", w.0) && (g.1 - w.1).abs() < 1e-9,
                    format!("store {s} k {k}: {} {} vs r{} {}", g.0.id, g.1, w.0, w.1),
                )?;
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} queries over {KNN_STORES} stores"))
}

// 6 ------------------------------------------------------------------------

fn novelty_filter() -> Outcome {
    let e = HashEmbedder::default();
    let d = conservative_directive(Backend::Gin);
    let seed = fixture("fastpath/moe_seed_gin.cu");
    let one_token = seed.replacen("gin.flush(cta);", "gin.flush(cta2);", 1);
    ensure(one_token != seed, "fixture edit did not apply")?;
    let (distinct, dd) =
        parse_offspring(&seed, &d, &fixture("evolve/rewrite_3_fused.txt")).map_err(|e| e.to_string())?;

    let store = Store::in_memory();
    let v = e.vector(&embedding_text(&seed, &d));
    let r = commfuse_core::cascade::CascadeResult::complete(vec![100.0]).map_err(|e| e.to_string())?;
    store
        .insert(candidate("seed", &seed, d.clone(), r, v.clone()))
        .map_err(|e| e.to_string())?;

    let dup = store.novelty_check(&v, NOVELTY_THRESHOLD).map_err(|e| e.to_string())?;
    ensure(
        matches!(&dup, Novelty::Reject { similarity, .. } if *similarity == 1.0),
        format!("exact duplicate: {dup:?}"),
    )?;
    let near = e.vector(&embedding_text(&one_token, &d));
    let sim_near = cosine_similarity(&v, &near).map_err(|e| e.to_string())?;
    let n = store
        .novelty_check(&near, NOVELTY_THRESHOLD)
        .map_err(|e| e.to_string())?;
    ensure(
        matches!(n, Novelty::Reject { .. }),
        format!("one-token pair accepted (similarity {sim_near:.4})"),
    )?;
    let far = e.vector(&embedding_text(&distinct, &dd));
    let sim_far = cosine_similarity(&v, &far).map_err(|e| e.to_string())?;
    let f = store
        .novelty_check(&far, NOVELTY_THRESHOLD)
        .map_err(|e| e.to_string())?;
    ensure(
        f == Novelty::Accept,
        format!("distinct program rejected (similarity {sim_far:.4})"),
    )?;
    Ok(format!(
        "duplicate 1.0, one-token {sim_near:.4} rejected, distinct {sim_far:.4} accepted"
    ))
}

// 7 ------------------------------------------------------------------------

fn migration_conservation() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 300,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let pops = proptest::collection::vec(proptest::collection::vec(1u32..500, 1..8), 3..=3);
    runner
        .run(&(pops, 1usize..4, any::<u64>()), |(pops, k, seed)| {
            let cap = 8;
            let mut islands: Vec<Island> = pops
                .iter()
                .enumerate()
                .map(|(i, scores)| {
                    let mut isl = Island::new(i as u32 + 1, cap, format!("seed{i}"));
                    for (j, s) in scores.iter().enumerate() {
                        isl.insert(Member {
                            id: format!("i{i}m{j}"),
                            score: *s as f64 / 7.0,
                        })
                        .unwrap();
                    }
                    isl
                })
                .collect();
            let before: Vec<Island> = islands.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events = migrate(&mut islands, k, &mut rng);
            for (a, b) in before.iter().zip(&islands) {
                prop_assert_eq!(a.len(), b.len());
            }
            for ev in &events {
                let src = &before[ev.from_island as usize - 1];
                let mut scores: Vec<f64> = src.population.iter().map(|m| m.score).collect();
                scores.sort_by(|a, b| b.total_cmp(a));
                let kth = scores[(k.min(scores.len())) - 1];
                let m = src.population.iter().find(|m| m.id == ev.id);
                prop_assert!(m.is_some(), "migrant {} not from its source", ev.id);
                prop_assert!(m.unwrap().score >= kth, "migrant {} below top-{}", ev.id, k);
                prop_assert!(ev.from_island != ev.to_island);
                prop_assert!(
                    islands[ev.to_island as usize - 1].contains(&ev.id)
                        || events.iter().any(|o| o.replaced.as_deref() == Some(ev.id.as_str()))
                );
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("300 randomized 3-island migrations".into())
}

// 8 ------------------------------------------------------------------------

/// Interior line numbers (1-based) of every block, computed from marker
/// lines directly.
fn interior_lines(src: &str) -> HashSet<usize> {
    let mut out = HashSet::new();
    let mut open = false;
    for (i, l) in src.split_inclusive('\n').enumerate() {
        if is_marker_line(l) {
            open = !open;
        } else if open {
            out.insert(i + 1);
        }
    }
    out
}

fn outside_text(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut open = false;
    for l in src.split_inclusive('\n') {
        if is_marker_line(l) {
            open = !open;
            out.push(l.to_string());
        } else if !open {
            out.push(l.to_string());
        }
    }
    out
}

#[derive(Debug, Clone)]
enum FuzzHunk {
    Replace(usize, usize, Vec<String>),
    Insert(usize, Vec<String>),
    Delete(usize, usize),
}

fn fuzz_line() -> impl Strategy<Value = String> + Clone {
    prop_oneof![
        6 => "[a-z]{1,6}\\([0-9]\\);".prop_map(|s| format!("  {s}")),
        1 => Just("// EVOLVE-BLOCK-END".to_string()),
        1 => Just("// EVOLVE-BLOCK-START".to_string()),
    ]
}

fn fuzz_hunk(n: usize) -> impl Strategy<Value = FuzzHunk> {
    let body = proptest::collection::vec(fuzz_line(), 0..3);
    prop_oneof![
        (1..=n, 0..3usize, body.clone()).prop_map(move |(a, len, b)| {
            let e = (a + len).min(n);
            FuzzHunk::Replace(a, e, if b.is_empty() { vec!["  x();".into()] } else { b })
        }),
        (1..=n + 1, body.clone())
            .prop_map(|(a, b)| FuzzHunk::Insert(a, if b.is_empty() { vec!["  y();".into()] } else { b })),
        (1..=n, 0..3usize).prop_map(move |(a, len)| FuzzHunk::Delete(a, (a + len).min(n))),
    ]
}

fn render_hunks(hs: &[FuzzHunk]) -> String {
    let mut s = String::new();
    for h in hs {
        match h {
            FuzzHunk::Replace(a, b, lines) => {
                s += &format!("@@ replace {a}-{b}\n");
                for l in lines {
                    s += l;
                    s.push('\n');
                }
            }
            FuzzHunk::Insert(a, lines) => {
                s += &format!("@@ insert {a}\n");
                for l in lines {
                    s += l;
                    s.push('\n');
                }
            }
            FuzzHunk::Delete(a, b) => s += &format!("@@ delete {a}-{b}\n"),
        }
    }
    s
}

fn touches_outside(src: &str, hs: &[FuzzHunk]) -> bool {
    let inside = interior_lines(src);
    let markers: Vec<usize> = src
        .split_inclusive('\n')
        .enumerate()
        .filter(|(_, l)| is_marker_line(l))
        .map(|(i, _)| i + 1)
        .collect();
    hs.iter().any(|h| match h {
        FuzzHunk::Replace(a, b, _) | FuzzHunk::Delete(a, b) => (*a..=*b).any(|l| !inside.contains(&l)),
        // Insertion before line `a` lands in a block iff a START marker
        // precedes it and the matching END is at or after `a`.
        FuzzHunk::Insert(a, _) => !markers.chunks(2).any(|p| p[0] < *a && *a <= p[1]),
    })
}

fn mutation_bounds() -> Outcome {
    let parent = fixture("fastpath/moe_seed_gin.cu");
    let n = parent.lines().count();
    let mut runner = TestRunner::new(Config {
        cases: FUZZ_PATCHES,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let accepted = Mutex::new(0u32);
    let base = outside_text(&parent);
    runner
        .run(&proptest::collection::vec(fuzz_hunk(n), 1..3), |hs| {
            let patch = render_hunks(&hs);
            let outside = touches_outside(&parent, &hs);
            if let Ok(child) = apply_diff(&parent, &patch) {
                prop_assert!(!outside, "accepted an edit outside the blocks:\n{}", patch);
                prop_assert_eq!(outside_text(&child), base.clone(), "frozen bytes changed by\n{}", patch);
                prop_assert_eq!(frozen_skeleton(&child).unwrap(), frozen_skeleton(&parent).unwrap());
                *accepted.lock().unwrap() += 1;
            }
            if outside {
                prop_assert!(apply_diff(&parent, &patch).is_err());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let a = *accepted.lock().unwrap();
    ensure(a > 0, "no fuzzed patch was accepted")?;
    Ok(format!("{FUZZ_PATCHES} patches, {a} accepted with frozen bytes intact"))
}

// 9, 10 --------------------------------------------------------------------

fn evolve_once(alpha: f64, generations: u32, dir: Option<&Path>) -> Result<(EvolutionOutcome, String), String> {
    let provider =
        MockProvider::new(MockScript::load(&fixtures().join("evolve/search.toml")).map_err(|e| e.to_string())?);
    let store = match dir {
        Some(d) => Store::open(d).map_err(|e| e.to_string())?,
        None => Store::in_memory(),
    };
    let harness = SimHarness::default();
    let embedder = HashEmbedder::default();
    let ctx = AgentContext::bare(Backend::Gin, HardwareContext::default());
    let params = SearchParams {
        islands: 2,
        generations,
        alpha,
        rng_seed: 11,
        ..Default::default()
    };
    let seed = Program::new(
        fixture("fastpath/moe_seed_gin.cu"),
        conservative_directive(Backend::Gin),
    );
    let mut ev = Evolver::new("acc", params, &harness, &provider, &store, &embedder, &ctx);
    ev.retry = RetryPolicy::immediate(1);
    let out = ev.run(&[seed]).map_err(|e| e.to_string())?;
    Ok((out, score_log(&store.snapshot(), "acc")))
}

fn e2e_determinism() -> Outcome {
    let (a, la) = evolve_once(0.4, 6, None)?;
    let (_, lb) = evolve_once(0.4, 6, None)?;
    ensure(!la.is_empty() && la == lb, "score logs differ between identical runs")?;
    ensure(
        a.best_series.windows(2).all(|w| w[1] >= w[0]),
        format!("series not monotone: {:?}", a.best_series),
    )?;
    let seed = a.best_series[0];
    let best = *a.best_series.last().unwrap();
    ensure(best > seed, format!("best {best} does not beat seed {seed}"))?;
    Ok(format!(
        "identical logs ({} bytes), best {best:.4} > seed {seed:.4}",
        la.len()
    ))
}

fn ablation_shape() -> Outcome {
    let (two, _) = evolve_once(0.4, 18, None)?;
    let (one, _) = evolve_once(1e-9, 18, None)?;
    let (g2, g1) = (two.generations_to_best(), one.generations_to_best());
    let detail = format!(
        "two-phase best {:.4} at generation {g2}, exploit-only best {:.4} at generation {g1}",
        two.best.score(),
        one.best.score()
    );
    ensure(g2 <= g1, detail.clone())?;
    Ok(detail)
}

// 11 -----------------------------------------------------------------------

fn fastpath_accounting() -> Outcome {
    let host = fixture("moe_host.cu");
    let ctx = AgentContext::bare(Backend::Gin, HardwareContext::default());
    let cfg = FastpathConfig {
        retry: RetryPolicy::immediate(1),
        ..Default::default()
    };
    let ok =
        MockProvider::new(MockScript::load(&fixtures().join("fastpath/success_gin.toml")).map_err(|e| e.to_string())?);
    let seed =
        run_fastpath_with(&host, Backend::Gin, &ctx, &SimHarness::default(), &ok, &cfg).map_err(|e| e.to_string())?;
    let rewrites = ok.calls(Role::StageA) + ok.calls(Role::StageB);
    ensure(
        seed.rewrite_iterations() == 2 && rewrites == 2,
        format!("{rewrites} rewrites"),
    )?;
    let fix = MockProvider::new(
        MockScript::load(&fixtures().join("fastpath/fail_then_fix_gin.toml")).map_err(|e| e.to_string())?,
    );
    let seed =
        run_fastpath_with(&host, Backend::Gin, &ctx, &SimHarness::default(), &fix, &cfg).map_err(|e| e.to_string())?;
    let per: Vec<usize> = seed.provenance.iter().map(|s| s.iterations.len()).collect();
    ensure(
        per.len() == 2 && per.iter().all(|n| (2..=4).contains(n)),
        format!("per-stage iterations {per:?}"),
    )?;
    Ok(format!("success: 2 rewrites; fail-then-fix: {per:?}"))
}

// 12 -----------------------------------------------------------------------

fn directive_round_trip() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: ROUND_TRIP_CASES,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..Config::default()
    });
    let text = "[A-Za-z0-9][A-Za-z0-9 ,./()<>:;_-]{0,30}[A-Za-z0-9)]";
    let strat = (
        prop::sample::select(Backend::ALL.to_vec()),
        prop::sample::select(Issuer::ALL.to_vec()),
        text,
        text,
        text,
    );
    runner
        .run(&strat, |(b, i, p, s, c)| {
            let d = OptimizationDirective::new(b, i, &p, &s, &c).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = parse_directive(&render_directive(&d)).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, d);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let space = enumerate_concrete_space();
    let unique: HashSet<_> = space.iter().collect();
    ensure(
        space.len() == 6 && unique.len() == 6,
        format!("{} pairs, {} unique", space.len(), unique.len()),
    )?;
    Ok(format!("{ROUND_TRIP_CASES} directives round-trip; 6 unique pairs"))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 12] = [
        ("scoring formula exactness", scoring_formula),
        ("analyzer golden test", analyzer_golden),
        ("phase policy", phase_policy),
        ("cascade gating", cascade_gating),
        ("k-NN oracle equivalence", knn_oracle),
        ("novelty filter", novelty_filter),
        ("migration conservation", migration_conservation),
        ("mutation bounds", mutation_bounds),
        ("end-to-end determinism and progress", e2e_determinism),
        ("ablation shape", ablation_shape),
        ("fast-path iteration accounting", fastpath_accounting),
        ("directive round-trip", directive_round_trip),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let r = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2}s): {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2}s): {why}", n + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
