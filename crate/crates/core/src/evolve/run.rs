use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::{classify_strategy, Archive, Descriptor, StrategyClass};
use super::mutate::{embedding_text, llm_mutate, parse_offspring, MutationContext};
use super::params::{choose_phase, sample_mutation_form, SearchParams};
use super::population::{migrate, select_parent, Island, Member};
use super::EvolveError;
use crate::agents::{
    complete_with_retry, meta_summarize, AgentContext, AgentProvider, CandidateDigest, MetaRecommendations, Request,
    RetryPolicy, Role,
};
use crate::blocks::find_blocks;
use crate::cascade::{cascade_eval, CascadeResult, EvalHarness, Level, ProviderFeedback};
use crate::directive::{enumerate_concrete_space, render_directive, OptimizationDirective};
use crate::program::{MutationForm, Program, Topology};
use crate::store::{Candidate, EmbeddingProvider, Index, Migration, Novelty, Rejection, Store};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const BEST_CSV: &str = "best_per_generation.csv";
pub const REPORT_FILE: &str = "report.txt";
pub const BEST_PROGRAM: &str = "best.cu";
pub const BEST_DIRECTIVE: &str = "best_directive.yaml";

/// Search state after a completed generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub generation: u32,
    pub islands: Vec<Island>,
    pub archive: Archive,
    /// Best score in the store after each completed generation, from 0.
    pub best_series: Vec<f64>,
    pub scratchpad: String,
    pub meta: Option<MetaRecommendations>,
    pub provider: Option<serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct EvolutionOutcome {
    pub best: Candidate,
    pub best_series: Vec<f64>,
    pub generations_completed: u32,
    /// True when the run stopped early on request.
    pub stopped: bool,
}

impl EvolutionOutcome {
    /// First generation at which the final best score was reached.
    pub fn generations_to_best(&self) -> u32 {
        let top = self.best_series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.best_series.iter().position(|&s| s == top).unwrap_or(0) as u32
    }
}

/// One configured search. Construct with [`Evolver::new`] and adjust the
/// public fields before calling [`Evolver::run`].
pub struct Evolver<'a> {
    pub run_id: String,
    pub params: SearchParams,
    pub harness: &'a dyn EvalHarness,
    pub provider: &'a dyn AgentProvider,
    pub store: &'a Store,
    pub embedder: &'a dyn EmbeddingProvider,
    pub ctx: &'a AgentContext,
    pub topology: Topology,
    pub retry: RetryPolicy,
    pub run_dir: Option<PathBuf>,
    /// Stop once this generation is complete.
    pub stop_after: Option<u32>,
    /// Continue from `run_dir/checkpoint.json` when present.
    pub resume: bool,
}

struct StepOutput {
    candidate: Option<Candidate>,
    rejection: Option<Rejection>,
}

fn rng_for(seed: u64, generation: u32, stream: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((generation as u64) << 32) | stream as u64);
    rng
}

fn descriptor(c: &Candidate) -> Descriptor {
    Descriptor {
        backend: c.directive.backend,
        issuer: c.directive.issuer,
        strategy: StrategyClass::parse(&c.strategy),
    }
}

/// Summarizer view of a stored candidate.
pub fn digest(c: &Candidate) -> CandidateDigest {
    CandidateDigest {
        id: c.id.clone(),
        generation: c.generation,
        island: c.island,
        form: c.mutation_form,
        level: c.result.level_reached.as_str().to_string(),
        score: c.score(),
        backend: c.directive.backend.to_string(),
        issuer: c.directive.issuer.to_string(),
        placement: c.directive.placement().to_string(),
        strategy: c.strategy.clone(),
        feedback: c.feedback.as_ref().map(|f| f.strategy_summary.clone()),
    }
}

fn island_channel(i: u32) -> String {
    format!("island-{i}")
}

fn run_records<'i>(index: &'i Index, run_id: &str) -> impl Iterator<Item = &'i Arc<Candidate>> {
    let run_id = run_id.to_string();
    index.records().iter().filter(move |r| r.run_id == run_id)
}

fn run_best(index: &Index, run_id: &str) -> Option<Arc<Candidate>> {
    run_records(index, run_id)
        .max_by(|a, b| a.score().total_cmp(&b.score()).then(b.seq.cmp(&a.seq)))
        .cloned()
}

impl<'a> Evolver<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        run_id: impl Into<String>,
        params: SearchParams,
        harness: &'a dyn EvalHarness,
        provider: &'a dyn AgentProvider,
        store: &'a Store,
        embedder: &'a dyn EmbeddingProvider,
        ctx: &'a AgentContext,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            params,
            harness,
            provider,
            store,
            embedder,
            ctx,
            topology: Topology::default(),
            retry: RetryPolicy::default(),
            run_dir: None,
            stop_after: None,
            resume: false,
        }
    }

    fn feedback_agent(&self) -> ProviderFeedback<'_> {
        ProviderFeedback {
            ctx: self.ctx,
            provider: self.provider,
            retry: self.retry,
        }
    }

    fn evaluate(&self, program: &Program, channel: &str) -> Result<CascadeResult, EvolveError> {
        let agent = self.feedback_agent();
        Ok(cascade_eval(
            program,
            self.harness,
            &self.topology,
            self.params.reps,
            Some(&agent),
            channel,
        )?)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_candidate(
        &self,
        id: String,
        source: String,
        directive: OptimizationDirective,
        parent_id: Option<String>,
        island: u32,
        generation: u32,
        form: Option<MutationForm>,
        result: CascadeResult,
        embedding: Vec<f64>,
    ) -> Candidate {
        let feedback = result.feedback.clone();
        let strategy = classify_strategy(
            &source,
            directive.placement(),
            feedback.as_ref().map(|f| f.strategy_summary.as_str()),
        );
        Candidate {
            id,
            run_id: self.run_id.clone(),
            source,
            directive,
            parent_id,
            island,
            generation,
            mutation_form: form,
            result,
            feedback,
            embedding,
            strategy: strategy.as_str().to_string(),
            created_at_ms: 0,
            seq: 0,
        }
    }

    fn embed(&self, source: &str, directive: &OptimizationDirective) -> Result<Vec<f64>, EvolveError> {
        Ok(self.embedder.embed(&embedding_text(source, directive))?)
    }

    /// Insert unless a record with the same id exists (a replayed
    /// generation after an interrupted run).
    fn commit(&self, c: Candidate) -> Result<Arc<Candidate>, EvolveError> {
        if let Some(existing) = self.store.get(&c.id) {
            return Ok(existing);
        }
        let id = self.store.insert(c)?;
        Ok(self.store.get(&id).expect("just inserted"))
    }

    fn reseed(&self, island: u32, k: usize, first: &Program) -> Result<Program, EvolveError> {
        let seed_pair = (first.directive.backend, first.directive.issuer);
        let pairs: Vec<_> = enumerate_concrete_space()
            .into_iter()
            .filter(|p| *p != seed_pair)
            .collect();
        let (b, i) = pairs[k % pairs.len()];
        let target = first.directive.with_concrete(b, i);
        let prompt = format!(
            "Produce a semantically different variant of this seed program for the directive below. Keep every line outside the evolve blocks byte-identical and keep the markers.\n\n{}\nSeed program:\n```\n{}```\n\n{}",
            render_directive(&target),
            first.source,
            self.ctx.render()
        );
        let channel = island_channel(island);
        let response = complete_with_retry(
            self.provider,
            &Request {
                role: Role::Reseed,
                channel: &channel,
                prompt: &prompt,
                temperature: self.params.tau_high,
            },
            self.retry,
        )?;
        match parse_offspring(&first.source, &target, &response) {
            Ok((source, directive)) => Ok(Program::new(source, directive)),
            Err(e) => {
                log::warn!("re-seed for island {island} unusable ({e}); copying seed 1");
                Ok(first.clone())
            }
        }
    }

    fn initialize(&self, seeds: &[Program]) -> Result<Checkpoint, EvolveError> {
        let k = self.params.islands as usize;
        if seeds.len() > k {
            log::warn!("{} seeds for {k} islands; the extra seeds are ignored", seeds.len());
        }
        for (n, s) in seeds.iter().enumerate() {
            find_blocks(&s.source).map_err(|e| EvolveError::InvalidParams(format!("seed {}: {e}", n + 1)))?;
        }
        let mut programs: Vec<Program> = seeds.iter().take(k).cloned().collect();
        for island in programs.len()..k {
            let p = self.reseed(island as u32 + 1, island - seeds.len(), &seeds[0])?;
            programs.push(p);
        }
        let mut islands = Vec::with_capacity(k);
        let mut archive = Archive::default();
        for (n, p) in programs.iter().enumerate() {
            let index = n as u32 + 1;
            let id = format!("{}-seed{index}", self.run_id);
            let parent = (n >= seeds.len()).then(|| format!("{}-seed1", self.run_id));
            let record = match self.store.get(&id) {
                Some(r) => r,
                None => {
                    let result = self.evaluate(p, &island_channel(index))?;
                    let emb = self.embed(&p.source, &p.directive)?;
                    let c = self.build_candidate(
                        id.clone(),
                        p.source.clone(),
                        p.directive.clone(),
                        parent,
                        index,
                        0,
                        None,
                        result,
                        emb,
                    );
                    self.commit(c)?
                }
            };
            let mut island = Island::new(index, self.params.capacity as usize, id.clone());
            if record.result.viable() {
                let _ = island.insert(Member {
                    id: id.clone(),
                    score: record.score(),
                });
                archive.insert(descriptor(&record), &id, record.score());
            }
            islands.push(island);
        }
        let best = run_best(&self.store.snapshot(), &self.run_id)
            .map(|c| c.score())
            .unwrap_or(0.0);
        Ok(Checkpoint {
            run_id: self.run_id.clone(),
            generation: 0,
            islands,
            archive,
            best_series: vec![best],
            scratchpad: String::new(),
            meta: None,
            provider: self.provider.checkpoint(),
        })
    }

    fn island_step(
        &self,
        g: u32,
        island: &Island,
        snapshot: &Index,
        archive: &Archive,
        meta: Option<&MetaRecommendations>,
    ) -> Result<StepOutput, EvolveError> {
        let p = &self.params;
        let mut rng = rng_for(p.rng_seed, g, island.index);
        let parent_id = if island.is_empty() {
            island.seed_id.clone()
        } else {
            island.population[select_parent(&island.population, p.selection_pressure, &mut rng)?]
                .id
                .clone()
        };
        let parent = snapshot.get(&parent_id).cloned().ok_or_else(|| {
            EvolveError::Checkpoint(format!(
                "island {} references unknown candidate {parent_id}",
                island.index
            ))
        })?;
        let phase = choose_phase(g, p.generations, p.alpha);
        let mut form = sample_mutation_form(p.weights(phase), &mut rng)?;
        if form == MutationForm::Crossover && archive.len() < 2 {
            form = MutationForm::Rewrite;
        }
        let n_insp = if form == MutationForm::Crossover {
            2
        } else {
            p.inspirations as usize
        };
        let inspirations: Vec<Arc<Candidate>> = archive
            .sample(n_insp, Some(&parent.id), &mut rng)
            .iter()
            .filter_map(|e| snapshot.get(&e.id).cloned())
            .collect();
        let neighbours: Vec<(Arc<Candidate>, f64)> = if p.knn_context == 0 || snapshot.is_empty() {
            Vec::new()
        } else {
            snapshot
                .knn(&parent.embedding, p.knn_context as usize + 1)?
                .into_iter()
                .filter(|(c, _)| c.id != parent.id)
                .take(p.knn_context as usize)
                .collect()
        };
        let mc = MutationContext {
            parent: &parent,
            inspirations: &inspirations,
            neighbours: &neighbours,
            meta,
            ctx: self.ctx,
        };
        let channel = island_channel(island.index);
        let id = format!("{}-g{g}-i{}", self.run_id, island.index);
        let mut last_reject = None;
        for _ in 0..p.novelty_attempts {
            let temperature = p.temperature(phase);
            let off = match llm_mutate(
                &mc,
                form,
                phase,
                g,
                p.generations,
                temperature,
                self.provider,
                &channel,
                self.retry,
            ) {
                Ok(o) => o,
                Err(EvolveError::MutationRejected(why)) => {
                    let result = CascadeResult::failed(Level::L1Failed, format!("[mutation-rejected] {why}"));
                    let c = self.build_candidate(
                        id,
                        parent.source.clone(),
                        parent.directive.clone(),
                        Some(parent.id.clone()),
                        island.index,
                        g,
                        Some(form),
                        result,
                        parent.embedding.clone(),
                    );
                    return Ok(StepOutput {
                        candidate: Some(c),
                        rejection: None,
                    });
                }
                Err(e) => return Err(e),
            };
            let emb = self.embed(&off.source, &off.directive)?;
            match snapshot.novelty_check(&emb, p.novelty_threshold)? {
                Novelty::Accept => {
                    let program = Program::new(off.source, off.directive);
                    let result = self.evaluate(&program, &channel)?;
                    let c = self.build_candidate(
                        id,
                        program.source,
                        program.directive,
                        Some(parent.id.clone()),
                        island.index,
                        g,
                        Some(form),
                        result,
                        emb,
                    );
                    return Ok(StepOutput {
                        candidate: Some(c),
                        rejection: None,
                    });
                }
                Novelty::Reject { nearest_id, similarity } => last_reject = Some((nearest_id, similarity)),
            }
        }
        let (nearest_id, similarity) = last_reject.expect("at least one attempt");
        Ok(StepOutput {
            candidate: None,
            rejection: Some(Rejection {
                run_id: self.run_id.clone(),
                generation: g,
                island: island.index,
                attempts: p.novelty_attempts,
                nearest_id,
                similarity,
            }),
        })
    }

    fn maybe_meta(&self, g: u32, cp: &mut Checkpoint) {
        let every = self.params.meta_interval;
        if every == 0 || g <= 1 || !(g - 1).is_multiple_of(every) {
            return;
        }
        let snap = self.store.snapshot();
        let recent: Vec<CandidateDigest> = run_records(&snap, &self.run_id)
            .filter(|c| c.generation + every >= g && c.generation < g)
            .map(|c| digest(c))
            .collect();
        match meta_summarize(&recent, &cp.scratchpad, self.provider, self.retry) {
            Ok(m) => {
                cp.scratchpad = m.scratchpad.clone();
                cp.meta = Some(m);
            }
            Err(e) => log::warn!("meta-summarizer failed before generation {g}: {e}"),
        }
    }

    fn generation(&self, g: u32, cp: &mut Checkpoint) -> Result<(), EvolveError> {
        self.maybe_meta(g, cp);
        let snapshot = self.store.snapshot();
        let outputs: Vec<StepOutput> = cp
            .islands
            .par_iter()
            .map(|island| self.island_step(g, island, &snapshot, &cp.archive, cp.meta.as_ref()))
            .collect::<Result<_, _>>()?;
        for (island, out) in cp.islands.iter_mut().zip(outputs) {
            if let Some(c) = out.candidate {
                let rec = self.commit(c)?;
                if rec.result.viable() {
                    let _ = island.insert(Member {
                        id: rec.id.clone(),
                        score: rec.score(),
                    });
                    cp.archive.insert(descriptor(&rec), &rec.id, rec.score());
                }
            }
            if let Some(r) = out.rejection {
                self.store.record_rejection(r)?;
            }
        }
        if g.is_multiple_of(self.params.migration_interval) && cp.islands.len() >= 2 {
            let mut rng = rng_for(self.params.rng_seed, g, u32::MAX);
            for ev in migrate(&mut cp.islands, self.params.migration_k as usize, &mut rng) {
                self.store.record_migration(Migration {
                    id: ev.id,
                    run_id: self.run_id.clone(),
                    generation: g,
                    from_island: ev.from_island,
                    to_island: ev.to_island,
                    replaced: ev.replaced,
                })?;
            }
        }
        let best = run_best(&self.store.snapshot(), &self.run_id)
            .map(|c| c.score())
            .unwrap_or(0.0);
        let prev = cp.best_series.last().copied().unwrap_or(0.0);
        cp.best_series.push(best.max(prev));
        cp.generation = g;
        cp.provider = self.provider.checkpoint();
        Ok(())
    }

    fn load_checkpoint(&self) -> Result<Option<Checkpoint>, EvolveError> {
        let Some(dir) = self.run_dir.as_ref().filter(|_| self.resume) else {
            return Ok(None);
        };
        let path = dir.join(CHECKPOINT_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path)?;
        let cp: Checkpoint =
            serde_json::from_str(&text).map_err(|e| EvolveError::Checkpoint(format!("{}: {e}", path.display())))?;
        if cp.run_id != self.run_id {
            return Err(EvolveError::Checkpoint(format!(
                "checkpoint belongs to run {}, not {}",
                cp.run_id, self.run_id
            )));
        }
        if let Some(state) = &cp.provider {
            self.provider.restore(state)?;
        }
        Ok(Some(cp))
    }

    fn save(&self, cp: &Checkpoint) -> Result<(), EvolveError> {
        let Some(dir) = &self.run_dir else { return Ok(()) };
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(cp).expect("checkpoint serializes"))?;
        std::fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
        write_run_outputs(dir, &self.store.snapshot(), &self.run_id, &cp.best_series)?;
        Ok(())
    }

    pub fn run(&self, seeds: &[Program]) -> Result<EvolutionOutcome, EvolveError> {
        self.params.validate()?;
        if seeds.is_empty() {
            return Err(EvolveError::NoSeeds);
        }
        let mut cp = match self.load_checkpoint()? {
            Some(cp) => cp,
            None => {
                let cp = self.initialize(seeds)?;
                self.save(&cp)?;
                cp
            }
        };
        let mut stopped = false;
        while cp.generation < self.params.generations {
            if self.stop_after.is_some_and(|s| cp.generation >= s) {
                stopped = true;
                break;
            }
            let g = cp.generation + 1;
            self.generation(g, &mut cp)?;
            self.save(&cp)?;
            log::info!("generation {g}: best {:.4}", cp.best_series.last().unwrap());
        }
        let snap = self.store.snapshot();
        let best = run_best(&snap, &self.run_id).expect("seeds are persisted");
        if !best.result.viable() && !stopped {
            let seed = snap.get(&format!("{}-seed1", self.run_id)).expect("seed persisted");
            return Err(EvolveError::BudgetExhaustedWithNoViable {
                seed: Box::new((**seed).clone()),
                summary: level_summary(&snap, &self.run_id),
            });
        }
        Ok(EvolutionOutcome {
            best: (*best).clone(),
            best_series: cp.best_series,
            generations_completed: cp.generation,
            stopped,
        })
    }
}

/// Run a search with default plumbing; see [`Evolver`] for options.
#[allow(clippy::too_many_arguments)]
pub fn run_evolution(
    seeds: &[Program],
    params: SearchParams,
    harness: &dyn EvalHarness,
    provider: &dyn AgentProvider,
    store: &Store,
    embedder: &dyn EmbeddingProvider,
    ctx: &AgentContext,
    run_id: &str,
) -> Result<EvolutionOutcome, EvolveError> {
    Evolver::new(run_id, params, harness, provider, store, embedder, ctx).run(seeds)
}

fn level_summary(index: &Index, run_id: &str) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut last_diag = None;
    for c in run_records(index, run_id) {
        *counts.entry(c.result.level_reached.as_str()).or_default() += 1;
        if !c.result.diagnostics.is_empty() {
            last_diag = Some(c.result.diagnostics.clone());
        }
    }
    let mut s: String = counts.iter().map(|(l, n)| format!("{l}: {n}\n")).collect();
    if let Some(d) = last_diag {
        s += &format!("last diagnostics:\n{d}\n");
    }
    s
}

#[derive(Serialize)]
struct ScoreLine<'a> {
    generation: u32,
    island: u32,
    id: &'a str,
    parent: Option<&'a str>,
    form: Option<MutationForm>,
    level: &'a str,
    score: f64,
}

/// Per-candidate score log in commit order, without timestamps.
pub fn score_log(index: &Index, run_id: &str) -> String {
    let mut s = String::new();
    for c in run_records(index, run_id) {
        let line = ScoreLine {
            generation: c.generation,
            island: c.island,
            id: &c.id,
            parent: c.parent_id.as_deref(),
            form: c.mutation_form,
            level: c.result.level_reached.as_str(),
            score: c.score(),
        };
        s += &serde_json::to_string(&line).expect("score line serializes");
        s.push('\n');
    }
    s
}

pub fn best_series_csv(series: &[f64]) -> String {
    let mut s = String::from("generation,best_score\n");
    for (g, b) in series.iter().enumerate() {
        let _ = writeln!(s, "{g},{b:.6}");
    }
    s
}

pub fn render_report(index: &Index, run_id: &str, series: &[f64]) -> String {
    let mut s = format!("run {run_id}\n\n");
    let _ = writeln!(s, "{:>4}  {:>10}  {:>6}  {:>6}  {:>6}", "gen", "best", "l3", "l2", "l1");
    for (g, b) in series.iter().enumerate() {
        let (mut l1, mut l2, mut l3) = (0, 0, 0);
        for c in run_records(index, run_id).filter(|c| c.generation == g as u32) {
            match c.result.level_reached {
                Level::L1Failed => l1 += 1,
                Level::L2Failed => l2 += 1,
                Level::L3Complete => l3 += 1,
            }
        }
        let _ = writeln!(s, "{g:>4}  {b:>10.4}  {l3:>6}  {l2:>6}  {l1:>6}");
    }
    let rejections = index.rejections().iter().filter(|r| r.run_id == run_id).count();
    let migrations = index.migrations().iter().filter(|m| m.run_id == run_id).count();
    let _ = writeln!(s, "\nnovelty rejections: {rejections}\nmigrations: {migrations}");
    if let Some(best) = run_best(index, run_id) {
        let _ = writeln!(
            s,
            "\nbest: {} (generation {}, island {}, score {:.4}, level {})",
            best.id,
            best.generation,
            best.island,
            best.score(),
            best.result.level_reached.as_str()
        );
        if let Some(ms) = best.result.best_ms {
            let _ = writeln!(s, "best latency: {ms:.3} ms");
        }
        s += &render_directive(&best.directive);
    }
    s
}

/// (Re)write the score log, best-score series, report and best program.
pub fn write_run_outputs(dir: &Path, index: &Index, run_id: &str, series: &[f64]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(SCORES_FILE), score_log(index, run_id))?;
    std::fs::write(dir.join(BEST_CSV), best_series_csv(series))?;
    std::fs::write(dir.join(REPORT_FILE), render_report(index, run_id, series))?;
    if let Some(best) = run_best(index, run_id) {
        std::fs::write(dir.join(BEST_PROGRAM), &best.source)?;
        std::fs::write(dir.join(BEST_DIRECTIVE), render_directive(&best.directive))?;
    }
    Ok(())
}
