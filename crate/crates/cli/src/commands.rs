use std::fmt;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use commfuse_core::agents::meta::batch_statistics;
use commfuse_core::analyzer::{analyze as analyze_source, graph_to_json, render_graph, AnalyzerError};
use commfuse_core::directive::{
    conservative_directive, contains_directive, parse_directive, render_directive, OptimizationDirective,
};
use commfuse_core::evolve::run::{render_report, write_run_outputs};
use commfuse_core::evolve::{digest, embedding_text, Checkpoint, EvolveError, Evolver, CHECKPOINT_FILE};
use commfuse_core::fastpath::{run_fastpath_with, FastpathConfig, FastpathError};
use commfuse_core::program::Program;
use commfuse_core::store::{EmbeddingProvider, HashEmbedder, MetaQuery, Store, LOG_FILE};

use crate::config::RunConfig;
use crate::{EvolveArgs, InspectArgs};

/// A pipeline stage ran and failed; everything else is configuration or
/// infrastructure.
#[derive(Debug)]
struct PipelineFailure(String);

impl fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PipelineFailure {}

fn failure(msg: impl Into<String>) -> anyhow::Error {
    PipelineFailure(msg.into()).into()
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<PipelineFailure>() || cause.is::<AnalyzerError>() {
            return 1;
        }
        if let Some(f) = cause.downcast_ref::<FastpathError>() {
            return match f {
                FastpathError::StageExhausted { .. }
                | FastpathError::NoCommunication
                | FastpathError::AnnotationInvalid(_) => 1,
                FastpathError::Analyzer(_) => 1,
                _ => 2,
            };
        }
        if let Some(EvolveError::BudgetExhaustedWithNoViable { .. } | EvolveError::MutationRejected(_)) =
            cause.downcast_ref::<EvolveError>()
        {
            return 1;
        }
    }
    2
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn analyze(source: &Path, json: Option<&Path>) -> Result<()> {
    let src = read(source)?;
    let graph = analyze_source(&src).with_context(|| format!("scanning {}", source.display()))?;
    print!("{}", render_graph(&graph));
    let out = match json {
        Some(p) => p.to_path_buf(),
        None => {
            let name = source
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "source".into());
            PathBuf::from(format!("{name}.graph.json"))
        }
    };
    write(&out, &graph_to_json(&graph))
}

pub fn fastpath(config: &Path, source: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let src = read(source)?;
    let out = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.run_dir().join("fastpath"));
    let harness = cfg.harness()?;
    let provider = cfg.provider()?;
    let ctx = cfg.agent_context()?;
    let mut fp = FastpathConfig {
        topology: cfg.harness.profile.topology.clone(),
        ..Default::default()
    };
    if let Some(cap) = cfg.fastpath.iteration_cap {
        fp.iteration_cap = cap;
    }
    match run_fastpath_with(&src, cfg.backend, &ctx, harness.as_ref(), provider.as_ref(), &fp) {
        Ok(seed) => {
            write(&out.join("seed.cu"), &seed.source)?;
            write(&out.join("seed_directive.yaml"), &render_directive(&seed.directive))?;
            write(&out.join("graph.json"), &graph_to_json(&seed.graph))?;
            write(
                &out.join("provenance.json"),
                &serde_json::to_string_pretty(&seed.provenance)?,
            )?;
            for s in &seed.provenance {
                println!("{}: converged in {} iteration(s)", s.stage, s.iterations.len());
            }
            println!(
                "{} evolve block(s); seed written to {}",
                seed.regions.len(),
                out.join("seed.cu").display()
            );
            Ok(())
        }
        Err(FastpathError::StageExhausted { stage, transcript }) => {
            let path = out.join("provenance.json");
            write(&path, &serde_json::to_string_pretty(&transcript)?)?;
            let last = transcript
                .last()
                .and_then(|s| s.iterations.last())
                .map(|i| i.diagnostics.clone())
                .unwrap_or_default();
            Err(failure(format!(
                "stage {stage} did not converge; transcript in {}\nlast diagnostics:\n{last}",
                path.display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

fn seed_directive(seed: &Path, explicit: Option<&Path>, src: &str, cfg: &RunConfig) -> Result<OptimizationDirective> {
    if let Some(p) = explicit {
        return parse_directive(&read(p)?).with_context(|| format!("directive {}", p.display()));
    }
    let stem = seed
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let side = seed.with_file_name(format!("{stem}_directive.yaml"));
    if side.is_file() {
        return parse_directive(&read(&side)?).with_context(|| format!("directive {}", side.display()));
    }
    if contains_directive(src) {
        if let Ok(d) = parse_directive(src) {
            return Ok(d);
        }
    }
    Ok(conservative_directive(cfg.backend))
}

pub fn evolve(a: &EvolveArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(id) = &a.run_id {
        cfg.run_id = id.clone();
    }
    let run_dir = cfg.run_dir();
    let has_checkpoint = run_dir.join(CHECKPOINT_FILE).is_file();
    if a.resume && !has_checkpoint {
        bail!("--resume: no checkpoint in {}", run_dir.display());
    }
    let seed_paths = if a.seeds.is_empty() {
        vec![run_dir.join("fastpath").join("seed.cu")]
    } else {
        a.seeds.clone()
    };
    let mut seeds = Vec::new();
    for p in &seed_paths {
        let src = read(p)?;
        let d = seed_directive(p, a.directive.as_deref(), &src, &cfg)?;
        seeds.push(Program::new(src, d));
    }
    let harness = cfg.harness()?;
    let provider = cfg.provider()?;
    let embedder = cfg.embedder();
    let ctx = cfg.agent_context()?;
    let store = Store::open(&cfg.store)?;
    let mut ev = Evolver::new(
        cfg.run_id.clone(),
        cfg.search.clone(),
        harness.as_ref(),
        provider.as_ref(),
        &store,
        embedder.as_ref(),
        &ctx,
    );
    ev.topology = cfg.harness.profile.topology.clone();
    ev.run_dir = Some(run_dir.clone());
    ev.stop_after = a.stop_after;
    ev.resume = has_checkpoint;
    match ev.run(&seeds) {
        Ok(out) => {
            if out.stopped {
                println!(
                    "stopped after generation {}; continue with --resume",
                    out.generations_completed
                );
            }
            println!(
                "best {} score {:.4} (generation {}); outputs in {}",
                out.best.id,
                out.best.score(),
                out.best.generation,
                run_dir.display()
            );
            Ok(())
        }
        Err(e @ EvolveError::BudgetExhaustedWithNoViable { .. }) => {
            Err(failure(format!("{e}\noutputs in {}", run_dir.display())))
        }
        Err(e) => Err(e.into()),
    }
}

fn parse_generations(s: &str) -> Result<RangeInclusive<u32>> {
    let bad = || anyhow!("--generations expects `a..b` or `a`, got `{s}`");
    match s.split_once("..") {
        Some((a, b)) => {
            let a: u32 = a.trim().parse().map_err(|_| bad())?;
            let b: u32 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            Ok(a..=b)
        }
        None => {
            let g: u32 = s.trim().parse().map_err(|_| bad())?;
            Ok(g..=g)
        }
    }
}

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let cfg = a.config.as_deref().map(RunConfig::load).transpose()?;
    let dir = match (&a.store, &cfg) {
        (Some(s), _) => s.clone(),
        (None, Some(c)) => c.store.clone(),
        (None, None) => bail!("pass --store or --config"),
    };
    if !dir.join(LOG_FILE).is_file() {
        bail!("no candidate store at {}", dir.display());
    }
    if a.rebuild_index {
        let st = Store::rebuild(&dir)?;
        println!(
            "rebuilt: {} events, {} records{}",
            st.events,
            st.records,
            if st.dropped_partial_line {
                ", dropped an interrupted final line"
            } else {
                ""
            }
        );
    }
    let store = Store::open(&dir)?;
    let snap = store.snapshot();

    if let Some(id) = &a.id {
        let rec = snap.get(id).ok_or_else(|| failure(format!("no record `{id}`")))?;
        let mut v = serde_json::to_value(&**rec)?;
        let dims = rec.embedding.len();
        v["embedding"] = serde_json::Value::String(format!("<{dims} dims>"));
        println!("{}", serde_json::to_string_pretty(&v)?);
        return Ok(());
    }

    if let Some(file) = &a.knn {
        let src = read(file)?;
        let backend = cfg
            .as_ref()
            .map(|c| c.backend)
            .unwrap_or(commfuse_core::directive::Backend::Gin);
        let directive = match &a.directive {
            Some(p) => parse_directive(&read(p)?)?,
            None if contains_directive(&src) => {
                parse_directive(&src).unwrap_or_else(|_| conservative_directive(backend))
            }
            None => conservative_directive(backend),
        };
        let embedder: Box<dyn EmbeddingProvider> = match &cfg {
            Some(c) => c.embedder(),
            None => Box::new(HashEmbedder::default()),
        };
        let q = embedder.embed(&embedding_text(&src, &directive))?;
        for (c, sim) in snap.knn(&q, a.k)? {
            println!("{}\t{sim:.4}\t{:.4}", c.id, c.score());
        }
        return Ok(());
    }

    let q = MetaQuery {
        generations: a.generations.as_deref().map(parse_generations).transpose()?,
        keyword: a.keyword.clone(),
        min_score: a.min_score,
        run_id: a.run_id.clone(),
    };
    let hits = snap.query_meta(&q);
    if a.digest {
        let d: Vec<_> = hits.iter().map(|c| digest(c)).collect();
        print!("{}", batch_statistics(&d));
        return Ok(());
    }
    for c in hits {
        println!(
            "{}\tgen {}\tisland {}\t{}\t{}\t{:.4}\t{}",
            c.id,
            c.generation,
            c.island,
            c.mutation_form.map(|f| f.as_str()).unwrap_or("seed"),
            c.result.level_reached.as_str(),
            c.score(),
            c.strategy
        );
    }
    Ok(())
}

pub fn report(config: &Path, run_id: Option<&str>) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(id) = run_id {
        cfg.run_id = id.to_string();
    }
    let dir = cfg.run_dir();
    let cp_path = dir.join(CHECKPOINT_FILE);
    let cp: Checkpoint =
        serde_json::from_str(&read(&cp_path)?).with_context(|| format!("parsing {}", cp_path.display()))?;
    let store = Store::open(&cfg.store)?;
    let snap = store.snapshot();
    write_run_outputs(&dir, &snap, &cfg.run_id, &cp.best_series)?;
    print!("{}", render_report(&snap, &cfg.run_id, &cp.best_series));
    Ok(())
}
