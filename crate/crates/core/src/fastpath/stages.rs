use std::collections::BTreeMap;

use super::{FastpathConfig, FastpathError, Iteration, StageKind, TransformStage, FASTPATH_CHANNEL};
use crate::agents::{complete_with_retry, judge, AgentContext, AgentProvider, FeedbackLevel, Request, Role};
use crate::analyzer::{analyze, render_graph, scan_source, CommGraph, ConstructKind};
use crate::cascade::{CompileOutcome, EvalHarness, HarnessError, RunOutcome};
use crate::directive::{conservative_directive, render_directive, Backend, OptimizationDirective};
use crate::evolve::mutate::fences;
use crate::program::Program;

/// First fenced block of a response, or the whole response.
pub fn extract_code(response: &str) -> String {
    fences(response)
        .into_iter()
        .map(|(_, body)| body)
        .next()
        .unwrap_or_else(|| response.to_string())
}

fn constructs_of(src: &str, kind: ConstructKind) -> Vec<String> {
    scan_source(src)
        .map(|cs| cs.into_iter().filter(|c| c.kind == kind).map(|c| c.name).collect())
        .unwrap_or_default()
}

fn host_collectives(src: &str) -> usize {
    scan_source(src)
        .map(|cs| {
            cs.iter()
                .filter(|c| matches!(c.kind, ConstructKind::CollectiveCall | ConstructKind::SendRecvCall))
                .count()
        })
        .unwrap_or(0)
}

fn counts(names: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for n in names {
        *m.entry(n.as_str()).or_insert(0) += 1;
    }
    m
}

/// Stage A must keep every host collective and leave no buffer needing
/// migration; with nothing flagged it must not touch allocations.
pub fn check_stage_a(before: &str, after: &str, graph: &CommGraph) -> Vec<String> {
    let mut out = Vec::new();
    let (hb, ha) = (host_collectives(before), host_collectives(after));
    if ha < hb {
        out.push(format!("[structure] stage A removed host collectives ({hb} -> {ha})"));
    }
    match analyze(after) {
        Ok(g) if g.migration_count() > 0 => out.push(format!(
            "[structure] {} buffers still need communication-compatible allocation",
            g.migration_count()
        )),
        Ok(_) => {}
        Err(e) => out.push(format!("[structure] {e}")),
    }
    if graph.migration_count() == 0
        && counts(&constructs_of(before, ConstructKind::Allocation))
            != counts(&constructs_of(after, ConstructKind::Allocation))
    {
        out.push("[structure] allocations changed although no buffer needed migration".into());
    }
    out
}

/// Stage B must remove every host collective, add no allocation call and
/// keep the relative order of the kernels it kept.
pub fn check_stage_b(before: &str, after: &str) -> Vec<String> {
    let mut out = Vec::new();
    let left = host_collectives(after);
    if left > 0 {
        out.push(format!("[structure] {left} host-driven collectives remain"));
    }
    let (alloc_b, alloc_a) = (
        constructs_of(before, ConstructKind::Allocation),
        constructs_of(after, ConstructKind::Allocation),
    );
    let (ab, aa) = (counts(&alloc_b), counts(&alloc_a));
    for (name, n) in &aa {
        if ab.get(name).copied().unwrap_or(0) < *n {
            out.push(format!("[structure] new allocation call `{name}`"));
        }
    }
    let kb = constructs_of(before, ConstructKind::KernelLaunch);
    let ka = constructs_of(after, ConstructKind::KernelLaunch);
    let kept_b: Vec<&String> = kb.iter().filter(|k| ka.contains(k)).collect();
    let kept_a: Vec<&String> = ka.iter().filter(|k| kb.contains(k)).collect();
    if kept_b != kept_a {
        out.push("[structure] compute kernel launch order changed".into());
    }
    out
}

enum Gate {
    Compile,
    CompileVerify,
}

struct Loop<'a> {
    stage: StageKind,
    role: Role,
    gate: Gate,
    directive: &'a OptimizationDirective,
    ctx: &'a AgentContext,
    harness: &'a dyn EvalHarness,
    provider: &'a dyn AgentProvider,
    cfg: &'a FastpathConfig,
}

fn unavailable(HarnessError::Unavailable(m): HarnessError) -> FastpathError {
    FastpathError::Cascade(crate::cascade::CascadeError::HarnessUnavailable(m))
}

impl Loop<'_> {
    /// Gate diagnostics; empty means passed.
    fn gate(&self, src: &str) -> Result<(String, FeedbackLevel), FastpathError> {
        let program = Program::new(src, self.directive.clone());
        let artifact = match self
            .harness
            .compile(&program)
            .or_else(|_| self.harness.compile(&program))
            .map_err(unavailable)?
        {
            CompileOutcome::Ok(a) => a,
            CompileOutcome::Failed(d) => return Ok((d, FeedbackLevel::Compile)),
        };
        if let Gate::CompileVerify = self.gate {
            let run = self
                .harness
                .run_verify(&artifact, &self.cfg.topology)
                .or_else(|_| self.harness.run_verify(&artifact, &self.cfg.topology))
                .map_err(unavailable)?;
            match run {
                RunOutcome::Passed => {}
                RunOutcome::Failed(d) => return Ok((d, FeedbackLevel::Verify)),
                RunOutcome::Timeout(d) => return Ok((format!("verify timeout: {d}"), FeedbackLevel::Verify)),
            }
        }
        Ok((String::new(), FeedbackLevel::Verify))
    }

    fn run(
        &self,
        base_prompt: &str,
        check: impl Fn(&str) -> Vec<String>,
    ) -> Result<(TransformStage, String), FastpathError> {
        let mut stage = TransformStage {
            stage: self.stage,
            iterations: Vec::new(),
            converged: false,
            iteration_cap: self.cfg.iteration_cap,
        };
        let mut prompt = base_prompt.to_string();
        for _ in 0..self.cfg.iteration_cap {
            let response = complete_with_retry(
                self.provider,
                &Request {
                    role: self.role,
                    channel: FASTPATH_CHANNEL,
                    prompt: &prompt,
                    temperature: 0.0,
                },
                self.cfg.retry,
            )?;
            let src = extract_code(&response);
            let (mut diag, level) = self.gate(&src)?;
            let structural = check(&src);
            if !structural.is_empty() {
                if !diag.is_empty() {
                    diag.push('\n');
                }
                diag += &structural.join("\n");
            }
            if diag.is_empty() {
                stage.iterations.push(Iteration {
                    source: src.clone(),
                    passed: true,
                    diagnostics: String::new(),
                    feedback: None,
                });
                stage.converged = true;
                return Ok((stage, src));
            }
            let fb = judge(
                &src,
                &diag,
                level,
                self.ctx,
                self.provider,
                FASTPATH_CHANNEL,
                self.cfg.retry,
            )
            .map_err(|e| log::warn!("judge failed: {e}"))
            .ok();
            prompt = format!("{base_prompt}\n\nYour previous attempt failed.\n```\n{src}```\nDiagnostics:\n{diag}\n");
            if let Some(f) = &fb {
                prompt += &format!("\nJudge feedback:\n{}", f.render());
            }
            stage.iterations.push(Iteration {
                source: src,
                passed: false,
                diagnostics: diag,
                feedback: fb,
            });
        }
        Err(FastpathError::StageExhausted {
            stage: self.stage,
            transcript: vec![stage],
        })
    }
}

fn stage_a_prompt(src: &str, graph: &CommGraph, backend: Backend, ctx: &AgentContext) -> String {
    let reqs = match backend {
        Backend::Gin => "a GIN context count, a GIN barrier count and a GIN signal count",
        Backend::Lsa => "an LSA barrier count",
    };
    let flagged: Vec<&str> = graph.nodes.iter().flat_map(|n| n.buffers_needing_migration()).collect();
    format!(
        "Stage A: prepare this program for device-initiated communication with the {backend} backend.\n\
         Re-allocate every flagged buffer with ncclMemAlloc and register it with ncclCommWindowRegister, \
         set device communicator requirements ({reqs}) and create the device communicator with ncclDevCommCreate.\n\
         Do not change any computation or any host collective call.\n\
         Flagged buffers: {}\n\nCommunication graph:\n{}\nProgram:\n```\n{src}```\n\n{}\nReply with the complete program in one fenced block.\n",
        if flagged.is_empty() { "none".to_string() } else { flagged.join(", ") },
        render_graph(graph),
        ctx.render()
    )
}

fn stage_b_prompt(src: &str, graph: &CommGraph, directive: &OptimizationDirective, ctx: &AgentContext) -> String {
    let pattern = match directive.backend {
        Backend::Gin => "device-side put operations followed by waitSignal and flush",
        Backend::Lsa => "direct peer stores through ncclGetLsaPointer inside an ncclLsaBarrierSession",
    };
    format!(
        "Stage B: replace every host-driven collective with its device-initiated equivalent ({pattern}).\n\
         Keep kernel launch order and allocations unchanged.\n\n{}\nCommunication graph:\n{}\nProgram:\n```\n{src}```\n\n{}\nReply with the complete program in one fenced block.\n",
        render_directive(directive),
        render_graph(graph),
        ctx.render()
    )
}

pub fn stage_a_setup(
    src: &str,
    graph: &CommGraph,
    backend: Backend,
    ctx: &AgentContext,
    harness: &dyn EvalHarness,
    provider: &dyn AgentProvider,
    cfg: &FastpathConfig,
) -> Result<(TransformStage, String), FastpathError> {
    let directive = conservative_directive(backend);
    let l = Loop {
        stage: StageKind::SetupA,
        role: Role::StageA,
        gate: Gate::Compile,
        directive: &directive,
        ctx,
        harness,
        provider,
        cfg,
    };
    l.run(&stage_a_prompt(src, graph, backend, ctx), |after| {
        check_stage_a(src, after, graph)
    })
}

pub fn stage_b_replace(
    src: &str,
    graph: &CommGraph,
    directive: &OptimizationDirective,
    ctx: &AgentContext,
    harness: &dyn EvalHarness,
    provider: &dyn AgentProvider,
    cfg: &FastpathConfig,
) -> Result<(TransformStage, String), FastpathError> {
    let l = Loop {
        stage: StageKind::CommB,
        role: Role::StageB,
        gate: Gate::CompileVerify,
        directive,
        ctx,
        harness,
        provider,
        cfg,
    };
    l.run(&stage_b_prompt(src, graph, directive, ctx), |after| {
        check_stage_b(src, after)
    })
}
