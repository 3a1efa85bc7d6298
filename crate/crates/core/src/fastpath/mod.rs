//! Correctness-first conversion of a host-driven program into a verified,
//! annotated device-initiated seed.

pub mod annotate;
pub mod stages;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentContext, AgentProvider, Feedback, ProviderError, RetryPolicy};
use crate::analyzer::{analyze, AnalyzerError, CommGraph};
use crate::cascade::{CascadeError, EvalHarness};
use crate::directive::{conservative_directive, Backend, OptimizationDirective};
use crate::program::{Program, Topology};

pub use annotate::{annotate_evolve_blocks, heuristic_regions, Annotation, FrozenRules};
pub use stages::{stage_a_setup, stage_b_replace};

pub const DEFAULT_ITERATION_CAP: usize = 6;
pub const FASTPATH_CHANNEL: &str = "fastpath";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StageKind {
    SetupA,
    CommB,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::SetupA => "SetupA",
            StageKind::CommB => "CommB",
        })
    }
}

/// One rewrite attempt inside a judge loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iteration {
    pub source: String,
    pub passed: bool,
    pub diagnostics: String,
    pub feedback: Option<Feedback>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformStage {
    pub stage: StageKind,
    pub iterations: Vec<Iteration>,
    pub converged: bool,
    pub iteration_cap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSeed {
    pub source: String,
    pub directive: OptimizationDirective,
    pub graph: CommGraph,
    pub provenance: Vec<TransformStage>,
    /// Wrapped line ranges of the unannotated source; mutated together as
    /// one candidate.
    pub regions: Vec<(usize, usize)>,
}

impl AnnotatedSeed {
    pub fn program(&self) -> Program {
        Program::new(self.source.clone(), self.directive.clone())
    }

    pub fn rewrite_iterations(&self) -> usize {
        self.provenance.iter().map(|s| s.iterations.len()).sum()
    }
}

#[derive(Debug, Error)]
pub enum FastpathError {
    #[error("source has no communication to convert")]
    NoCommunication,
    #[error("stage {stage} did not converge within {} iterations", transcript.last().map_or(0, |s| s.iteration_cap))]
    StageExhausted {
        stage: StageKind,
        transcript: Vec<TransformStage>,
    },
    #[error("evolve-block annotation invalid: {0}")]
    AnnotationInvalid(String),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
}

/// Knobs shared by the stages.
#[derive(Debug, Clone)]
pub struct FastpathConfig {
    pub iteration_cap: usize,
    pub topology: Topology,
    pub retry: RetryPolicy,
    pub frozen: FrozenRules,
}

impl Default for FastpathConfig {
    fn default() -> Self {
        Self {
            iteration_cap: DEFAULT_ITERATION_CAP,
            topology: Topology::default(),
            retry: RetryPolicy::default(),
            frozen: FrozenRules::default(),
        }
    }
}

pub fn run_fastpath(
    src: &str,
    backend: Backend,
    ctx: &AgentContext,
    harness: &dyn EvalHarness,
    provider: &dyn AgentProvider,
) -> Result<AnnotatedSeed, FastpathError> {
    run_fastpath_with(src, backend, ctx, harness, provider, &FastpathConfig::default())
}

pub fn run_fastpath_with(
    src: &str,
    backend: Backend,
    ctx: &AgentContext,
    harness: &dyn EvalHarness,
    provider: &dyn AgentProvider,
    cfg: &FastpathConfig,
) -> Result<AnnotatedSeed, FastpathError> {
    let graph = analyze(src)?;
    if graph.nodes.is_empty() {
        return Err(FastpathError::NoCommunication);
    }
    let directive = conservative_directive(backend);
    let (a, after_a) = stage_a_setup(src, &graph, backend, ctx, harness, provider, cfg)?;
    let mut provenance = vec![a];
    let (b, after_b) = match stage_b_replace(&after_a, &graph, &directive, ctx, harness, provider, cfg) {
        Ok(r) => r,
        Err(FastpathError::StageExhausted { stage, mut transcript }) => {
            provenance.append(&mut transcript);
            return Err(FastpathError::StageExhausted {
                stage,
                transcript: provenance,
            });
        }
        Err(e) => return Err(e),
    };
    provenance.push(b);
    let ann = annotate_evolve_blocks(&after_b, &graph, provider, cfg)?;
    Ok(AnnotatedSeed {
        source: ann.source,
        directive,
        graph,
        provenance,
        regions: ann.regions,
    })
}
