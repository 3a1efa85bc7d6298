//! Gated compile → verify → benchmark evaluation.

pub mod sim;
pub mod toolchain;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{cascade_feedback, AgentContext, AgentProvider, Feedback, FeedbackLevel, RetryPolicy};
use crate::directive::OptimizationDirective;
use crate::program::{Program, Topology};

pub use sim::{SimCostModel, SimHarness};
pub use toolchain::{ToolchainConfig, ToolchainHarness};

pub const DEFAULT_REPS: u32 = 3;

/// Output of a successful compile.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub source: String,
    pub directive: OptimizationDirective,
    pub binary: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CompileOutcome {
    Ok(Artifact),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Passed,
    Failed(String),
    Timeout(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BenchOutcome {
    Latencies(Vec<f64>),
    Failed(String),
    Timeout(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("evaluation harness unavailable: {0}")]
    Unavailable(String),
}

pub trait EvalHarness: Send + Sync {
    fn name(&self) -> &str;
    fn compile(&self, program: &Program) -> Result<CompileOutcome, HarnessError>;
    fn run_verify(&self, artifact: &Artifact, topology: &Topology) -> Result<RunOutcome, HarnessError>;
    fn run_benchmark(&self, artifact: &Artifact, topology: &Topology, reps: u32) -> Result<BenchOutcome, HarnessError>;
}

impl<H: EvalHarness + ?Sized> EvalHarness for Box<H> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn compile(&self, program: &Program) -> Result<CompileOutcome, HarnessError> {
        (**self).compile(program)
    }
    fn run_verify(&self, artifact: &Artifact, topology: &Topology) -> Result<RunOutcome, HarnessError> {
        (**self).run_verify(artifact, topology)
    }
    fn run_benchmark(&self, artifact: &Artifact, topology: &Topology, reps: u32) -> Result<BenchOutcome, HarnessError> {
        (**self).run_benchmark(artifact, topology, reps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    L1Failed,
    L2Failed,
    L3Complete,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::L1Failed => "l1_failed",
            Level::L2Failed => "l2_failed",
            Level::L3Complete => "l3_complete",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub level_reached: Level,
    pub diagnostics: String,
    pub latencies_ms: Option<Vec<f64>>,
    pub best_ms: Option<f64>,
    pub median_ms: Option<f64>,
    pub score: f64,
    pub feedback: Option<Feedback>,
}

impl CascadeResult {
    pub fn failed(level: Level, diagnostics: impl Into<String>) -> Self {
        debug_assert_ne!(level, Level::L3Complete);
        Self {
            level_reached: level,
            diagnostics: diagnostics.into(),
            latencies_ms: None,
            best_ms: None,
            median_ms: None,
            score: 0.0,
            feedback: None,
        }
    }

    /// `latencies` must be nonempty and nonnegative.
    pub fn complete(latencies: Vec<f64>) -> Result<Self, ScoreError> {
        let best = latencies.iter().copied().fold(f64::INFINITY, f64::min);
        let score = score_from_latency(best)?;
        Ok(Self {
            level_reached: Level::L3Complete,
            diagnostics: String::new(),
            median_ms: Some(median(&latencies)),
            best_ms: Some(best),
            latencies_ms: Some(latencies),
            score,
            feedback: None,
        })
    }

    pub fn viable(&self) -> bool {
        self.level_reached == Level::L3Complete
    }
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ScoreError {
    #[error("negative or non-finite latency {0} ms")]
    NegativeLatency(f64),
}

pub fn score_from_latency(t_ms: f64) -> Result<f64, ScoreError> {
    if t_ms.is_nan() || t_ms < 0.0 || t_ms.is_infinite() {
        return Err(ScoreError::NegativeLatency(t_ms));
    }
    Ok(10000.0 / (1.0 + t_ms))
}

/// Produces feedback for the level at which a cascade stopped.
pub trait FeedbackAgent: Sync {
    fn feedback(&self, source: &str, diagnostics: &str, level: FeedbackLevel, channel: &str) -> Option<Feedback>;
}

/// Feedback agent backed by a provider. Provider failures leave the
/// feedback absent and are logged.
pub struct ProviderFeedback<'a> {
    pub ctx: &'a AgentContext,
    pub provider: &'a dyn AgentProvider,
    pub retry: RetryPolicy,
}

impl FeedbackAgent for ProviderFeedback<'_> {
    fn feedback(&self, source: &str, diagnostics: &str, level: FeedbackLevel, channel: &str) -> Option<Feedback> {
        match cascade_feedback(source, diagnostics, level, self.ctx, self.provider, channel, self.retry) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("feedback agent failed: {e}");
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CascadeError {
    #[error("evaluation harness unavailable after retry: {0}")]
    HarnessUnavailable(String),
    #[error("repetition count must be at least 1")]
    InvalidReps,
}

fn with_retry<T>(mut f: impl FnMut() -> Result<T, HarnessError>) -> Result<T, CascadeError> {
    match f() {
        Ok(v) => Ok(v),
        Err(first) => {
            log::warn!("{first}; retrying once");
            f().map_err(|HarnessError::Unavailable(m)| CascadeError::HarnessUnavailable(m))
        }
    }
}

pub fn cascade_eval(
    program: &Program,
    harness: &dyn EvalHarness,
    topology: &Topology,
    reps: u32,
    feedback: Option<&dyn FeedbackAgent>,
    channel: &str,
) -> Result<CascadeResult, CascadeError> {
    if reps == 0 {
        return Err(CascadeError::InvalidReps);
    }
    let with_feedback = |mut r: CascadeResult, level: FeedbackLevel| {
        if let Some(agent) = feedback {
            r.feedback = agent.feedback(&program.source, &r.diagnostics, level, channel);
        }
        r
    };
    let artifact = match with_retry(|| harness.compile(program))? {
        CompileOutcome::Ok(a) => a,
        CompileOutcome::Failed(d) => {
            return Ok(with_feedback(
                CascadeResult::failed(Level::L1Failed, d),
                FeedbackLevel::Compile,
            ));
        }
    };
    match with_retry(|| harness.run_verify(&artifact, topology))? {
        RunOutcome::Passed => {}
        RunOutcome::Failed(d) => {
            return Ok(with_feedback(
                CascadeResult::failed(Level::L2Failed, d),
                FeedbackLevel::Verify,
            ));
        }
        RunOutcome::Timeout(d) => {
            return Ok(with_feedback(
                CascadeResult::failed(Level::L2Failed, format!("verify timeout: {d}")),
                FeedbackLevel::Verify,
            ));
        }
    }
    let result = match with_retry(|| harness.run_benchmark(&artifact, topology, reps))? {
        BenchOutcome::Latencies(l) if l.is_empty() => {
            CascadeResult::failed(Level::L2Failed, "benchmark produced no latency measurements")
        }
        BenchOutcome::Latencies(l) => match CascadeResult::complete(l) {
            Ok(r) => r,
            Err(e) => CascadeResult::failed(Level::L2Failed, format!("benchmark: {e}")),
        },
        BenchOutcome::Failed(d) => CascadeResult::failed(Level::L2Failed, format!("benchmark failed: {d}")),
        BenchOutcome::Timeout(d) => CascadeResult::failed(Level::L2Failed, format!("benchmark timeout: {d}")),
    };
    let level = if result.viable() {
        FeedbackLevel::Benchmark
    } else {
        FeedbackLevel::Verify
    };
    Ok(with_feedback(result, level))
}
